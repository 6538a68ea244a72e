#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nsrf/params.hpp"
#include "nsrf/synthscene.hpp"
#include "nsrf/volren.hpp"

namespace nsrf {

// Which objective terms participate. Target terms are always active for an
// enabled loss; the source flag additionally supervises the source views.
struct LossToggles {
  bool photometric = true;
  bool semantic = true;
  bool source_views = true;
};

struct TrainConfig {
  double lr = 5e-4;
  double lambda_sem = 0.04;  // weight on the semantic terms
  int rays_per_image = 1024;
  int steps = 2000;
  int checkpoint_every = 500;  // a checkpoint is always written after the last step
  int ray_group = 128;         // rays per backprop group (fixed, thread-count independent)
  int k_dim = 32;              // feature channels per source view
  int hidden = 128;            // field layer width
  int n_classes = 0;           // total classes incl. background; 0 = take from dataset
  uint64_t seed = 0;
  LossToggles toggles;
  RenderConfig render;
};

// Throws std::invalid_argument on out-of-range values; both losses disabled
// is rejected because the objective would be empty.
void validate(const TrainConfig& cfg);

// Full configuration echo (hyperparameters, toggles, render settings), as
// embedded in checkpoints and run outputs.
Json train_config_json(const TrainConfig& cfg);

// Inverse of train_config_json; every field must be present (the echo is
// machine-written). Throws ConfigError on missing or ill-typed keys.
TrainConfig train_config_from_json(const Json& j);

FieldDims field_dims(const TrainConfig& cfg);

// Fresh parameters for the encoder ("enc.") and the coarse/fine fields
// ("coarse.", "fine."), drawn from substreams of `rng`.
ParamStore init_train_params(const TrainConfig& cfg, Rng& rng);

// Mean over rays of -log(s_hat at the true class), probabilities clamped to
// [1e-8, 1]. labels index columns of s_hat (0 = background).
ad::Tensor semantic_loss(const ad::Tensor& s_hat, const std::vector<int64_t>& labels);

// Mean over rays of the squared L2 distance between rendered and reference
// color. target is [R x 3] and is treated as a constant.
ad::Tensor photometric_loss(const ad::Tensor& c_hat, const ad::Tensor& target);

// p_* are photometric terms, s_* semantic, _t on the target view and _s on
// the source views; all four are scalars. Disabled terms are dropped.
ad::Tensor total_loss(const ad::Tensor& p_t, const ad::Tensor& p_s, const ad::Tensor& s_t,
                      const ad::Tensor& s_s, const LossToggles& toggles, double lambda_sem);

// Raw per-term values (no lambda applied); total combines them with the
// toggles and lambda. Disabled terms stay 0.
struct LossBreakdown {
  double total = 0.0;
  double p_t = 0.0, p_s = 0.0, s_t = 0.0, s_s = 0.0;
};

// Bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8). Moments are kept
// per parameter under the parameter's name.
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;  // completed updates
  std::map<std::string, std::vector<double>> m, v;
};

// Zero moments for every parameter in the store.
void adam_init(AdamState& state, const ParamStore& params);

// One update over every parameter, applied in registration order. grads
// must hold a full-size gradient for each parameter; a non-finite entry is
// rejected (NumericError naming the parameter).
void adam_step(ParamStore& params, AdamState& state,
               const std::map<std::string, std::vector<double>>& grads, double lr);

// One optimization step on a (target, sources) pair: encode the sources,
// draw rays_per_image pixel rays on the target and on each source, render
// coarse+fine, and assemble the toggled objective. With want_grads the
// full parameter gradient is produced (feature maps backpropagated through
// the encoder). Ray pixels, sample placement, and all results depend only
// on (params, scene, pair, cfg, step_rng) -- never on thread count.
struct StepOutcome {
  LossBreakdown loss;
  std::map<std::string, std::vector<double>> grads;  // empty unless want_grads
};
StepOutcome train_step(const LoadedScene& scene, const LoadedPair& pair,
                       const ParamStore& params, const TrainConfig& cfg, const Rng& step_rng,
                       bool want_grads);

// Checkpoint file: "NSRF" magic, u32 version, u64 JSON header length, JSON
// header {step, config, tensors:[{name, shape}]} and the tensor payloads as
// little-endian doubles in header order. Parameters come first, then
// adam.m.<name> / adam.v.<name>. Written atomically (temp file + rename).
inline constexpr uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::string& path, const ParamStore& params, const AdamState& adam,
                     int64_t step, const Json& config_echo);

struct Checkpoint {
  uint32_t version = 0;
  int64_t step = 0;
  Json config;
  ParamStore params;
  AdamState adam;
};
Checkpoint load_checkpoint(const std::string& path);

// Append-only loss trace. The header line is written only when the file is
// created; resuming appends.
class TraceWriter {
 public:
  explicit TraceWriter(const std::string& path);
  void line(int64_t step, const LossBreakdown& loss);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Runs cfg.steps optimization steps over the train split (one uniformly
// chosen (scene, pair) per step), writing out_dir/trace.csv and
// out_dir/checkpoint.nsrf. resume_path restarts from a saved checkpoint and
// reproduces the continuation bit-identically. config_echo is embedded in
// checkpoints verbatim.
struct TrainResult {
  LossBreakdown last;
  int64_t steps_done = 0;
  std::string checkpoint_path;
  std::string trace_path;
};
// on_step, when set, is called after each completed step with the 1-based
// step index and its losses (observation only, no effect on the run).
using StepObserver = std::function<void(int64_t step, const LossBreakdown& loss)>;
TrainResult train_loop(const Dataset& data, const TrainConfig& cfg, const std::string& out_dir,
                       const Json& config_echo, const std::string& resume_path = "",
                       const StepObserver& on_step = {});

}  // namespace nsrf
