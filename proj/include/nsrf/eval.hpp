#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsrf/synthscene.hpp"
#include "nsrf/train.hpp"

namespace nsrf {

// Square pixel-count table; rows index the ground-truth class, columns the
// prediction. Total count equals the number of evaluated pixels.
struct ConfusionMatrix {
  int n_classes = 0;
  std::vector<int64_t> counts;  // n_classes * n_classes, row major

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int n)
      : n_classes(n), counts(static_cast<size_t>(n) * static_cast<size_t>(n), 0) {}

  int64_t& at(int gt, int pred) {
    return counts[static_cast<size_t>(gt) * static_cast<size_t>(n_classes) +
                  static_cast<size_t>(pred)];
  }
  int64_t at(int gt, int pred) const {
    return counts[static_cast<size_t>(gt) * static_cast<size_t>(n_classes) +
                  static_cast<size_t>(pred)];
  }
  int64_t total() const;
  // Cell-wise addition (exact, commutative), used to pool views.
  void merge(const ConfusionMatrix& other);
};

ConfusionMatrix confusion_matrix(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                                 int n_classes);

// Everything reported about one evaluation: semantic metrics from a pooled
// confusion matrix, depth metrics from pooled per-pixel sums, and the raw
// photometric mean squared error the run gate reads. Percentages in [0,100].
struct MetricsReport {
  double miou = 0.0;       // % mean per-class IoU over classes present in GT
  double iou_things = 0.0; // % IoU of all thing classes merged vs rest
  double iou_stuff = 0.0;  // % IoU of all stuff classes merged vs rest
  double fw_iou = 0.0;     // % per-class IoU weighted by GT pixel frequency
  double p_acc = 0.0;      // % correctly labelled pixels
  double m_acc = 0.0;      // % per-class pixel accuracy, averaged
  double l1 = 0.0;         // mean |pred - gt| depth, meters
  double rel = 0.0;        // mean |pred - gt| / gt
  double rel_things = 0.0; // rel over pixels whose GT label is a thing
  double rel_stuff = 0.0;  // rel over pixels whose GT label is stuff
  double delta_1 = 0.0;    // % pixels with max(pred/gt, gt/pred) <= 1.25
  double delta_2 = 0.0;    // % ... <= 1.25^2
  double delta_3 = 0.0;    // % ... <= 1.25^3
  int64_t pixels = 0;
  double photo_mse = -1.0;  // per-channel image MSE; -1 when not measured

  Json to_json() const;
  // Aligned text table, columns in the order the results tables use.
  std::string to_table() const;
};

// Fills the six semantic fields of a report from a pooled confusion matrix.
// Classes absent from the ground truth are excluded from the mIoU and mACC
// averages; the things/stuff merges use the registry's stuff flag and treat
// the background (class 0) as neither.
void semantic_metrics(const ConfusionMatrix& cm, const std::vector<ClassEntry>& registry,
                      MetricsReport& report);

// Running depth-error sums, poolable across views by addition in a fixed
// order. Thing/stuff membership comes from the pixel's ground-truth label;
// background pixels count toward the global metrics only.
struct DepthAccum {
  double abs_sum = 0.0, rel_sum = 0.0, rel_things_sum = 0.0, rel_stuff_sum = 0.0;
  int64_t n = 0, n_things = 0, n_stuff = 0;
  int64_t d1 = 0, d2 = 0, d3 = 0;

  void add(double pred, double gt, bool thing, bool stuff);
  void merge(const DepthAccum& other);
  // Writes the seven depth fields (pixel count is left to the caller).
  void finalize(MetricsReport& report) const;
};

// One-shot form over whole rasters; gt depths must be positive.
void depth_metrics(const std::vector<double>& pred, const std::vector<double>& gt,
                   const std::vector<uint8_t>& gt_labels, const std::vector<ClassEntry>& registry,
                   MetricsReport& report);

// Rendered target frame kept alongside the pooled report.
struct FrameRasters {
  std::string scene_id;
  int target = 0;  // view index inside the scene
  int width = 0, height = 0;
  std::vector<uint8_t> labels;  // argmax class per pixel
  std::vector<double> rgb;      // H*W*3
  std::vector<double> depth;    // H*W meters
};

struct EvalResult {
  MetricsReport report;
  std::vector<FrameRasters> frames;
};

// Substream base for evaluation-time sample placement, clear of the training
// streams (init 1..3, steps 1000+).
inline constexpr uint64_t kEvalRngStream = uint64_t{1} << 30;

// Rejects a checkpoint whose tensors are not exactly those a fresh model of
// this configuration would own (missing/extra names, shape drift).
void verify_checkpoint_tensors(const Checkpoint& ck, const TrainConfig& cfg);

// Full target frame from the fine pass: per-pixel argmax class, composited
// color, and composited depth. Rays are chunked internally; `rng` is forked
// per absolute pixel index, so neither chunking nor the thread count changes
// the bits.
FrameRasters render_frame(const Camera& camera, const std::vector<FeatureMap>& sources,
                          const ParamGetter& params, const FieldDims& dims,
                          const RenderConfig& rc, const Rng& rng);

// Renders the full target frame of every (sources, target) pair in the split
// with the checkpoint's fine network, takes the per-pixel argmax class and
// composited depth, and pools one confusion matrix and one depth accumulator
// across all frames. The checkpoint's stored config drives the model
// dimensions and must match its tensors.
EvalResult evaluate_run(const Checkpoint& ck, const std::vector<LoadedScene>& split,
                        const std::vector<ClassEntry>& registry);

}  // namespace nsrf
