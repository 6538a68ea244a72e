#include "nsrf/train.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <utility>

#include "nsrf/check.hpp"
#include "nsrf/parallel.hpp"

namespace fs = std::filesystem;

namespace nsrf {
namespace {

constexpr const char* kEncPrefix = "enc";
constexpr const char* kCoarsePrefix = "coarse";
constexpr const char* kFinePrefix = "fine";

bool is_encoder_param(const std::string& name) { return name.rfind("enc.", 0) == 0; }

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as little-endian doubles");

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f, const std::string& path, const char* what) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError(fmt::format("{}: truncated checkpoint while reading {}", path, what));
  return v;
}

}  // namespace

void validate(const TrainConfig& cfg) {
  NSRF_CHECK(cfg.lr > 0.0, "learning rate must be positive, got {}", cfg.lr);
  NSRF_CHECK(cfg.lambda_sem >= 0.0, "semantic weight must be nonnegative, got {}",
             cfg.lambda_sem);
  NSRF_CHECK(cfg.rays_per_image >= 1, "rays_per_image must be >= 1, got {}", cfg.rays_per_image);
  NSRF_CHECK(cfg.steps >= 0, "step count must be nonnegative, got {}", cfg.steps);
  NSRF_CHECK(cfg.checkpoint_every >= 1, "checkpoint_every must be >= 1, got {}",
             cfg.checkpoint_every);
  NSRF_CHECK(cfg.ray_group >= 1, "ray_group must be >= 1, got {}", cfg.ray_group);
  NSRF_CHECK(cfg.k_dim >= 1, "feature dimension must be >= 1, got {}", cfg.k_dim);
  NSRF_CHECK(cfg.hidden >= 1, "hidden width must be >= 1, got {}", cfg.hidden);
  NSRF_CHECK(cfg.n_classes == 0 || cfg.n_classes >= 2,
             "class count must be >= 2 (or 0 to take it from the dataset), got {}",
             cfg.n_classes);
  NSRF_CHECK(cfg.render.n_coarse >= 1, "need at least one coarse sample, got {}",
             cfg.render.n_coarse);
  NSRF_CHECK(cfg.render.n_fine >= 0, "fine sample count must be nonnegative, got {}",
             cfg.render.n_fine);
  NSRF_CHECK(0.0 < cfg.render.t_near && cfg.render.t_near < cfg.render.t_far,
             "need 0 < t_near < t_far, got [{}, {}]", cfg.render.t_near, cfg.render.t_far);
  NSRF_CHECK(cfg.render.pe_octaves >= 1, "positional encoding needs >= 1 octave, got {}",
             cfg.render.pe_octaves);
  NSRF_CHECK(cfg.toggles.photometric || cfg.toggles.semantic,
             "at least one of the photometric and semantic losses must be enabled");
}

Json train_config_json(const TrainConfig& cfg) {
  return Json{{"lr", cfg.lr},
              {"lambda_sem", cfg.lambda_sem},
              {"rays_per_image", cfg.rays_per_image},
              {"steps", cfg.steps},
              {"checkpoint_every", cfg.checkpoint_every},
              {"ray_group", cfg.ray_group},
              {"k_dim", cfg.k_dim},
              {"hidden", cfg.hidden},
              {"n_classes", cfg.n_classes},
              {"seed", cfg.seed},
              {"photometric_loss", cfg.toggles.photometric},
              {"semantic_loss", cfg.toggles.semantic},
              {"source_view_loss", cfg.toggles.source_views},
              {"use_viewdir", cfg.render.use_viewdir},
              {"depth_residual", cfg.render.depth_residual},
              {"t_near", cfg.render.t_near},
              {"t_far", cfg.render.t_far},
              {"n_coarse", cfg.render.n_coarse},
              {"n_fine", cfg.render.n_fine},
              {"pe_octaves", cfg.render.pe_octaves}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig cfg;
  try {
    cfg.lr = j.at("lr").get<double>();
    cfg.lambda_sem = j.at("lambda_sem").get<double>();
    cfg.rays_per_image = j.at("rays_per_image").get<int>();
    cfg.steps = j.at("steps").get<int64_t>();
    cfg.checkpoint_every = j.at("checkpoint_every").get<int64_t>();
    cfg.ray_group = j.at("ray_group").get<int>();
    cfg.k_dim = j.at("k_dim").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.n_classes = j.at("n_classes").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.toggles.photometric = j.at("photometric_loss").get<bool>();
    cfg.toggles.semantic = j.at("semantic_loss").get<bool>();
    cfg.toggles.source_views = j.at("source_view_loss").get<bool>();
    cfg.render.use_viewdir = j.at("use_viewdir").get<bool>();
    cfg.render.depth_residual = j.at("depth_residual").get<bool>();
    cfg.render.t_near = j.at("t_near").get<double>();
    cfg.render.t_far = j.at("t_far").get<double>();
    cfg.render.n_coarse = j.at("n_coarse").get<int>();
    cfg.render.n_fine = j.at("n_fine").get<int>();
    cfg.render.pe_octaves = j.at("pe_octaves").get<int>();
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("training config echo: {}", e.what()));
  }
  return cfg;
}

FieldDims field_dims(const TrainConfig& cfg) {
  NSRF_CHECK(cfg.n_classes >= 2, "field needs an explicit class count, got {}", cfg.n_classes);
  FieldDims dims;
  dims.gamma_dim = cfg.render.gamma_dim();
  dims.feat_dim = cfg.k_dim;
  dims.hidden = cfg.hidden;
  dims.n_fg_classes = cfg.n_classes - 1;
  return dims;
}

ParamStore init_train_params(const TrainConfig& cfg, Rng& rng) {
  ParamStore store;
  Rng enc_rng = rng.fork(1);
  Rng coarse_rng = rng.fork(2);
  Rng fine_rng = rng.fork(3);
  init_encoder_params(store, kEncPrefix, cfg.k_dim, enc_rng);
  const FieldDims dims = field_dims(cfg);
  init_field_params(store, kCoarsePrefix, dims, coarse_rng);
  init_field_params(store, kFinePrefix, dims, fine_rng);
  return store;
}

ad::Tensor semantic_loss(const ad::Tensor& s_hat, const std::vector<int64_t>& labels) {
  NSRF_CHECK(s_hat.rank() == 2, "class probabilities must be rank 2, got {}",
             ad::shape_str(s_hat.shape()));
  NSRF_CHECK(static_cast<int64_t>(labels.size()) == s_hat.dim(0), "{} labels for {} rays",
             labels.size(), s_hat.dim(0));
  const ad::Tensor picked = ad::row_gather(s_hat, labels);
  return ad::scale(ad::sum(ad::neg(ad::log(ad::clamp(picked, 1e-8, 1.0)))),
                   1.0 / static_cast<double>(labels.size()));
}

ad::Tensor photometric_loss(const ad::Tensor& c_hat, const ad::Tensor& target) {
  NSRF_CHECK(c_hat.rank() == 2 && c_hat.dim(1) == 3, "rendered colors must be [R x 3], got {}",
             ad::shape_str(c_hat.shape()));
  NSRF_CHECK(ad::same_shape(c_hat.shape(), target.shape()),
             "color shapes differ: {} vs {}", ad::shape_str(c_hat.shape()),
             ad::shape_str(target.shape()));
  const ad::Tensor d = ad::sub(c_hat, target);
  return ad::scale(ad::sum(ad::mul(d, d)), 1.0 / static_cast<double>(c_hat.dim(0)));
}

ad::Tensor total_loss(const ad::Tensor& p_t, const ad::Tensor& p_s, const ad::Tensor& s_t,
                      const ad::Tensor& s_s, const LossToggles& toggles, double lambda_sem) {
  NSRF_CHECK(toggles.photometric || toggles.semantic,
             "at least one of the photometric and semantic losses must be enabled");
  for (const ad::Tensor* t : {&p_t, &p_s, &s_t, &s_s})
    NSRF_CHECK(t->numel() == 1, "loss terms must be scalars, got {}", ad::shape_str(t->shape()));
  std::optional<ad::Tensor> acc;
  const auto include = [&acc](const ad::Tensor& term, double k) {
    const ad::Tensor scaled = k == 1.0 ? term : ad::scale(term, k);
    acc = acc ? ad::add(*acc, scaled) : scaled;
  };
  if (toggles.photometric) {
    include(p_t, 1.0);
    if (toggles.source_views) include(p_s, 1.0);
  }
  if (toggles.semantic) {
    include(s_t, lambda_sem);
    if (toggles.source_views) include(s_s, lambda_sem);
  }
  return *acc;
}

void adam_init(AdamState& state, const ParamStore& params) {
  state.t = 0;
  state.m.clear();
  state.v.clear();
  for (const std::string& name : params.names()) {
    const size_t n = static_cast<size_t>(params.at(name).numel());
    state.m[name].assign(n, 0.0);
    state.v[name].assign(n, 0.0);
  }
}

void adam_step(ParamStore& params, AdamState& state,
               const std::map<std::string, std::vector<double>>& grads, double lr) {
  NSRF_CHECK(lr > 0.0, "learning rate must be positive, got {}", lr);
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (const std::string& name : params.names()) {
    const auto it = grads.find(name);
    NSRF_CHECK(it != grads.end(), "missing gradient for parameter '{}'", name);
    const std::vector<double>& g = it->second;
    const ad::Tensor& theta = params.at(name);
    NSRF_CHECK(static_cast<int64_t>(g.size()) == theta.numel(),
               "gradient for '{}' has {} entries, parameter has {}", name, g.size(),
               theta.numel());
    for (double gi : g)
      if (!std::isfinite(gi))
        throw NumericError(fmt::format("non-finite gradient for parameter '{}'", name));
    std::vector<double>& m = state.m.at(name);
    std::vector<double>& v = state.v.at(name);
    std::vector<double> next = theta.values();
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      next[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    params.set(name, ad::Tensor(theta.shape(), std::move(next)));
  }
}

StepOutcome train_step(const LoadedScene& scene, const LoadedPair& pair,
                       const ParamStore& params, const TrainConfig& cfg, const Rng& step_rng,
                       bool want_grads) {
  validate(cfg);
  const FieldDims dims = field_dims(cfg);
  const int n_src = static_cast<int>(pair.sources.size());
  NSRF_CHECK(n_src >= 1, "pair has no source views");
  const int n_views_total = static_cast<int>(scene.views.size());
  NSRF_CHECK(pair.target >= 0 && pair.target < n_views_total, "target view {} out of range",
             pair.target);
  for (int s : pair.sources)
    NSRF_CHECK(s >= 0 && s < n_views_total, "source view {} out of range", s);
  NSRF_CHECK(pair.sources_noisy.empty() || pair.sources_noisy.size() == pair.sources.size(),
             "{} noisy cameras for {} sources", pair.sources_noisy.size(), pair.sources.size());
  const bool noisy = !pair.sources_noisy.empty();

  // Encoder forward for all source views on one tape; the maps are
  // backpropagated once at the end of the step from the summed adjoints.
  ad::Tape enc_tape;
  TapeBinding enc_bind(enc_tape, params);
  std::vector<FeatureMap> enc_maps;
  std::vector<ad::Tensor> map_values;  // detached copies for the group tapes
  std::vector<Camera> src_cams;        // pose the model believes (noisy when provided)
  enc_maps.reserve(static_cast<size_t>(n_src));
  for (int j = 0; j < n_src; ++j) {
    const GroundTruthView& view = scene.views[static_cast<size_t>(pair.sources[j])];
    const Camera& cam = noisy ? pair.sources_noisy[static_cast<size_t>(j)] : view.camera;
    const ad::Tensor image({view.camera.height, view.camera.width, 3}, view.rgb);
    enc_maps.push_back(encode_features(image, cam, getter(enc_bind), kEncPrefix));
    map_values.emplace_back(enc_maps.back().values.shape(), enc_maps.back().values.values());
    src_cams.push_back(cam);
  }

  // Pixel draws. View 0 is the target; sources follow in pair order. Rays
  // on a source use its believed pose so the supervision pixel and the ray
  // agree with what the model knows about that view.
  struct ViewData {
    std::vector<Ray> rays;
    std::vector<int64_t> labels;
    std::vector<double> colors;
  };
  const int rays_per_image = cfg.rays_per_image;
  const int n_views = 1 + n_src;
  std::vector<ViewData> views(static_cast<size_t>(n_views));
  for (int v = 0; v < n_views; ++v) {
    const GroundTruthView& gt = v == 0 ? scene.views[static_cast<size_t>(pair.target)]
                                       : scene.views[static_cast<size_t>(pair.sources[v - 1])];
    const Camera& cam = v == 0 ? gt.camera : src_cams[static_cast<size_t>(v - 1)];
    const int w = gt.camera.width, h = gt.camera.height;
    Rng prng = step_rng.fork(static_cast<uint64_t>(1 + v));
    ViewData& vd = views[static_cast<size_t>(v)];
    vd.rays.reserve(static_cast<size_t>(rays_per_image));
    vd.labels.reserve(static_cast<size_t>(rays_per_image));
    vd.colors.reserve(static_cast<size_t>(rays_per_image) * 3);
    for (int r = 0; r < rays_per_image; ++r) {
      const int px = static_cast<int>(prng.uniform_int(w));
      const int py = static_cast<int>(prng.uniform_int(h));
      const size_t pix = static_cast<size_t>(py) * static_cast<size_t>(w) +
                         static_cast<size_t>(px);
      vd.rays.push_back(generate_ray(cam, px + 0.5, py + 0.5));
      const int label = gt.labels[pix];
      NSRF_CHECK(label < cfg.n_classes, "label {} out of range for {} classes", label,
                 cfg.n_classes);
      vd.labels.push_back(label);
      for (int c = 0; c < 3; ++c) vd.colors.push_back(gt.rgb[pix * 3 + static_cast<size_t>(c)]);
    }
  }

  std::vector<std::string> field_names, enc_names;
  for (const std::string& name : params.names())
    (is_encoder_param(name) ? enc_names : field_names).push_back(name);

  std::vector<std::vector<double>> acc_field(field_names.size());
  if (want_grads)
    for (size_t i = 0; i < field_names.size(); ++i)
      acc_field[i].assign(static_cast<size_t>(params.at(field_names[i]).numel()), 0.0);
  std::vector<std::vector<double>> acc_map(static_cast<size_t>(n_src));
  if (want_grads)
    for (int j = 0; j < n_src; ++j)
      acc_map[static_cast<size_t>(j)].assign(
          static_cast<size_t>(map_values[static_cast<size_t>(j)].numel()), 0.0);

  struct GroupOut {
    double photo = 0.0, sem = 0.0;
    std::vector<std::vector<double>> field_grads;
    std::vector<std::vector<double>> map_grads;
  };

  double p_t_sum = 0.0, s_t_sum = 0.0, p_s_sum = 0.0, s_s_sum = 0.0;
  const int n_groups = (rays_per_image + cfg.ray_group - 1) / cfg.ray_group;

  for (int v = 0; v < n_views; ++v) {
    const bool is_target = v == 0;
    if (!is_target && !cfg.toggles.source_views) break;  // sources are unsupervised
    const ViewData& vd = views[static_cast<size_t>(v)];
    const Rng render_rng = step_rng.fork(static_cast<uint64_t>(100 + v));
    std::vector<GroupOut> outs(static_cast<size_t>(n_groups));

    // Groups are a fixed partition of the view's rays; each group records
    // its own tape, so results are independent of the thread count.
    parallel_chunks(n_groups, [&](int64_t g) {
      const int begin = static_cast<int>(g) * cfg.ray_group;
      const int end = std::min(rays_per_image, begin + cfg.ray_group);
      const int n = end - begin;
      GroupOut& out = outs[static_cast<size_t>(g)];

      ad::Tape tape;
      TapeBinding bind(tape, params);
      std::vector<FeatureMap> fms;
      fms.reserve(static_cast<size_t>(n_src));
      for (int j = 0; j < n_src; ++j) {
        const size_t ji = static_cast<size_t>(j);
        fms.push_back(FeatureMap{tape.leaf(map_values[ji]), enc_maps[ji].width,
                                 enc_maps[ji].height, src_cams[ji]});
      }

      const std::vector<Ray> rays(vd.rays.begin() + begin, vd.rays.begin() + end);
      const RenderResult rr = render_rays(rays, fms, getter(bind), kCoarsePrefix, kFinePrefix,
                                          dims, cfg.render, render_rng, begin);

      std::optional<ad::Tensor> photo, sem;
      if (cfg.toggles.photometric) {
        const ad::Tensor ctgt({n, 3}, std::vector<double>(vd.colors.begin() + 3 * begin,
                                                          vd.colors.begin() + 3 * end));
        const auto pass = [&](const RenderedBatch& b) {
          const ad::Tensor d = ad::sub(b.c_hat, ctgt);
          return ad::sum(ad::mul(d, d));
        };
        photo = ad::add(pass(rr.coarse), pass(rr.fine));
        out.photo = photo->value();
      }
      if (cfg.toggles.semantic) {
        const std::vector<int64_t> labels(vd.labels.begin() + begin, vd.labels.begin() + end);
        const auto pass = [&](const RenderedBatch& b) {
          return ad::sum(
              ad::neg(ad::log(ad::clamp(ad::row_gather(b.s_hat, labels), 1e-8, 1.0))));
        };
        sem = ad::add(pass(rr.coarse), pass(rr.fine));
        out.sem = sem->value();
      }

      if (want_grads) {
        const double mean_k =
            1.0 / (static_cast<double>(rays_per_image) * (is_target ? 1.0 : n_src));
        std::optional<ad::Tensor> obj;
        if (photo) obj = ad::scale(*photo, mean_k);
        if (sem) {
          const ad::Tensor t2 = ad::scale(*sem, cfg.lambda_sem * mean_k);
          obj = obj ? ad::add(*obj, t2) : t2;
        }
        const ad::GradMap gm = tape.backprop(*obj);
        out.field_grads.reserve(field_names.size());
        for (const std::string& name : field_names)
          out.field_grads.push_back(gm.at(bind.at(name)).values());
        out.map_grads.reserve(static_cast<size_t>(n_src));
        for (int j = 0; j < n_src; ++j)
          out.map_grads.push_back(gm.at(fms[static_cast<size_t>(j)].values).values());
      }
    });

    // Fold in group order so sums never depend on scheduling.
    for (const GroupOut& out : outs) {
      (is_target ? p_t_sum : p_s_sum) += out.photo;
      (is_target ? s_t_sum : s_s_sum) += out.sem;
      if (!want_grads) continue;
      for (size_t i = 0; i < field_names.size(); ++i)
        for (size_t k = 0; k < acc_field[i].size(); ++k)
          acc_field[i][k] += out.field_grads[i][k];
      for (int j = 0; j < n_src; ++j) {
        const size_t ji = static_cast<size_t>(j);
        for (size_t k = 0; k < acc_map[ji].size(); ++k)
          acc_map[ji][k] += out.map_grads[ji][k];
      }
    }
  }

  StepOutcome result;
  const double rs = static_cast<double>(rays_per_image);
  result.loss.p_t = p_t_sum / rs;
  result.loss.s_t = s_t_sum / rs;
  result.loss.p_s = p_s_sum / (rs * n_src);
  result.loss.s_s = s_s_sum / (rs * n_src);
  double total = 0.0;
  if (cfg.toggles.photometric) total += result.loss.p_t + result.loss.p_s;
  if (cfg.toggles.semantic) total += cfg.lambda_sem * (result.loss.s_t + result.loss.s_s);
  result.loss.total = total;

  if (want_grads) {
    std::vector<std::pair<ad::Tensor, ad::Tensor>> seeds;
    seeds.reserve(static_cast<size_t>(n_src));
    for (int j = 0; j < n_src; ++j) {
      const size_t ji = static_cast<size_t>(j);
      seeds.emplace_back(enc_maps[ji].values,
                         ad::Tensor(map_values[ji].shape(), std::move(acc_map[ji])));
    }
    const ad::GradMap egm = enc_tape.backprop_seeded(seeds);
    for (const std::string& name : enc_names)
      result.grads[name] = egm.at(enc_bind.at(name)).values();
    for (size_t i = 0; i < field_names.size(); ++i)
      result.grads[field_names[i]] = std::move(acc_field[i]);
  }
  return result;
}

void save_checkpoint(const std::string& path, const ParamStore& params, const AdamState& adam,
                     int64_t step, const Json& config_echo) {
  Json tensors = Json::array();
  std::vector<const std::vector<double>*> payload;
  const auto push = [&](const std::string& name, const ad::Tensor& t) {
    tensors.push_back(Json{{"name", name}, {"shape", t.shape()}});
    payload.push_back(&t.values());
  };
  std::vector<std::pair<std::string, ad::Tensor>> moments;  // keep alive until written
  for (const std::string& name : params.names()) push(name, params.at(name));
  for (const std::string& name : params.names()) {
    const auto mi = adam.m.find(name);
    const auto vi = adam.v.find(name);
    NSRF_CHECK(mi != adam.m.end() && vi != adam.v.end(),
               "optimizer state missing for parameter '{}'", name);
    const ad::Shape& shape = params.at(name).shape();
    moments.emplace_back("adam.m." + name, ad::Tensor(shape, mi->second));
    moments.emplace_back("adam.v." + name, ad::Tensor(shape, vi->second));
  }
  for (const auto& [name, tensor] : moments) push(name, tensor);

  const Json header{{"step", step}, {"config", config_echo}, {"tensors", tensors}};
  const std::string header_str = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot open '{}' for writing", tmp));
    f.write("NSRF", 4);
    write_pod<uint32_t>(f, kCheckpointVersion);
    write_pod<uint64_t>(f, header_str.size());
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const std::vector<double>* blob : payload)
      f.write(reinterpret_cast<const char*>(blob->data()),
              static_cast<std::streamsize>(blob->size() * sizeof(double)));
    f.flush();
    if (!f) throw IoError(fmt::format("failed while writing '{}'", tmp));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError(fmt::format("cannot move '{}' into place: {}", tmp, ec.message()));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(fmt::format("cannot open checkpoint '{}'", path));
  char magic[4] = {};
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "NSRF", 4) != 0)
    throw IoError(fmt::format("{}: not a checkpoint (bad magic)", path));
  Checkpoint ck;
  ck.version = read_pod<uint32_t>(f, path, "version");
  if (ck.version != kCheckpointVersion)
    throw IoError(fmt::format("{}: unsupported checkpoint version {}", path, ck.version));
  const uint64_t header_len = read_pod<uint64_t>(f, path, "header length");
  NSRF_CHECK(header_len < (1ull << 30), "checkpoint header of {} bytes is implausible",
             header_len);
  std::string header_str(header_len, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!f) throw IoError(fmt::format("{}: truncated checkpoint header", path));
  Json header;
  try {
    header = Json::parse(header_str);
    ck.step = header.at("step").get<int64_t>();
    ck.config = header.at("config");
  } catch (const Json::exception& e) {
    throw IoError(fmt::format("{}: bad checkpoint header: {}", path, e.what()));
  }
  for (const Json& entry : header.at("tensors")) {
    std::string name;
    ad::Shape shape;
    try {
      name = entry.at("name").get<std::string>();
      shape = entry.at("shape").get<ad::Shape>();
    } catch (const Json::exception& e) {
      throw IoError(fmt::format("{}: bad tensor entry: {}", path, e.what()));
    }
    std::vector<double> data(static_cast<size_t>(ad::shape_numel(shape)));
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!f) throw IoError(fmt::format("{}: truncated payload for tensor '{}'", path, name));
    if (name.rfind("adam.m.", 0) == 0)
      ck.adam.m[name.substr(7)] = std::move(data);
    else if (name.rfind("adam.v.", 0) == 0)
      ck.adam.v[name.substr(7)] = std::move(data);
    else
      ck.params.add(name, ad::Tensor(std::move(shape), std::move(data)));
  }
  if (f.peek() != std::char_traits<char>::eof())
    throw IoError(fmt::format("{}: trailing bytes after checkpoint payload", path));
  for (const std::string& name : ck.params.names()) {
    const auto mi = ck.adam.m.find(name);
    const auto vi = ck.adam.v.find(name);
    if (mi == ck.adam.m.end() || vi == ck.adam.v.end() ||
        static_cast<int64_t>(mi->second.size()) != ck.params.at(name).numel() ||
        static_cast<int64_t>(vi->second.size()) != ck.params.at(name).numel())
      throw IoError(fmt::format("{}: optimizer state missing for parameter '{}'", path, name));
  }
  ck.adam.t = ck.step;
  return ck;
}

TraceWriter::TraceWriter(const std::string& path) : path_(path) {
  std::error_code ec;
  const bool fresh = !fs::exists(path_, ec) || fs::file_size(path_, ec) == 0;
  std::ofstream f(path_, std::ios::app);
  if (!f) throw IoError(fmt::format("cannot open trace '{}'", path_));
  if (fresh) f << "step,loss_total,loss_p_t,loss_p_s,loss_s_t,loss_s_s\n";
  if (!f.flush()) throw IoError(fmt::format("failed while writing trace '{}'", path_));
}

void TraceWriter::line(int64_t step, const LossBreakdown& loss) {
  std::ofstream f(path_, std::ios::app);
  if (!f) throw IoError(fmt::format("cannot open trace '{}'", path_));
  f << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", step, loss.total, loss.p_t,
                   loss.p_s, loss.s_t, loss.s_s);
  if (!f.flush()) throw IoError(fmt::format("failed while writing trace '{}'", path_));
}

TrainResult train_loop(const Dataset& data, const TrainConfig& cfg0, const std::string& out_dir,
                       const Json& config_echo, const std::string& resume_path,
                       const StepObserver& on_step) {
  TrainConfig cfg = cfg0;
  if (cfg.n_classes == 0) {
    NSRF_CHECK(data.manifest.contains("classes"),
               "dataset manifest lacks a class registry; set n_classes explicitly");
    cfg.n_classes = static_cast<int>(data.manifest.at("classes").size());
  }
  validate(cfg);
  NSRF_CHECK(cfg.n_classes >= 2, "need at least 2 classes, got {}", cfg.n_classes);

  std::vector<std::pair<int, int>> pool;  // (train scene, pair)
  for (size_t si = 0; si < data.train.size(); ++si)
    for (size_t pi = 0; pi < data.train[si].pairs.size(); ++pi)
      pool.emplace_back(static_cast<int>(si), static_cast<int>(pi));
  NSRF_CHECK(!pool.empty(), "training split has no usable (target, sources) pairs");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", out_dir, ec.message()));

  Rng master(cfg.seed);
  ParamStore params = init_train_params(cfg, master);
  AdamState adam;
  adam_init(adam, params);
  int64_t start = 0;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    NSRF_CHECK(ck.params.names().size() == params.names().size(),
               "checkpoint has {} tensors, model has {}", ck.params.names().size(),
               params.names().size());
    for (const std::string& name : params.names()) {
      NSRF_CHECK(ck.params.contains(name), "checkpoint lacks parameter '{}'", name);
      NSRF_CHECK(ad::same_shape(ck.params.at(name).shape(), params.at(name).shape()),
                 "checkpoint shape mismatch for '{}': {} vs {}", name,
                 ad::shape_str(ck.params.at(name).shape()),
                 ad::shape_str(params.at(name).shape()));
      params.set(name, ck.params.at(name));
    }
    adam.m = std::move(ck.adam.m);
    adam.v = std::move(ck.adam.v);
    adam.t = ck.step;
    start = ck.step;
  }

  TraceWriter trace((fs::path(out_dir) / "trace.csv").string());
  const std::string ck_path = (fs::path(out_dir) / "checkpoint.nsrf").string();
  TrainResult result;
  result.trace_path = trace.path();
  result.checkpoint_path = ck_path;

  for (int64_t step = start; step < cfg.steps; ++step) {
    const Rng srng = master.fork(1000 + static_cast<uint64_t>(step));
    Rng pick_rng = srng.fork(0);
    const auto [si, pi] = pool[static_cast<size_t>(
        pick_rng.uniform_int(static_cast<int64_t>(pool.size())))];
    const LoadedScene& scene = data.train[static_cast<size_t>(si)];
    const StepOutcome out =
        train_step(scene, scene.pairs[static_cast<size_t>(pi)], params, cfg, srng, true);
    if (!std::isfinite(out.loss.total))
      throw NumericError(fmt::format("non-finite training loss at step {}", step + 1));
    adam_step(params, adam, out.grads, cfg.lr);
    trace.line(step + 1, out.loss);
    if (on_step) on_step(step + 1, out.loss);
    result.last = out.loss;
    result.steps_done += 1;
    if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 != cfg.steps)
      save_checkpoint(ck_path, params, adam, step + 1, config_echo);
  }
  save_checkpoint(ck_path, params, adam, std::max<int64_t>(start, cfg.steps), config_echo);
  return result;
}

}  // namespace nsrf
