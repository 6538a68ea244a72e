#include "nsrf/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "nsrf/check.hpp"
#include "nsrf/encoder.hpp"
#include "nsrf/parallel.hpp"
#include "nsrf/volren.hpp"

namespace nsrf {
namespace {

constexpr int kEvalChunk = 128;  // rays rendered per work item

// Membership tables for the things/stuff splits; the background (class 0)
// belongs to neither group.
std::pair<std::vector<char>, std::vector<char>> group_masks(
    const std::vector<ClassEntry>& registry) {
  std::vector<char> thing(registry.size(), 0), stuff(registry.size(), 0);
  for (size_t c = 1; c < registry.size(); ++c) {
    thing[c] = registry[c].stuff ? 0 : 1;
    stuff[c] = registry[c].stuff ? 1 : 0;
  }
  return {std::move(thing), std::move(stuff)};
}

}  // namespace

int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), int64_t{0});
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  NSRF_CHECK(other.n_classes == n_classes, "cannot merge a {}-class matrix into a {}-class one",
             other.n_classes, n_classes);
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix confusion_matrix(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                                 int n_classes) {
  NSRF_CHECK(n_classes >= 1, "need at least one class, got {}", n_classes);
  NSRF_CHECK(pred.size() == gt.size(), "label rasters differ in size: {} vs {}", pred.size(),
             gt.size());
  ConfusionMatrix cm(n_classes);
  for (size_t i = 0; i < gt.size(); ++i) {
    NSRF_CHECK(gt[i] < n_classes, "ground-truth label {} out of range for {} classes", gt[i],
               n_classes);
    NSRF_CHECK(pred[i] < n_classes, "predicted label {} out of range for {} classes", pred[i],
               n_classes);
    cm.at(gt[i], pred[i]) += 1;
  }
  return cm;
}

void semantic_metrics(const ConfusionMatrix& cm, const std::vector<ClassEntry>& registry,
                      MetricsReport& report) {
  const int n = cm.n_classes;
  NSRF_CHECK(n >= 1, "confusion matrix has no classes");
  NSRF_CHECK(static_cast<int>(registry.size()) == n, "registry has {} classes, matrix has {}",
             registry.size(), n);
  const int64_t total = cm.total();
  NSRF_CHECK(total > 0, "confusion matrix counts no pixels");

  std::vector<int64_t> rows(static_cast<size_t>(n), 0), cols(static_cast<size_t>(n), 0);
  int64_t diag_total = 0;
  for (int g = 0; g < n; ++g)
    for (int p = 0; p < n; ++p) {
      const int64_t c = cm.at(g, p);
      rows[static_cast<size_t>(g)] += c;
      cols[static_cast<size_t>(p)] += c;
      if (g == p) diag_total += c;
    }

  // Per-class IoU and accuracy, averaged over classes the ground truth
  // contains; frequency weights are GT pixel shares, so they sum to one.
  double iou_sum = 0.0, acc_sum = 0.0, fw_sum = 0.0;
  int present = 0;
  for (int c = 0; c < n; ++c) {
    const int64_t row = rows[static_cast<size_t>(c)];
    if (row == 0) continue;
    const int64_t diag = cm.at(c, c);
    const int64_t uni = row + cols[static_cast<size_t>(c)] - diag;
    const double iou = static_cast<double>(diag) / static_cast<double>(uni);
    iou_sum += iou;
    acc_sum += static_cast<double>(diag) / static_cast<double>(row);
    fw_sum += static_cast<double>(row) / static_cast<double>(total) * iou;
    present += 1;
  }
  NSRF_CHECK(present > 0, "no class present in the ground truth");
  report.miou = 100.0 * iou_sum / present;
  report.m_acc = 100.0 * acc_sum / present;
  report.fw_iou = 100.0 * fw_sum;
  report.p_acc = 100.0 * static_cast<double>(diag_total) / static_cast<double>(total);

  // Binary merges: every class in the group becomes one super-class, the
  // rest (background included) the other. An empty union means the group is
  // absent and never predicted — vacuously perfect.
  const auto [thing, stuff] = group_masks(registry);
  const auto merged_iou = [&](const std::vector<char>& in) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (int g = 0; g < n; ++g)
      for (int p = 0; p < n; ++p) {
        const int64_t c = cm.at(g, p);
        const bool gi = in[static_cast<size_t>(g)] != 0;
        const bool pi = in[static_cast<size_t>(p)] != 0;
        if (gi && pi)
          tp += c;
        else if (pi)
          fp += c;
        else if (gi)
          fn += c;
      }
    const int64_t uni = tp + fp + fn;
    return uni == 0 ? 100.0 : 100.0 * static_cast<double>(tp) / static_cast<double>(uni);
  };
  report.iou_things = merged_iou(thing);
  report.iou_stuff = merged_iou(stuff);
}

void DepthAccum::add(double pred, double gt, bool thing, bool stuff) {
  NSRF_CHECK(gt > 0.0, "ground-truth depth must be positive, got {}", gt);
  const double err = std::abs(pred - gt);
  const double r = err / gt;
  abs_sum += err;
  rel_sum += r;
  n += 1;
  if (thing) {
    rel_things_sum += r;
    n_things += 1;
  }
  if (stuff) {
    rel_stuff_sum += r;
    n_stuff += 1;
  }
  const double ratio = pred > 0.0 ? std::max(pred / gt, gt / pred)
                                  : std::numeric_limits<double>::infinity();
  if (ratio <= 1.25) d1 += 1;
  if (ratio <= 1.25 * 1.25) d2 += 1;
  if (ratio <= 1.25 * 1.25 * 1.25) d3 += 1;
}

void DepthAccum::merge(const DepthAccum& other) {
  abs_sum += other.abs_sum;
  rel_sum += other.rel_sum;
  rel_things_sum += other.rel_things_sum;
  rel_stuff_sum += other.rel_stuff_sum;
  n += other.n;
  n_things += other.n_things;
  n_stuff += other.n_stuff;
  d1 += other.d1;
  d2 += other.d2;
  d3 += other.d3;
}

void DepthAccum::finalize(MetricsReport& report) const {
  NSRF_CHECK(n > 0, "no depth pixels accumulated");
  const double dn = static_cast<double>(n);
  report.l1 = abs_sum / dn;
  report.rel = rel_sum / dn;
  report.rel_things = n_things > 0 ? rel_things_sum / static_cast<double>(n_things) : 0.0;
  report.rel_stuff = n_stuff > 0 ? rel_stuff_sum / static_cast<double>(n_stuff) : 0.0;
  report.delta_1 = 100.0 * static_cast<double>(d1) / dn;
  report.delta_2 = 100.0 * static_cast<double>(d2) / dn;
  report.delta_3 = 100.0 * static_cast<double>(d3) / dn;
}

void depth_metrics(const std::vector<double>& pred, const std::vector<double>& gt,
                   const std::vector<uint8_t>& gt_labels, const std::vector<ClassEntry>& registry,
                   MetricsReport& report) {
  NSRF_CHECK(pred.size() == gt.size() && gt.size() == gt_labels.size(),
             "depth rasters and labels differ in size: {} / {} / {}", pred.size(), gt.size(),
             gt_labels.size());
  const auto [thing, stuff] = group_masks(registry);
  DepthAccum acc;
  for (size_t i = 0; i < gt.size(); ++i) {
    const uint8_t label = gt_labels[i];
    NSRF_CHECK(label < registry.size(), "label {} out of range for {} classes", label,
               registry.size());
    acc.add(pred[i], gt[i], thing[label] != 0, stuff[label] != 0);
  }
  acc.finalize(report);
  report.pixels = acc.n;
}

Json MetricsReport::to_json() const {
  return Json{
      {"miou", miou},
      {"iou_things", iou_things},
      {"iou_stuff", iou_stuff},
      {"fw_iou", fw_iou},
      {"p_acc", p_acc},
      {"m_acc", m_acc},
      {"l1", l1},
      {"rel", rel},
      {"rel_things", rel_things},
      {"rel_stuff", rel_stuff},
      {"delta_125", delta_1},
      {"delta_125_2", delta_2},
      {"delta_125_3", delta_3},
      {"pixels", pixels},
      {"photo_mse", photo_mse},
      {"notes",
       {"mIoU and mACC average over classes present in the ground truth",
        "mACC divides per-class hits by ground-truth row totals",
        "background (class 0) is excluded from rel_things and rel_stuff",
        "an empty things or stuff merge scores 100% (absent and never predicted)",
        "photo_mse is the per-channel mean squared error of the rendered color"}},
  };
}

std::string MetricsReport::to_table() const {
  std::string head, row;
  const auto col = [&](const char* name, double v) {
    head += fmt::format("{:>10}", name);
    row += fmt::format("{:>10.4f}", v);
  };
  col("mIoU", miou);
  col("IoU^T", iou_things);
  col("IoU^S", iou_stuff);
  col("fwIoU", fw_iou);
  col("pACC", p_acc);
  col("mACC", m_acc);
  col("L1", l1);
  col("Rel", rel);
  col("Rel^T", rel_things);
  col("Rel^S", rel_stuff);
  col("d<1.25", delta_1);
  col("d<1.25^2", delta_2);
  col("d<1.25^3", delta_3);
  head += fmt::format("{:>10}", "pixels");
  row += fmt::format("{:>10}", pixels);
  return head + "\n" + row + "\n";
}

FrameRasters render_frame(const Camera& camera, const std::vector<FeatureMap>& sources,
                          const ParamGetter& params, const FieldDims& dims,
                          const RenderConfig& rc, const Rng& rng) {
  const int w = camera.width, h = camera.height;
  const int64_t npix = static_cast<int64_t>(w) * h;
  std::vector<Ray> rays;
  rays.reserve(static_cast<size_t>(npix));
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) rays.push_back(generate_ray(camera, px + 0.5, py + 0.5));

  FrameRasters frame;
  frame.width = w;
  frame.height = h;
  frame.labels.assign(static_cast<size_t>(npix), 0);
  frame.rgb.assign(static_cast<size_t>(npix) * 3, 0.0);
  frame.depth.assign(static_cast<size_t>(npix), 0.0);

  const int64_t n_chunks = (npix + kEvalChunk - 1) / kEvalChunk;
  parallel_chunks(n_chunks, [&](int64_t ci) {
    const int64_t begin = ci * kEvalChunk;
    const int64_t end = std::min<int64_t>(npix, begin + kEvalChunk);
    const std::vector<Ray> chunk(rays.begin() + begin, rays.begin() + end);
    const RenderResult rr =
        render_rays(chunk, sources, params, "coarse", "fine", dims, rc, rng, begin);
    const int64_t rows = end - begin;
    const std::vector<double>& s = rr.fine.s_hat.values();
    const std::vector<double>& c = rr.fine.c_hat.values();
    const std::vector<double>& d = rr.fine.d_hat.values();
    const int64_t nc = rr.fine.s_hat.dim(1);
    for (int64_t r = 0; r < rows; ++r) {
      const double* srow = s.data() + r * nc;
      int best = 0;
      for (int64_t k = 1; k < nc; ++k)
        if (srow[k] > srow[best]) best = static_cast<int>(k);
      frame.labels[static_cast<size_t>(begin + r)] = static_cast<uint8_t>(best);
      for (int k = 0; k < 3; ++k)
        frame.rgb[static_cast<size_t>((begin + r) * 3 + k)] = c[static_cast<size_t>(r * 3 + k)];
      frame.depth[static_cast<size_t>(begin + r)] = d[static_cast<size_t>(r)];
    }
  });
  return frame;
}

void verify_checkpoint_tensors(const Checkpoint& ck, const TrainConfig& cfg) {
  Rng probe(0);
  const ParamStore expected = init_train_params(cfg, probe);
  NSRF_CHECK(ck.params.names().size() == expected.names().size(),
             "checkpoint has {} tensors, the configured model {}", ck.params.names().size(),
             expected.names().size());
  for (const std::string& name : expected.names()) {
    NSRF_CHECK(ck.params.contains(name), "checkpoint lacks parameter '{}'", name);
    NSRF_CHECK(ad::same_shape(ck.params.at(name).shape(), expected.at(name).shape()),
               "checkpoint shape mismatch for '{}': {} vs {}", name,
               ad::shape_str(ck.params.at(name).shape()),
               ad::shape_str(expected.at(name).shape()));
  }
}

EvalResult evaluate_run(const Checkpoint& ck, const std::vector<LoadedScene>& split,
                        const std::vector<ClassEntry>& registry) {
  TrainConfig cfg = train_config_from_json(ck.config);
  if (cfg.n_classes == 0) cfg.n_classes = static_cast<int>(registry.size());
  validate(cfg);
  NSRF_CHECK(static_cast<int>(registry.size()) == cfg.n_classes,
             "registry has {} classes but the checkpoint expects {}", registry.size(),
             cfg.n_classes);
  verify_checkpoint_tensors(ck, cfg);

  const FieldDims dims = field_dims(cfg);
  const ParamGetter params = getter(ck.params);
  const auto [thing, stuff] = group_masks(registry);

  EvalResult result;
  ConfusionMatrix cm(cfg.n_classes);
  DepthAccum depth;
  double photo_sq = 0.0;
  Rng eval_master(cfg.seed);
  uint64_t ordinal = 0;

  for (const LoadedScene& scene : split) {
    for (const LoadedPair& pair : scene.pairs) {
      const GroundTruthView& tgt = scene.views[static_cast<size_t>(pair.target)];
      const int w = tgt.camera.width, h = tgt.camera.height;
      const int64_t npix = static_cast<int64_t>(w) * h;

      // Feature maps from the believed source poses (the perturbed ones
      // when the dataset carries noise), matching the training protocol.
      std::vector<FeatureMap> fms;
      fms.reserve(pair.sources.size());
      for (size_t si = 0; si < pair.sources.size(); ++si) {
        const GroundTruthView& view = scene.views[static_cast<size_t>(pair.sources[si])];
        const Camera& cam = pair.sources_noisy.empty() ? view.camera : pair.sources_noisy[si];
        const ad::Tensor img({view.camera.height, view.camera.width, 3}, view.rgb);
        FeatureMap fm = encode_features(img, cam, params, "enc");
        fm.camera = cam;
        fms.push_back(std::move(fm));
      }

      FrameRasters frame = render_frame(tgt.camera, fms, params, dims, cfg.render,
                                        eval_master.fork(kEvalRngStream + ordinal));
      frame.scene_id = scene.id;
      frame.target = pair.target;

      // Pool in pixel order so the sums never depend on scheduling.
      for (int64_t i = 0; i < npix; ++i) {
        const uint8_t g = tgt.labels[static_cast<size_t>(i)];
        NSRF_CHECK(g < cfg.n_classes, "ground-truth label {} out of range for {} classes", g,
                   cfg.n_classes);
        cm.at(g, frame.labels[static_cast<size_t>(i)]) += 1;
        depth.add(frame.depth[static_cast<size_t>(i)], tgt.depth[static_cast<size_t>(i)],
                  thing[g] != 0, stuff[g] != 0);
        for (int k = 0; k < 3; ++k) {
          const double e = frame.rgb[static_cast<size_t>(i * 3 + k)] -
                           tgt.rgb[static_cast<size_t>(i * 3 + k)];
          photo_sq += e * e;
        }
      }
      result.frames.push_back(std::move(frame));
      ordinal += 1;
    }
  }

  NSRF_CHECK(!result.frames.empty(), "evaluation split has no (target, sources) pairs");
  semantic_metrics(cm, registry, result.report);
  depth.finalize(result.report);
  result.report.pixels = cm.total();
  result.report.photo_mse = photo_sq / (3.0 * static_cast<double>(cm.total()));
  return result;
}

}  // namespace nsrf
