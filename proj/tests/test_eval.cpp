#include "nsrf/eval.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "nsrf/check.hpp"
#include "nsrf/parallel.hpp"
#include "nsrf/rng.hpp"
#include "test_util.hpp"

using namespace nsrf;

namespace {

// Background + two stuff classes + two thing classes, matching the scene
// vocabulary the miniature worlds use.
std::vector<ClassEntry> tiny_registry() {
  return {
      {"background", false, {0, 0, 0}},   {"wall", true, {190, 190, 200}},
      {"floor", true, {120, 90, 60}},     {"ball", false, {205, 45, 45}},
      {"crate", false, {45, 95, 205}},
  };
}

// Reference mIoU straight from per-pixel index sets.
double brute_force_miou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                        int n_classes) {
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < n_classes; ++c) {
    int64_t inter = 0, uni = 0, in_gt = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
      const bool g = gt[i] == c, p = pred[i] == c;
      if (g) in_gt += 1;
      if (g && p) inter += 1;
      if (g || p) uni += 1;
    }
    if (in_gt == 0) continue;
    present += 1;
    sum += static_cast<double>(inter) / static_cast<double>(uni);
  }
  return 100.0 * sum / present;
}

// Miniature posed scene with one evaluation pair, mirroring the training
// tests' world but sized for full-frame renders.
struct EvalWorld {
  Scene scene;
  LoadedScene loaded;
  std::vector<ClassEntry> registry;
};

EvalWorld eval_world(int width, int height) {
  const Json spec{
      {"room", {{"min", {-3.0, -3.0, 0.0}}, {"max", {3.0, 3.0, 2.5}}}},
      {"classes",
       {
           {{"name", "background"}, {"stuff", false}, {"color", {0, 0, 0}}},
           {{"name", "wall"}, {"stuff", true}, {"color", {190, 190, 200}}},
           {{"name", "floor"}, {"stuff", true}, {"color", {120, 90, 60}}},
           {{"name", "ball"}, {"stuff", false}, {"color", {205, 45, 45}}},
           {{"name", "crate"}, {"stuff", false}, {"color", {45, 95, 205}}},
       }},
      {"shell",
       {{"thickness", 0.1}, {"wall_class", 1}, {"floor_class", 2}, {"ceiling_class", 1}}},
      {"primitives",
       {
           {{"kind", "sphere"}, {"center", {0.5, 0.2, 0.8}}, {"radius", 0.6}, {"class", 3}},
           {{"kind", "box"}, {"min", {-1.6, -1.3, 0.0}}, {"max", {-0.6, -0.3, 0.9}},
            {"class", 4}},
       }},
  };
  EvalWorld world;
  Rng build_rng(11);
  world.scene = build_scene(spec, build_rng);
  world.registry = world.scene.registry;

  Rng cam_rng(23);
  world.loaded.id = "scene_0";
  for (int k = 0; k < 3; ++k) {
    const Camera cam = sample_orbit_camera(spec.at("room"), k, 3, width, height, 60.0, cam_rng);
    world.loaded.views.push_back(oracle_render(world.scene, cam, 20.0));
  }
  LoadedPair pair;
  pair.target = 0;
  pair.sources = {1, 2};
  world.loaded.pairs.push_back(pair);
  return world;
}

TrainConfig eval_config(int n_classes) {
  TrainConfig cfg;
  cfg.k_dim = 4;
  cfg.hidden = 8;
  cfg.n_classes = n_classes;
  cfg.seed = 7;
  cfg.render.t_near = 0.5;
  cfg.render.t_far = 12.0;
  cfg.render.n_coarse = 8;
  cfg.render.n_fine = 8;
  cfg.render.pe_octaves = 3;
  return cfg;
}

Checkpoint make_checkpoint(const TrainConfig& cfg, bool zero_params) {
  Checkpoint ck;
  ck.version = kCheckpointVersion;
  ck.step = 0;
  ck.config = train_config_json(cfg);
  Rng rng(cfg.seed);
  ck.params = init_train_params(cfg, rng);
  if (zero_params)
    for (const std::string& name : ck.params.names()) {
      const ad::Tensor& t = ck.params.at(name);
      ck.params.set(name, ad::Tensor(t.shape(),
                                     std::vector<double>(static_cast<size_t>(t.numel()), 0.0)));
    }
  return ck;
}

}  // namespace

TEST_CASE("confusion matrix counts and rejects") {
  SUBCASE("perfect prediction is diagonal") {
    const std::vector<uint8_t> gt = {0, 1, 2, 1, 0, 2};
    const ConfusionMatrix cm = confusion_matrix(gt, gt, 3);
    CHECK(cm.total() == 6);
    for (int g = 0; g < 3; ++g)
      for (int p = 0; p < 3; ++p) {
        if (g != p) CHECK(cm.at(g, p) == 0);
      }
    CHECK(cm.at(0, 0) == 2);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.at(2, 2) == 2);
  }

  SUBCASE("hand-counted two-class case") {
    // Classes: A=1, B=2 in a 3-class registry with unused background 0.
    const std::vector<uint8_t> gt = {1, 1, 2, 2};
    const std::vector<uint8_t> pred = {1, 2, 2, 2};
    const ConfusionMatrix cm = confusion_matrix(pred, gt, 3);
    CHECK(cm.at(1, 1) == 1);
    CHECK(cm.at(1, 2) == 1);
    CHECK(cm.at(2, 2) == 2);
    CHECK(cm.total() == 4);
  }

  SUBCASE("empty raster gives an all-zero matrix") {
    const ConfusionMatrix cm = confusion_matrix({}, {}, 4);
    CHECK(cm.total() == 0);
    CHECK(cm.counts.size() == 16);
  }

  SUBCASE("extent mismatch and bad labels are rejected") {
    CHECK_THROWS_AS(confusion_matrix({0, 1}, {0}, 2), std::invalid_argument);
    CHECK_THROWS_AS(confusion_matrix({5}, {0}, 2), std::invalid_argument);
    CHECK_THROWS_AS(confusion_matrix({0}, {5}, 2), std::invalid_argument);
  }

  SUBCASE("merge adds cell-wise") {
    ConfusionMatrix a = confusion_matrix({0, 1}, {0, 0}, 2);
    const ConfusionMatrix b = confusion_matrix({1, 1}, {1, 0}, 2);
    a.merge(b);
    CHECK(a.total() == 4);
    CHECK(a.at(0, 0) == 1);
    CHECK(a.at(0, 1) == 2);
    CHECK(a.at(1, 1) == 1);
    ConfusionMatrix c(3);
    CHECK_THROWS_AS(a.merge(c), std::invalid_argument);
  }
}

TEST_CASE("semantic metrics closed forms") {
  const std::vector<ClassEntry> registry = tiny_registry();

  SUBCASE("perfect prediction scores 100 everywhere") {
    const std::vector<uint8_t> gt = {0, 1, 2, 3, 4, 2, 3, 1};
    const ConfusionMatrix cm = confusion_matrix(gt, gt, 5);
    MetricsReport rep;
    semantic_metrics(cm, registry, rep);
    CHECK(rep.miou == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(rep.iou_things == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(rep.iou_stuff == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(rep.fw_iou == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(rep.p_acc == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(rep.m_acc == doctest::Approx(100.0).epsilon(1e-12));
  }

  SUBCASE("hand-derived mixed case") {
    // gt [A,A,B,B], pred [A,B,B,B] with A=1 (stuff), B=3 (thing):
    // IoU(A) = 1/2, IoU(B) = 2/3, mIoU = 7/12, pACC = 3/4.
    const std::vector<uint8_t> gt = {1, 1, 3, 3};
    const std::vector<uint8_t> pred = {1, 3, 3, 3};
    const ConfusionMatrix cm = confusion_matrix(pred, gt, 5);
    MetricsReport rep;
    semantic_metrics(cm, registry, rep);
    CHECK(rep.miou == doctest::Approx(100.0 * 7.0 / 12.0).epsilon(1e-12));
    CHECK(rep.p_acc == doctest::Approx(75.0).epsilon(1e-12));
    // Weighted by GT frequency (1/2 each): (1/2)(1/2) + (1/2)(2/3) = 7/12.
    CHECK(rep.fw_iou == doctest::Approx(100.0 * 7.0 / 12.0).epsilon(1e-12));
    // mACC: class A hits 1 of 2, class B 2 of 2 -> (1/2 + 1) / 2 = 3/4.
    CHECK(rep.m_acc == doctest::Approx(75.0).epsilon(1e-12));
    // Things merge (B only here): TP 2, FP 1, FN 0 -> 2/3. Stuff (A): 1/2.
    CHECK(rep.iou_things == doctest::Approx(100.0 * 2.0 / 3.0).epsilon(1e-12));
    CHECK(rep.iou_stuff == doctest::Approx(50.0).epsilon(1e-12));
  }

  SUBCASE("classes absent from ground truth are excluded from averages") {
    // Only classes 1 and 2 appear in GT; 3 is predicted (false positives),
    // 4 never occurs. The mIoU average runs over {1, 2} alone.
    const std::vector<uint8_t> gt = {1, 1, 2, 2};
    const std::vector<uint8_t> pred = {1, 3, 2, 2};
    const ConfusionMatrix cm = confusion_matrix(pred, gt, 5);
    MetricsReport rep;
    semantic_metrics(cm, registry, rep);
    // IoU(1) = 1/2, IoU(2) = 1 -> mIoU = 3/4.
    CHECK(rep.miou == doctest::Approx(75.0).epsilon(1e-12));
    CHECK(rep.m_acc == doctest::Approx(75.0).epsilon(1e-12));
  }

  SUBCASE("empty confusion matrix is rejected") {
    ConfusionMatrix cm(5);
    MetricsReport rep;
    CHECK_THROWS_AS(semantic_metrics(cm, registry, rep), std::invalid_argument);
  }
}

TEST_CASE("semantic metrics match a brute-force per-pixel computation") {
  const std::vector<ClassEntry> registry = tiny_registry();
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<uint8_t> gt(16 * 16), pred(16 * 16);
    for (size_t i = 0; i < gt.size(); ++i) {
      gt[i] = static_cast<uint8_t>(rng.uniform_int(5));
      pred[i] = static_cast<uint8_t>(rng.uniform_int(5));
    }
    const ConfusionMatrix cm = confusion_matrix(pred, gt, 5);
    MetricsReport rep;
    semantic_metrics(cm, registry, rep);
    CHECK(rep.miou == doctest::Approx(brute_force_miou(pred, gt, 5)).epsilon(1e-12));
    // pACC is exactly trace/total.
    int64_t diag = 0;
    for (int c = 0; c < 5; ++c) diag += cm.at(c, c);
    CHECK(rep.p_acc == 100.0 * static_cast<double>(diag) / static_cast<double>(cm.total()));
    // fwIoU is a convex combination of present-class IoUs.
    double lo = 200.0, hi = -1.0;
    for (int c = 0; c < 5; ++c) {
      int64_t row = 0, col = 0;
      for (int k = 0; k < 5; ++k) {
        row += cm.at(c, k);
        col += cm.at(k, c);
      }
      if (row == 0) continue;
      const double iou =
          100.0 * static_cast<double>(cm.at(c, c)) / static_cast<double>(row + col - cm.at(c, c));
      lo = std::min(lo, iou);
      hi = std::max(hi, iou);
    }
    CHECK(rep.fw_iou >= lo - 1e-9);
    CHECK(rep.fw_iou <= hi + 1e-9);
  }
}

TEST_CASE("depth metrics closed forms") {
  const std::vector<ClassEntry> registry = tiny_registry();
  const std::vector<double> gt = {1.0, 2.0, 4.0, 8.0};
  const std::vector<uint8_t> labels = {0, 1, 3, 3};  // background, stuff, thing, thing

  SUBCASE("exact prediction") {
    MetricsReport rep;
    depth_metrics(gt, gt, labels, registry, rep);
    CHECK(rep.l1 == 0.0);
    CHECK(rep.rel == 0.0);
    CHECK(rep.delta_1 == 100.0);
    CHECK(rep.delta_2 == 100.0);
    CHECK(rep.delta_3 == 100.0);
    CHECK(rep.pixels == 4);
  }

  SUBCASE("uniform 1.3x overshoot") {
    std::vector<double> pred(gt);
    for (double& v : pred) v *= 1.3;
    MetricsReport rep;
    depth_metrics(pred, gt, labels, registry, rep);
    CHECK(rep.rel == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(rep.rel_things == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(rep.rel_stuff == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(rep.delta_1 == 0.0);  // 1.3 > 1.25
    CHECK(rep.delta_2 == 100.0);  // 1.3 < 1.5625
    CHECK(rep.delta_3 == 100.0);
  }

  SUBCASE("half exact, half doubled") {
    const std::vector<double> pred = {1.0, 2.0, 8.0, 16.0};
    MetricsReport rep;
    depth_metrics(pred, gt, labels, registry, rep);
    CHECK(rep.delta_1 == 50.0);
    CHECK(rep.delta_2 == 50.0);
    CHECK(rep.delta_3 == 50.0);  // ratio 2 > 1.25^3
    CHECK(rep.rel == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.l1 == doctest::Approx((4.0 + 8.0) / 4.0).epsilon(1e-12));
  }

  SUBCASE("scale awareness: rel(k*gt, gt) == |k - 1|") {
    for (const double k : {0.25, 0.5, 0.99, 1.0, 1.01, 1.7, 3.0}) {
      std::vector<double> pred(gt);
      for (double& v : pred) v *= k;
      MetricsReport rep;
      depth_metrics(pred, gt, labels, registry, rep);
      CHECK(rep.rel == doctest::Approx(std::abs(k - 1.0)).epsilon(1e-12));
    }
  }

  SUBCASE("background pixels are excluded from the split relatives") {
    // Only the background pixel is wrong: global rel moves, splits stay 0.
    std::vector<double> pred(gt);
    pred[0] = 2.0;
    MetricsReport rep;
    depth_metrics(pred, gt, labels, registry, rep);
    CHECK(rep.rel == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(rep.rel_things == 0.0);
    CHECK(rep.rel_stuff == 0.0);
  }

  SUBCASE("nonpositive ground truth is rejected") {
    MetricsReport rep;
    CHECK_THROWS_AS(depth_metrics({1.0}, {0.0}, {0}, registry, rep), std::invalid_argument);
    CHECK_THROWS_AS(depth_metrics({1.0}, {1.0, 2.0}, {0}, registry, rep),
                    std::invalid_argument);
  }
}

TEST_CASE("depth accumulators pool exactly") {
  const std::vector<ClassEntry> registry = tiny_registry();
  Rng rng(5);
  std::vector<double> gt(64), pred(64);
  std::vector<uint8_t> labels(64);
  for (size_t i = 0; i < gt.size(); ++i) {
    gt[i] = 0.5 + 10.0 * rng.uniform();
    pred[i] = 0.5 + 10.0 * rng.uniform();
    labels[i] = static_cast<uint8_t>(rng.uniform_int(5));
  }
  MetricsReport whole;
  depth_metrics(pred, gt, labels, registry, whole);

  // The same pixels in two halves, merged, agree with the serial pass: the
  // counts exactly, the sums to reassociation error.
  const auto [thing, stuff] = [&] {
    std::vector<char> t(5, 0), s(5, 0);
    for (size_t c = 1; c < 5; ++c) {
      t[c] = registry[c].stuff ? 0 : 1;
      s[c] = registry[c].stuff ? 1 : 0;
    }
    return std::make_pair(t, s);
  }();
  DepthAccum a, b;
  for (size_t i = 0; i < 32; ++i) a.add(pred[i], gt[i], thing[labels[i]], stuff[labels[i]]);
  for (size_t i = 32; i < 64; ++i) b.add(pred[i], gt[i], thing[labels[i]], stuff[labels[i]]);
  a.merge(b);
  MetricsReport merged;
  a.finalize(merged);
  CHECK(merged.l1 == doctest::Approx(whole.l1).epsilon(1e-12));
  CHECK(merged.rel == doctest::Approx(whole.rel).epsilon(1e-12));
  CHECK(merged.delta_1 == whole.delta_1);
  CHECK(merged.delta_2 == whole.delta_2);
  CHECK(merged.delta_3 == whole.delta_3);
}

TEST_CASE("oracle rasters evaluated against themselves are perfect") {
  const EvalWorld world = eval_world(16, 12);
  const GroundTruthView& view = world.loaded.views[0];
  const int n = static_cast<int>(world.registry.size());
  const ConfusionMatrix cm = confusion_matrix(view.labels, view.labels, n);
  MetricsReport rep;
  semantic_metrics(cm, world.registry, rep);
  depth_metrics(view.depth, view.depth, view.labels, world.registry, rep);
  CHECK(rep.miou == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(rep.p_acc == 100.0);
  CHECK(rep.m_acc == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(rep.l1 == 0.0);
  CHECK(rep.rel == 0.0);
  CHECK(rep.delta_1 == 100.0);
}

TEST_CASE("report serialization carries every field") {
  MetricsReport rep;
  rep.miou = 58.33;
  rep.pixels = 192;
  rep.photo_mse = 0.0125;
  const Json j = rep.to_json();
  for (const char* key : {"miou", "iou_things", "iou_stuff", "fw_iou", "p_acc", "m_acc", "l1",
                          "rel", "rel_things", "rel_stuff", "delta_125", "delta_125_2",
                          "delta_125_3", "pixels", "photo_mse", "notes"})
    CHECK(j.contains(key));
  const std::string table = rep.to_table();
  CHECK(table.find("mIoU") != std::string::npos);
  CHECK(table.find("IoU^T") != std::string::npos);
  CHECK(table.find("d<1.25^3") != std::string::npos);
  CHECK(table.find("58.33") != std::string::npos);
  // Exactly two lines: header and values.
  CHECK(std::count(table.begin(), table.end(), '\n') == 2);
}

TEST_CASE("evaluate_run renders a split and emits finite pooled metrics") {
  const EvalWorld world = eval_world(16, 12);
  TrainConfig cfg = eval_config(static_cast<int>(world.registry.size()));
  const Checkpoint ck = make_checkpoint(cfg, /*zero_params=*/true);

  const std::vector<LoadedScene> split = {world.loaded};
  const EvalResult res = evaluate_run(ck, split, world.registry);

  REQUIRE(res.frames.size() == 1);
  const FrameRasters& frame = res.frames[0];
  CHECK(frame.scene_id == "scene_0");
  CHECK(frame.target == 0);
  CHECK(frame.width == 16);
  CHECK(frame.height == 12);
  CHECK(frame.labels.size() == 16 * 12);
  CHECK(frame.rgb.size() == 16 * 12 * 3);
  CHECK(frame.depth.size() == 16 * 12);
  for (const uint8_t l : frame.labels) CHECK(l < world.registry.size());
  for (const double d : frame.depth) {
    CHECK(std::isfinite(d));
    CHECK(d > 0.0);
  }
  CHECK(res.report.pixels == 16 * 12);
  for (const double v : {res.report.miou, res.report.fw_iou, res.report.p_acc, res.report.m_acc,
                         res.report.l1, res.report.rel, res.report.delta_1, res.report.delta_2,
                         res.report.delta_3, res.report.photo_mse})
    CHECK(std::isfinite(v));
  CHECK(res.report.photo_mse >= 0.0);
  CHECK(res.report.miou >= 0.0);
  CHECK(res.report.miou <= 100.0);
}

TEST_CASE("evaluate_run is bitwise thread-invariant") {
  const EvalWorld world = eval_world(16, 12);
  TrainConfig cfg = eval_config(static_cast<int>(world.registry.size()));
  Checkpoint ck = make_checkpoint(cfg, /*zero_params=*/false);
  nsrf_test::jitter_store(ck.params, 31);
  const std::vector<LoadedScene> split = {world.loaded};

  set_num_threads(1);
  const EvalResult a = evaluate_run(ck, split, world.registry);
  set_num_threads(4);
  const EvalResult b = evaluate_run(ck, split, world.registry);
  set_num_threads(1);

  CHECK(a.report.to_json().dump() == b.report.to_json().dump());
  REQUIRE(a.frames.size() == b.frames.size());
  for (size_t f = 0; f < a.frames.size(); ++f) {
    CHECK(a.frames[f].labels == b.frames[f].labels);
    CHECK(a.frames[f].rgb == b.frames[f].rgb);
    CHECK(a.frames[f].depth == b.frames[f].depth);
  }
}

TEST_CASE("evaluate_run rejects a mismatched checkpoint") {
  const EvalWorld world = eval_world(16, 12);
  TrainConfig cfg = eval_config(static_cast<int>(world.registry.size()));
  const std::vector<LoadedScene> split = {world.loaded};

  // Wrong class count baked into the stored config.
  TrainConfig other = cfg;
  other.n_classes = 3;
  const Checkpoint wrong_classes = make_checkpoint(other, true);
  CHECK_THROWS_AS(evaluate_run(wrong_classes, split, world.registry), std::invalid_argument);

  // Config says one width, tensors were built with another.
  Checkpoint mismatched = make_checkpoint(cfg, true);
  TrainConfig wide = cfg;
  wide.hidden = 16;
  mismatched.config = train_config_json(wide);
  CHECK_THROWS_AS(evaluate_run(mismatched, split, world.registry), std::invalid_argument);
}
