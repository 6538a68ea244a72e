// Command-line surface: dataset synthesis, training, rendering, evaluation,
// and the loss-ablation sweep. Exit codes: 0 success, 1 completed sweep with
// failed rows, 2 configuration error, 3 I/O error, 4 numeric error.

#include <fmt/format.h>

#include <CLI11.hpp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nsrf/check.hpp"
#include "nsrf/config.hpp"
#include "nsrf/eval.hpp"
#include "nsrf/image_io.hpp"
#include "nsrf/parallel.hpp"
#include "nsrf/train.hpp"

namespace fs = std::filesystem;
using namespace nsrf;

namespace {

// ---------------------------------------------------------------------------
// Small file/format helpers.

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(fmt::format("cannot read '{}'", path));
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(fmt::format("cannot write '{}'", path));
  f << text;
  if (!f.flush()) throw IoError(fmt::format("failed while writing '{}'", path));
}

Json read_json_file(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("'{}' is not valid JSON: {}", path, e.what()));
  }
}

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string dataset_hash(const std::string& dataset_dir) {
  return fmt::format("{:016x}",
                     fnv1a64(read_file((fs::path(dataset_dir) / "manifest.json").string())));
}

std::vector<std::array<uint8_t, 3>> palette_from(const std::vector<ClassEntry>& registry) {
  std::vector<std::array<uint8_t, 3>> palette;
  palette.reserve(registry.size());
  for (const ClassEntry& c : registry) palette.push_back(c.color);
  return palette;
}

void make_dirs(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir, ec.message()));
}

// ---------------------------------------------------------------------------
// Config plumbing shared by the commands.

std::string require_out(const RunConfig& cfg) {
  if (cfg.out.empty())
    throw ConfigError("no output directory: pass --out or set \"out\" in the config");
  return cfg.out;
}

std::string resolve_dataset_dir(const RunConfig& cfg, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (!cfg.dataset_dir.empty()) return cfg.dataset_dir;
  if (!cfg.out.empty()) return (fs::path(cfg.out) / "dataset").string();
  throw ConfigError("no dataset directory: pass --dataset or set \"dataset_dir\" in the config");
}

int resolved_classes(const TrainConfig& tc, const Json& manifest, const std::string& dataset_dir) {
  if (tc.n_classes != 0) return tc.n_classes;
  if (!manifest.contains("classes") || !manifest.at("classes").is_array() ||
      manifest.at("classes").empty())
    throw ConfigError(fmt::format(
        "dataset '{}' records no class registry; set train.n_classes explicitly", dataset_dir));
  return static_cast<int>(manifest.at("classes").size());
}

// The trainer configuration a command actually runs: run seed folded in,
// class count resolved against the dataset.
TrainConfig effective_train_config(const RunConfig& cfg, const Dataset& data,
                                   const std::string& dataset_dir) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.n_classes = resolved_classes(tc, data.manifest, dataset_dir);
  validate(tc);
  return tc;
}

// Checkpoint config echo: the trainer settings plus the class registry, so
// downstream commands can rebuild palettes without the dataset.
Json checkpoint_echo(const TrainConfig& tc, const Json& manifest) {
  Json echo = train_config_json(tc);
  if (manifest.contains("classes")) echo["classes"] = manifest.at("classes");
  return echo;
}

std::vector<ClassEntry> registry_from_manifest(const Json& manifest,
                                               const std::string& dataset_dir) {
  if (!manifest.contains("classes"))
    throw ConfigError(fmt::format("dataset '{}' records no class registry", dataset_dir));
  return registry_from_json(manifest.at("classes"));
}

const std::vector<LoadedScene>& pick_split(const Dataset& data, const std::string& split,
                                           const std::string& dataset_dir) {
  if (split != "train" && split != "val")
    throw ConfigError(fmt::format("unknown split '{}': expected train or val", split));
  const std::vector<LoadedScene>& scenes = split == "val" ? data.val : data.train;
  if (scenes.empty())
    throw ConfigError(fmt::format("split '{}' of dataset '{}' has no scenes", split, dataset_dir));
  return scenes;
}

void write_frame_rasters(const std::string& stem, const FrameRasters& frame,
                         const std::vector<std::array<uint8_t, 3>>& palette) {
  write_rgb_png(stem + ".png", frame.rgb, frame.width, frame.height);
  write_label_png(stem + ".labels.png", frame.labels, frame.width, frame.height, palette);
  write_pfm(stem + ".pfm", frame.depth, frame.width, frame.height);
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const RunConfig& cfg, const std::string& dataset_flag) {
  const std::string dir = resolve_dataset_dir(cfg, dataset_flag);
  const DatasetSummary summary = generate_dataset(cfg.dataset, cfg.seed, dir);
  fmt::print(stderr, "wrote {} train + {} val scene(s), {} pair(s), {} dropped target(s)\n",
             summary.train_scenes.size(), summary.val_scenes.size(), summary.total_pairs,
             summary.dropped_targets);
  fmt::print("{}", read_file((fs::path(dir) / "manifest.json").string()));
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const RunConfig& cfg, const std::string& dataset_flag, const std::string& resume) {
  const std::string dataset_dir = resolve_dataset_dir(cfg, dataset_flag);
  const Dataset data = load_dataset(dataset_dir);
  const TrainConfig tc = effective_train_config(cfg, data, dataset_dir);
  const std::string out = require_out(cfg);
  make_dirs(out);

  Json run_echo = run_config_json(cfg);
  run_echo["dataset_dir"] = dataset_dir;
  run_echo["train"]["n_classes"] = tc.n_classes;
  run_echo["dataset_hash"] = dataset_hash(dataset_dir);
  write_text((fs::path(out) / "config.json").string(), run_echo.dump(2) + "\n");

  const int64_t every = std::max<int64_t>(1, tc.steps / 50);
  const StepObserver progress = [&](int64_t step, const LossBreakdown& loss) {
    if (step % every == 0 || step == tc.steps)
      fmt::print(stderr, "step {:>6}/{}  loss {:.6f}\n", step, tc.steps, loss.total);
  };
  const TrainResult res =
      train_loop(data, tc, out, checkpoint_echo(tc, data.manifest), resume, progress);
  fmt::print("trained {} step(s); final loss {:.6f}\ncheckpoint: {}\ntrace: {}\n", res.steps_done,
             res.last.total, res.checkpoint_path, res.trace_path);
  return 0;
}

// ---------------------------------------------------------------------------
// render

std::vector<Camera> cameras_from_file(const std::string& path) {
  const Json arr = read_json_file(path);
  if (!arr.is_array() || arr.empty())
    throw ConfigError(fmt::format("'{}': expected a non-empty camera array", path));
  std::vector<Camera> cameras;
  cameras.reserve(arr.size());
  for (const Json& cj : arr) cameras.push_back(camera_from_json(cj));
  return cameras;
}

std::vector<int> parse_indices(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      size_t used = 0;
      const int v = std::stoi(cell, &used);
      if (used != cell.size() || v < 0) throw std::invalid_argument(cell);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("bad view index '{}' in '{}'", cell, csv));
    }
  }
  if (out.empty()) throw ConfigError("no source view indices given");
  return out;
}

int cmd_render(const RunConfig& cfg, const std::string& checkpoint_path,
               const std::string& cameras_path, const std::string& scene_dir,
               const std::string& sources_csv) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  TrainConfig tc = train_config_from_json(ck.config);
  if (!ck.config.contains("classes"))
    throw ConfigError(fmt::format(
        "checkpoint '{}' stores no class registry; cannot build a label palette",
        checkpoint_path));
  const std::vector<ClassEntry> registry = registry_from_json(ck.config.at("classes"));
  if (tc.n_classes == 0) tc.n_classes = static_cast<int>(registry.size());
  validate(tc);
  NSRF_CHECK(static_cast<int>(registry.size()) == tc.n_classes,
             "checkpoint registry has {} classes but the model expects {}", registry.size(),
             tc.n_classes);
  verify_checkpoint_tensors(ck, tc);

  // Conditioning inputs: poses from the scene's camera list, pixels from the
  // listed source views only. Target rasters are never opened.
  const std::vector<Camera> scene_cameras =
      cameras_from_file((fs::path(scene_dir) / "cameras.json").string());
  const std::vector<int> source_ids = parse_indices(sources_csv);
  const ParamGetter params = getter(ck.params);
  std::vector<FeatureMap> fms;
  fms.reserve(source_ids.size());
  for (const int s : source_ids) {
    NSRF_CHECK(s < static_cast<int>(scene_cameras.size()),
               "source view {} out of range: scene has {} cameras", s, scene_cameras.size());
    const Camera& cam = scene_cameras[static_cast<size_t>(s)];
    int w = 0, h = 0;
    const std::vector<double> rgb =
        read_rgb_png((fs::path(scene_dir) / fmt::format("view_{}.png", s)).string(), &w, &h);
    NSRF_CHECK(w == cam.width && h == cam.height, "view {} rgb is {}x{}, camera says {}x{}", s, w,
               h, cam.width, cam.height);
    FeatureMap fm = encode_features(ad::Tensor({h, w, 3}, rgb), cam, params, "enc");
    fm.camera = cam;
    fms.push_back(std::move(fm));
  }

  const std::vector<Camera> targets = cameras_from_file(cameras_path);
  const std::string out = require_out(cfg);
  make_dirs(out);
  const FieldDims dims = field_dims(tc);
  const auto palette = palette_from(registry);
  Rng master(tc.seed);
  for (size_t k = 0; k < targets.size(); ++k) {
    const FrameRasters frame = render_frame(targets[k], fms, params, dims, tc.render,
                                            master.fork(kEvalRngStream + k));
    write_frame_rasters((fs::path(out) / fmt::format("pred_{}", k)).string(), frame, palette);
  }
  fmt::print("rendered {} camera(s) into {} ({} files)\n", targets.size(), out,
             3 * targets.size());
  return 0;
}

// ---------------------------------------------------------------------------
// eval

MetricsReport self_test_report(const std::vector<LoadedScene>& scenes,
                               const std::vector<ClassEntry>& registry) {
  const int n = static_cast<int>(registry.size());
  ConfusionMatrix cm(n);
  DepthAccum depth;
  std::vector<char> thing(registry.size(), 0), stuff(registry.size(), 0);
  for (size_t c = 1; c < registry.size(); ++c) {
    thing[c] = registry[c].stuff ? 0 : 1;
    stuff[c] = registry[c].stuff ? 1 : 0;
  }
  for (const LoadedScene& scene : scenes)
    for (const LoadedPair& pair : scene.pairs) {
      const GroundTruthView& tgt = scene.views[static_cast<size_t>(pair.target)];
      cm.merge(confusion_matrix(tgt.labels, tgt.labels, n));
      for (size_t i = 0; i < tgt.depth.size(); ++i) {
        const uint8_t g = tgt.labels[i];
        depth.add(tgt.depth[i], tgt.depth[i], thing[g] != 0, stuff[g] != 0);
      }
    }
  MetricsReport report;
  semantic_metrics(cm, registry, report);
  depth.finalize(report);
  report.pixels = cm.total();
  report.photo_mse = 0.0;
  return report;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& dataset_flag, const std::string& split_flag, bool self_test) {
  const std::string dataset_dir = resolve_dataset_dir(cfg, dataset_flag);
  const Dataset data = load_dataset(dataset_dir);
  const std::string split = split_flag.empty() ? cfg.eval_split : split_flag;
  const std::vector<LoadedScene>& scenes = pick_split(data, split, dataset_dir);
  const std::vector<ClassEntry> registry = registry_from_manifest(data.manifest, dataset_dir);

  MetricsReport report;
  std::vector<FrameRasters> frames;
  if (self_test) {
    report = self_test_report(scenes, registry);
  } else {
    if (checkpoint_path.empty())
      throw ConfigError("eval needs --checkpoint (or --self-test for the oracle identity check)");
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    EvalResult res = evaluate_run(ck, scenes, registry);
    report = res.report;
    frames = std::move(res.frames);
  }

  const std::string out = require_out(cfg);
  make_dirs(out);
  Json mj = report.to_json();
  mj["split"] = split;
  mj["dataset_hash"] = dataset_hash(dataset_dir);
  mj["self_test"] = self_test;
  write_text((fs::path(out) / "metrics.json").string(), mj.dump(2) + "\n");
  const std::string table = report.to_table();
  write_text((fs::path(out) / "metrics.txt").string(), table);
  const auto palette = palette_from(registry);
  for (const FrameRasters& frame : frames)
    write_frame_rasters(
        (fs::path(out) / fmt::format("eval_{}_view_{}", frame.scene_id, frame.target)).string(),
        frame, palette);
  fmt::print("{}", table);
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  std::string name;  // table label, matching the loss-ablation naming
  std::string slug;  // output subdirectory
  bool semantic = true;
  bool ok = false;
  std::string error;
  MetricsReport report;
};

int cmd_ablate(const RunConfig& cfg, const std::string& dataset_flag) {
  const std::string dataset_dir = resolve_dataset_dir(cfg, dataset_flag);
  const Dataset data = load_dataset(dataset_dir);
  const std::vector<ClassEntry> registry = registry_from_manifest(data.manifest, dataset_dir);
  // Fall back to the train split when the requested one is empty (single-
  // scene overfit datasets have no val scenes).
  std::string split = cfg.eval_split;
  if (split == "val" && data.val.empty()) split = "train";
  const std::vector<LoadedScene>& scenes = pick_split(data, split, dataset_dir);
  const std::string out = require_out(cfg);
  make_dirs(out);
  const std::string hash = dataset_hash(dataset_dir);

  const std::vector<std::pair<std::string, std::function<void(TrainConfig&)>>> variants = {
      {"final", [](TrainConfig&) {}},
      {"w/o photometric loss", [](TrainConfig& t) { t.toggles.photometric = false; }},
      {"w/o semantic loss", [](TrainConfig& t) { t.toggles.semantic = false; }},
      {"w/o source view loss", [](TrainConfig& t) { t.toggles.source_views = false; }},
      {"w/o viewing dir", [](TrainConfig& t) { t.render.use_viewdir = false; }},
  };
  const std::vector<std::string> slugs = {"final", "no-photometric", "no-semantic",
                                          "no-source-loss", "no-viewdir"};

  std::vector<AblationRow> rows;
  for (size_t i = 0; i < variants.size(); ++i) {
    AblationRow row;
    row.name = variants[i].first;
    row.slug = slugs[i];
    TrainConfig tc = effective_train_config(cfg, data, dataset_dir);
    variants[i].second(tc);
    row.semantic = tc.toggles.semantic;
    const std::string row_dir = (fs::path(out) / row.slug).string();
    fmt::print(stderr, "[{}/{}] {} -> {}\n", i + 1, variants.size(), row.name, row_dir);
    try {
      const TrainResult tr = train_loop(data, tc, row_dir, checkpoint_echo(tc, data.manifest));
      const Checkpoint ck = load_checkpoint(tr.checkpoint_path);
      const EvalResult er = evaluate_run(ck, scenes, registry);
      row.report = er.report;
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
      fmt::print(stderr, "row '{}' failed: {}\n", row.name, row.error);
    }
    rows.push_back(std::move(row));
  }

  // Combined table. Semantic columns print dashes for the row trained
  // without the semantic loss (its labels are untrained noise).
  std::string table;
  table += fmt::format("dataset: {}\ndataset hash: {}\neval split: {}\nsteps: {}\n\n",
                       dataset_dir, hash, split, cfg.train.steps);
  table += fmt::format("{:<24}", "config");
  for (const char* h : {"mIoU", "IoU^T", "IoU^S", "fwIoU", "pACC", "mACC", "L1", "Rel", "Rel^T",
                        "Rel^S", "d<1.25", "d<1.25^2", "d<1.25^3"})
    table += fmt::format("{:>10}", h);
  table += fmt::format("  {}\n", "status");
  for (const AblationRow& row : rows) {
    table += fmt::format("{:<24}", row.name);
    const auto cell = [&](double v, bool show) {
      table += show ? fmt::format("{:>10.4f}", v) : fmt::format("{:>10}", "-");
    };
    const bool sem = row.ok && row.semantic;
    cell(row.report.miou, sem);
    cell(row.report.iou_things, sem);
    cell(row.report.iou_stuff, sem);
    cell(row.report.fw_iou, sem);
    cell(row.report.p_acc, sem);
    cell(row.report.m_acc, sem);
    cell(row.report.l1, row.ok);
    cell(row.report.rel, row.ok);
    cell(row.report.rel_things, row.ok);
    cell(row.report.rel_stuff, row.ok);
    cell(row.report.delta_1, row.ok);
    cell(row.report.delta_2, row.ok);
    cell(row.report.delta_3, row.ok);
    table += row.ok ? "  ok\n" : fmt::format("  failed: {}\n", row.error);
  }
  // Informational depth trend, reported but never gated.
  if (rows[0].ok && rows[2].ok)
    table += fmt::format("\nnote: depth Rel without the semantic loss {:.4f} vs final {:.4f} ({})\n",
                         rows[2].report.rel, rows[0].report.rel,
                         rows[2].report.rel >= rows[0].report.rel
                             ? "matches the expected trend"
                             : "against the expected trend");

  Json rows_json = Json::array();
  for (const AblationRow& row : rows) {
    Json rj{{"name", row.name}, {"slug", row.slug}, {"ok", row.ok}};
    if (!row.ok) rj["error"] = row.error;
    if (row.ok) {
      Json m = row.report.to_json();
      if (!row.semantic)
        for (const char* k : {"miou", "iou_things", "iou_stuff", "fw_iou", "p_acc", "m_acc"})
          m[k] = nullptr;  // dashes in the table, nulls here
      rj["metrics"] = std::move(m);
    }
    rows_json.push_back(std::move(rj));
  }
  const Json aj{{"dataset", dataset_dir}, {"dataset_hash", hash},         {"split", split},
                {"seed", cfg.seed},       {"steps", cfg.train.steps},     {"rows", rows_json}};
  write_text((fs::path(out) / "ablation.json").string(), aj.dump(2) + "\n");
  write_text((fs::path(out) / "ablation.txt").string(), table);
  fmt::print("{}", table);

  for (const AblationRow& row : rows)
    if (!row.ok) return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural semantic radiance fields"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_flag, dataset_flag;
  uint64_t seed_flag = 0;
  int threads_flag = 0;
  app.add_option("--config", config_path, "run configuration JSON");
  app.add_option("--seed", seed_flag, "override the run seed");
  app.add_option("--threads", threads_flag, "worker threads (N=1 and N>1 give identical bits)");
  app.add_option("--out", out_flag, "output directory");

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  double noise_deg = 0.0;
  synth->add_option("--dataset", dataset_flag, "dataset directory to write");
  synth->add_option("--noise-deg", noise_deg,
                    "per-axis source-camera rotation noise bound, degrees");

  CLI::App* train = app.add_subcommand("train", "fit a model to a dataset");
  std::string resume_path;
  int steps_flag = -1;
  bool no_photometric = false, no_semantic = false, no_source = false, no_viewdir = false;
  train->add_option("--dataset", dataset_flag, "dataset directory to read");
  train->add_option("--resume", resume_path, "checkpoint to continue from");
  train->add_option("--steps", steps_flag, "override the step count");
  train->add_flag("--no-photometric", no_photometric, "drop the photometric loss terms");
  train->add_flag("--no-semantic", no_semantic, "drop the semantic loss terms");
  train->add_flag("--no-source-loss", no_source, "supervise the target view only");
  train->add_flag("--no-viewdir", no_viewdir, "hide the viewing direction from the field");

  CLI::App* render = app.add_subcommand("render", "render views from a checkpoint");
  std::string ck_path, cameras_path, scene_dir, sources_csv;
  render->add_option("--checkpoint", ck_path, "trained checkpoint")->required();
  render->add_option("--cameras", cameras_path, "JSON array of cameras to render")->required();
  render->add_option("--scene-dir", scene_dir, "scene directory providing the source views")
      ->required();
  render->add_option("--sources", sources_csv, "comma-separated source view indices")->required();

  CLI::App* eval = app.add_subcommand("eval", "score rendered views against ground truth");
  std::string split_flag;
  bool self_test = false;
  eval->add_option("--checkpoint", ck_path, "trained checkpoint");
  eval->add_option("--dataset", dataset_flag, "dataset directory to read");
  eval->add_option("--split", split_flag, "train or val");
  eval->add_flag("--self-test", self_test,
                 "score the oracle rasters against themselves (harness identity check)");

  CLI::App* ablate = app.add_subcommand("ablate", "train and evaluate the loss-ablation grid");
  ablate->add_option("--dataset", dataset_flag, "dataset directory to read");
  ablate->add_option("--steps", steps_flag, "override the step count for every row");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    if (app.count("--seed") > 0) cfg.seed = seed_flag;
    if (app.count("--threads") > 0) cfg.threads = threads_flag;
    if (app.count("--out") > 0) cfg.out = out_flag;
    if (cfg.threads < 1) throw ConfigError("'threads': need at least one worker");
    set_num_threads(cfg.threads);

    if (synth->parsed()) {
      if (synth->count("--noise-deg") > 0) cfg.dataset.noise_deg = noise_deg;
      return cmd_synth(cfg, dataset_flag);
    }
    if (train->parsed()) {
      if (steps_flag >= 0) cfg.train.steps = steps_flag;
      if (no_photometric) cfg.train.toggles.photometric = false;
      if (no_semantic) cfg.train.toggles.semantic = false;
      if (no_source) cfg.train.toggles.source_views = false;
      if (no_viewdir) cfg.train.render.use_viewdir = false;
      return cmd_train(cfg, dataset_flag, resume_path);
    }
    if (render->parsed()) return cmd_render(cfg, ck_path, cameras_path, scene_dir, sources_csv);
    if (eval->parsed()) return cmd_eval(cfg, ck_path, dataset_flag, split_flag, self_test);
    if (ablate->parsed()) {
      if (steps_flag >= 0) cfg.train.steps = steps_flag;
      return cmd_ablate(cfg, dataset_flag);
    }
    throw ConfigError("no command given");
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const IoError& e) {
    fmt::print(stderr, "io error: {}\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    fmt::print(stderr, "numeric error: {}\n", e.what());
    return 4;
  } catch (const Json::exception& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  }
}
