#include <filesystem>
#include <fstream>

#include "nsrf/check.hpp"
#include "nsrf/image_io.hpp"
#include "nsrf/synthscene.hpp"

namespace nsrf {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("short write to '{}'", path.string()));
}

Json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<std::array<uint8_t, 3>> palette_of(const Scene& scene) {
  std::vector<std::array<uint8_t, 3>> palette;
  palette.reserve(scene.registry.size());
  for (const ClassEntry& c : scene.registry) palette.push_back(c.color);
  return palette;
}

void validate_dataset_config(const DatasetConfig& c) {
  if (c.scenes < 1) throw ConfigError("data.scenes: must be at least 1");
  if (c.val_scenes < 0 || c.val_scenes >= c.scenes)
    throw ConfigError("data.val_scenes: must leave at least one training scene");
  if (c.views_per_scene < 2) throw ConfigError("data.views_per_scene: must be at least 2");
  if (c.width < 8 || c.height < 8) throw ConfigError("data.width/height: must be at least 8");
  if (c.n_sources < 1) throw ConfigError("data.n_sources: must be at least 1");
  if (!(c.near > 0.0 && c.near < c.far)) throw ConfigError("data.near/far: need 0 < near < far");
  if (!(c.fov_deg > 10.0 && c.fov_deg < 170.0))
    throw ConfigError("data.fov_deg: must be in (10, 170)");
  if (c.noise_deg < 0.0) throw ConfigError("data.noise_deg: must be nonnegative");
  if (c.overlap_grid < 2) throw ConfigError("data.overlap_grid: must be at least 2");
}

Json dataset_config_echo(const DatasetConfig& c) {
  return Json{
      {"scenes", c.scenes},
      {"val_scenes", c.val_scenes},
      {"views_per_scene", c.views_per_scene},
      {"width", c.width},
      {"height", c.height},
      {"fov_deg", c.fov_deg},
      {"n_sources", c.n_sources},
      {"near", c.near},
      {"far", c.far},
      {"noise_deg", c.noise_deg},
      {"overlap_grid", c.overlap_grid},
  };
}

}  // namespace

DatasetSummary generate_dataset(const DatasetConfig& config, uint64_t seed,
                                const std::string& out_dir) {
  validate_dataset_config(config);
  const Json scene_spec =
      config.scene_spec.is_null() || config.scene_spec.empty() ? default_scene_spec()
                                                               : config.scene_spec;
  Rng master(seed);
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "scenes", ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", (root / "scenes").string(), ec.message()));

  DatasetSummary summary;
  Json class_echo = Json::array();
  for (int i = 0; i < config.scenes; ++i) {
    const std::string id = fmt::format("scene_{}", i);
    const fs::path dir = root / "scenes" / id;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));

    Rng build_rng = master.fork(static_cast<uint64_t>(3 * i));
    Rng cam_rng = master.fork(static_cast<uint64_t>(3 * i + 1));
    Rng noise_rng = master.fork(static_cast<uint64_t>(3 * i + 2));

    const Scene scene = build_scene(scene_spec, build_rng);
    if (i == 0)
      for (const ClassEntry& c : scene.registry)
        class_echo.push_back(Json{{"name", c.name}, {"stuff", c.stuff},
                                  {"color", {c.color[0], c.color[1], c.color[2]}}});
    const auto palette = palette_of(scene);

    std::vector<Camera> cameras;
    cameras.reserve(static_cast<size_t>(config.views_per_scene));
    for (int k = 0; k < config.views_per_scene; ++k)
      cameras.push_back(sample_orbit_camera(scene_spec.at("room"), k, config.views_per_scene,
                                            config.width, config.height, config.fov_deg,
                                            cam_rng));

    Json cameras_json = Json::array();
    for (int k = 0; k < config.views_per_scene; ++k) {
      const Camera& cam = cameras[static_cast<size_t>(k)];
      const GroundTruthView view = oracle_render(scene, cam, config.far);
      write_rgb_png((dir / fmt::format("view_{}.png", k)).string(), view.rgb, cam.width,
                    cam.height);
      write_label_png((dir / fmt::format("view_{}.labels.png", k)).string(), view.labels,
                      cam.width, cam.height, palette);
      write_pfm((dir / fmt::format("view_{}.pfm", k)).string(), view.depth, cam.width,
                cam.height);
      cameras_json.push_back(camera_to_json(cam));
    }
    write_text(dir / "cameras.json", cameras_json.dump(2) + "\n");

    // One noisy pose estimate per view, reused wherever the view serves as
    // a source. Targets always keep their true camera.
    std::vector<Camera> noisy;
    if (config.noise_deg > 0.0) {
      noisy.reserve(cameras.size());
      for (const Camera& cam : cameras)
        noisy.push_back(perturb_camera(cam, config.noise_deg, noise_rng));
    }

    const PairSelection selection =
        select_pairs(cameras, config.n_sources, config.near, config.far, 0.10, 0.5, 30.0,
                     config.overlap_grid);
    Json pairs_json = Json::array();
    for (const ViewPair& pair : selection.pairs) {
      Json pj{{"target", pair.target}, {"sources", pair.sources}};
      if (!noisy.empty()) {
        Json noisy_json = Json::array();
        for (int s : pair.sources) noisy_json.push_back(camera_to_json(noisy[static_cast<size_t>(s)]));
        pj["sources_noisy"] = std::move(noisy_json);
      }
      pairs_json.push_back(std::move(pj));
    }
    write_text(dir / "pairs.json", pairs_json.dump(2) + "\n");

    summary.total_pairs += static_cast<int>(selection.pairs.size());
    summary.dropped_targets += selection.dropped_targets;
    if (i < config.scenes - config.val_scenes)
      summary.train_scenes.push_back(id);
    else
      summary.val_scenes.push_back(id);
  }

  const Json manifest{
      {"seed", seed},
      {"config", dataset_config_echo(config)},
      {"classes", class_echo},
      {"train_scenes", summary.train_scenes},
      {"val_scenes", summary.val_scenes},
      {"total_pairs", summary.total_pairs},
      {"dropped_targets", summary.dropped_targets},
      // The pairing criterion tests the target's frustum against each
      // candidate source's, not the reverse.
      {"overlap_direction", "target-to-source"},
  };
  write_text(root / "manifest.json", manifest.dump(2) + "\n");
  return summary;
}

LoadedScene load_scene_dir(const std::string& scene_dir, const std::string& id) {
  const fs::path dir(scene_dir);
  LoadedScene scene;
  scene.id = id;

  const Json cameras_json = read_json_file(dir / "cameras.json");
  if (!cameras_json.is_array() || cameras_json.empty())
    throw IoError(fmt::format("{}: cameras.json must be a non-empty array", dir.string()));
  for (size_t k = 0; k < cameras_json.size(); ++k) {
    GroundTruthView view;
    view.camera = camera_from_json(cameras_json[k]);
    int w = 0, h = 0;
    view.rgb = read_rgb_png((dir / fmt::format("view_{}.png", k)).string(), &w, &h);
    if (w != view.camera.width || h != view.camera.height)
      throw IoError(fmt::format("{}: view {} rgb is {}x{}, camera says {}x{}", dir.string(), k, w,
                                h, view.camera.width, view.camera.height));
    view.labels = read_label_png((dir / fmt::format("view_{}.labels.png", k)).string(), &w, &h);
    if (w != view.camera.width || h != view.camera.height)
      throw IoError(fmt::format("{}: view {} labels are {}x{}", dir.string(), k, w, h));
    view.depth = read_pfm((dir / fmt::format("view_{}.pfm", k)).string(), &w, &h);
    if (w != view.camera.width || h != view.camera.height)
      throw IoError(fmt::format("{}: view {} depth is {}x{}", dir.string(), k, w, h));
    scene.views.push_back(std::move(view));
  }

  const Json pairs_json = read_json_file(dir / "pairs.json");
  if (!pairs_json.is_array())
    throw IoError(fmt::format("{}: pairs.json must be an array", dir.string()));
  const int n_views = static_cast<int>(scene.views.size());
  for (const Json& pj : pairs_json) {
    LoadedPair pair;
    pair.target = pj.at("target").get<int>();
    if (pair.target < 0 || pair.target >= n_views)
      throw IoError(fmt::format("{}: pair target {} out of {} views", dir.string(), pair.target,
                                n_views));
    for (const Json& sj : pj.at("sources")) {
      const int s = sj.get<int>();
      if (s < 0 || s >= n_views)
        throw IoError(fmt::format("{}: pair source {} out of {} views", dir.string(), s, n_views));
      pair.sources.push_back(s);
    }
    if (pj.contains("sources_noisy")) {
      const Json& noisy = pj["sources_noisy"];
      if (noisy.size() != pair.sources.size())
        throw IoError(fmt::format("{}: {} noisy cameras for {} sources", dir.string(),
                                  noisy.size(), pair.sources.size()));
      for (const Json& cj : noisy) pair.sources_noisy.push_back(camera_from_json(cj));
    }
    scene.pairs.push_back(std::move(pair));
  }
  return scene;
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  Dataset dataset;
  dataset.manifest = read_json_file(root / "manifest.json");
  try {
    for (const Json& sid : dataset.manifest.at("train_scenes"))
      dataset.train.push_back(
          load_scene_dir((root / "scenes" / sid.get<std::string>()).string(), sid.get<std::string>()));
    for (const Json& sid : dataset.manifest.at("val_scenes"))
      dataset.val.push_back(
          load_scene_dir((root / "scenes" / sid.get<std::string>()).string(), sid.get<std::string>()));
  } catch (const Json::exception& e) {
    throw IoError(fmt::format("{}: manifest.json: {}", root.string(), e.what()));
  }
  return dataset;
}

}  // namespace nsrf
