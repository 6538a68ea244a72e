#include "nsrf/config.hpp"

#include <fmt/format.h>

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include "nsrf/check.hpp"

namespace nsrf {
namespace {

void check_keys(const Json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(fmt::format("unknown key '{}{}'", where, key));
  }
}

// j.at(key).get<T>() with ConfigError naming the path on type mismatch.
template <typename T>
void read_into(const Json& obj, const std::string& where, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("'{}{}': {}", where, key, e.what()));
  }
}

void parse_dataset(const Json& j, DatasetConfig& cfg) {
  if (!j.is_object()) throw ConfigError("'dataset': expected an object");
  check_keys(j, "dataset.",
             {"scenes", "val_scenes", "views_per_scene", "width", "height", "fov_deg",
              "n_sources", "near", "far", "noise_deg", "overlap_grid", "scene_spec"});
  read_into(j, "dataset.", "scenes", cfg.scenes);
  read_into(j, "dataset.", "val_scenes", cfg.val_scenes);
  read_into(j, "dataset.", "views_per_scene", cfg.views_per_scene);
  read_into(j, "dataset.", "width", cfg.width);
  read_into(j, "dataset.", "height", cfg.height);
  read_into(j, "dataset.", "fov_deg", cfg.fov_deg);
  read_into(j, "dataset.", "n_sources", cfg.n_sources);
  read_into(j, "dataset.", "near", cfg.near);
  read_into(j, "dataset.", "far", cfg.far);
  read_into(j, "dataset.", "noise_deg", cfg.noise_deg);
  read_into(j, "dataset.", "overlap_grid", cfg.overlap_grid);
  if (j.contains("scene_spec")) cfg.scene_spec = j.at("scene_spec");

  if (cfg.scenes < 1) throw ConfigError("'dataset.scenes': need at least one scene");
  if (cfg.val_scenes < 0 || cfg.val_scenes >= cfg.scenes)
    throw ConfigError("'dataset.val_scenes': must leave at least one training scene");
  if (cfg.views_per_scene < 2)
    throw ConfigError("'dataset.views_per_scene': need at least two views");
  if (cfg.width < 8 || cfg.height < 8)
    throw ConfigError("'dataset.width'/'dataset.height': images must be at least 8x8");
  if (!(cfg.fov_deg > 10.0 && cfg.fov_deg < 170.0))
    throw ConfigError("'dataset.fov_deg': must lie in (10, 170)");
  if (cfg.n_sources < 1) throw ConfigError("'dataset.n_sources': need at least one source view");
  if (!(cfg.near > 0.0 && cfg.near < cfg.far))
    throw ConfigError("'dataset.near'/'dataset.far': need 0 < near < far");
  if (cfg.noise_deg < 0.0) throw ConfigError("'dataset.noise_deg': must be nonnegative");
  if (cfg.overlap_grid < 2) throw ConfigError("'dataset.overlap_grid': must be at least 2");
}

void parse_train(const Json& j, TrainConfig& cfg) {
  if (!j.is_object()) throw ConfigError("'train': expected an object");
  check_keys(j, "train.",
             {"lr", "lambda_sem", "rays_per_image", "steps", "checkpoint_every", "ray_group",
              "k_dim", "hidden", "n_classes", "photometric_loss", "semantic_loss",
              "source_view_loss", "use_viewdir", "depth_residual", "t_near", "t_far", "n_coarse",
              "n_fine", "pe_octaves"});
  read_into(j, "train.", "lr", cfg.lr);
  read_into(j, "train.", "lambda_sem", cfg.lambda_sem);
  read_into(j, "train.", "rays_per_image", cfg.rays_per_image);
  read_into(j, "train.", "steps", cfg.steps);
  read_into(j, "train.", "checkpoint_every", cfg.checkpoint_every);
  read_into(j, "train.", "ray_group", cfg.ray_group);
  read_into(j, "train.", "k_dim", cfg.k_dim);
  read_into(j, "train.", "hidden", cfg.hidden);
  read_into(j, "train.", "n_classes", cfg.n_classes);
  read_into(j, "train.", "photometric_loss", cfg.toggles.photometric);
  read_into(j, "train.", "semantic_loss", cfg.toggles.semantic);
  read_into(j, "train.", "source_view_loss", cfg.toggles.source_views);
  read_into(j, "train.", "use_viewdir", cfg.render.use_viewdir);
  read_into(j, "train.", "depth_residual", cfg.render.depth_residual);
  read_into(j, "train.", "t_near", cfg.render.t_near);
  read_into(j, "train.", "t_far", cfg.render.t_far);
  read_into(j, "train.", "n_coarse", cfg.render.n_coarse);
  read_into(j, "train.", "n_fine", cfg.render.n_fine);
  read_into(j, "train.", "pe_octaves", cfg.render.pe_octaves);
  try {
    validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("'train': {}", e.what()));
  }
}

}  // namespace

RunConfig parse_run_config(const Json& j) {
  if (!j.is_object()) throw ConfigError("run config: expected a JSON object");
  check_keys(j, "", {"seed", "threads", "out", "dataset_dir", "dataset", "train", "eval"});
  RunConfig cfg;
  read_into(j, "", "seed", cfg.seed);
  read_into(j, "", "threads", cfg.threads);
  read_into(j, "", "out", cfg.out);
  read_into(j, "", "dataset_dir", cfg.dataset_dir);
  if (cfg.threads < 1) throw ConfigError("'threads': need at least one worker");
  if (j.contains("dataset")) parse_dataset(j.at("dataset"), cfg.dataset);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    if (!e.is_object()) throw ConfigError("'eval': expected an object");
    check_keys(e, "eval.", {"split"});
    read_into(e, "eval.", "split", cfg.eval_split);
    if (cfg.eval_split != "train" && cfg.eval_split != "val")
      throw ConfigError("'eval.split': must be \"train\" or \"val\"");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(fmt::format("cannot read config '{}'", path));
  std::stringstream ss;
  ss << f.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("'{}' is not valid JSON: {}", path, e.what()));
  }
  return parse_run_config(j);
}

Json run_config_json(const RunConfig& cfg) {
  Json dataset{{"scenes", cfg.dataset.scenes},
               {"val_scenes", cfg.dataset.val_scenes},
               {"views_per_scene", cfg.dataset.views_per_scene},
               {"width", cfg.dataset.width},
               {"height", cfg.dataset.height},
               {"fov_deg", cfg.dataset.fov_deg},
               {"n_sources", cfg.dataset.n_sources},
               {"near", cfg.dataset.near},
               {"far", cfg.dataset.far},
               {"noise_deg", cfg.dataset.noise_deg},
               {"overlap_grid", cfg.dataset.overlap_grid}};
  if (!cfg.dataset.scene_spec.is_null()) dataset["scene_spec"] = cfg.dataset.scene_spec;
  Json train = train_config_json(cfg.train);
  train.erase("seed");  // the run seed is authoritative
  return Json{{"seed", cfg.seed},          {"threads", cfg.threads},
              {"out", cfg.out},            {"dataset_dir", cfg.dataset_dir},
              {"dataset", std::move(dataset)}, {"train", std::move(train)},
              {"eval", Json{{"split", cfg.eval_split}}}};
}

}  // namespace nsrf
