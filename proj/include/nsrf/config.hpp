#pragma once

#include <string>

#include "nsrf/synthscene.hpp"
#include "nsrf/train.hpp"

namespace nsrf {

// Whole-run description: dataset generation settings, trainer settings, eval
// options, output locations, and the run seed. The run seed drives dataset
// generation and is copied into the trainer config at command time, so one
// number pins the whole pipeline.
struct RunConfig {
  uint64_t seed = 0;
  int threads = 4;
  std::string out;          // output root; commands write beneath it
  std::string dataset_dir;  // where synth writes and train/eval read;
                            // defaults to "<out>/dataset" when empty
  DatasetConfig dataset;
  TrainConfig train;
  std::string eval_split = "val";
};

// Strict parse: any key the schema does not declare is rejected with a
// ConfigError naming it; so are ill-typed or out-of-range values. Absent
// keys keep their defaults. The free-form dataset.scene_spec subtree is
// passed through untouched (the scene builder validates it).
RunConfig parse_run_config(const Json& j);

// Reads and parses a JSON file; IoError when unreadable, ConfigError when
// not valid JSON or not schema-conforming.
RunConfig load_run_config(const std::string& path);

// Full echo of every setting, written into run outputs.
Json run_config_json(const RunConfig& cfg);

// The trainer configuration a run actually executes: the run seed folded in
// and the class count resolved against the dataset manifest (when the config
// leaves it at 0). Throws ConfigError when neither source pins the count.
TrainConfig resolve_train_config(const RunConfig& cfg, const Json& manifest,
                                 const std::string& dataset_dir);

// Configuration echo embedded in checkpoints: the trainer settings plus the
// dataset's class registry, so downstream consumers can rebuild label
// palettes without the dataset.
Json checkpoint_config_echo(const TrainConfig& cfg, const Json& manifest);

}  // namespace nsrf
