// End-to-end checks of the command-line binary: each case drives the real
// executable through a tiny dataset and asserts on its files and exit codes.

#include <doctest.h>
#include <fmt/format.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nsrf/check.hpp"
#include "nsrf/eval.hpp"
#include "nsrf/image_io.hpp"
#include "nsrf/train.hpp"

namespace fs = std::filesystem;
using namespace nsrf;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(bool(f));
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  REQUIRE(bool(f));
  f << text;
}

// Fresh working directory per test case, under the system temp root.
fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  const fs::path dir =
      fs::temp_directory_path() / fmt::format("nsrf_cli_{}_{}_{}", ::getpid(), tag, counter++);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CliResult run_cli(const fs::path& scratch, const std::string& args) {
  const fs::path out_file = scratch / "_stdout";
  const fs::path err_file = scratch / "_stderr";
  const std::string cmd =
      fmt::format("{} {} >{} 2>{}", NSRF_CLI_PATH, args, out_file.string(), err_file.string());
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

// Tiny but complete run configuration: 24x18 views, a 2+2-layer model, a
// handful of rays. Keeps every CLI case under a few seconds.
Json tiny_run_config(const fs::path& out, int scenes, int val_scenes) {
  return Json{
      {"seed", 11},
      {"threads", 2},
      {"out", out.string()},
      {"dataset",
       {{"scenes", scenes},
        {"val_scenes", val_scenes},
        {"views_per_scene", 5},
        {"width", 24},
        {"height", 18},
        {"n_sources", 2}}},
      {"train",
       {{"steps", 2},
        {"checkpoint_every", 2},
        {"rays_per_image", 16},
        {"ray_group", 16},
        {"k_dim", 4},
        {"hidden", 8},
        {"n_coarse", 6},
        {"n_fine", 6},
        {"pe_octaves", 3}}},
      {"eval", {{"split", "val"}}},
  };
}

Json write_config(const fs::path& dir, const Json& cfg) {
  spit(dir / "run.json", cfg.dump(2));
  return cfg;
}

std::vector<std::string> csv_column(const std::string& csv, size_t col) {
  std::vector<std::string> cells;
  std::stringstream lines(csv);
  std::string line;
  std::getline(lines, line);  // header
  while (std::getline(lines, line)) {
    std::stringstream row(line);
    std::string cell;
    for (size_t i = 0; i <= col; ++i) REQUIRE(std::getline(row, cell, ','));
    cells.push_back(cell);
  }
  return cells;
}

}  // namespace

TEST_CASE("cli: synth is deterministic and --noise-deg stores perturbed poses") {
  const fs::path dir = fresh_dir("synth");
  write_config(dir, tiny_run_config(dir / "out", 2, 1));
  const std::string cfg_arg = fmt::format("--config {}", (dir / "run.json").string());

  const CliResult first = run_cli(dir, fmt::format("synth {}", cfg_arg));
  CHECK(first.exit_code == 0);
  // stdout is the manifest itself
  const Json printed = Json::parse(first.out);
  const Json on_disk = Json::parse(slurp(dir / "out" / "dataset" / "manifest.json"));
  CHECK(printed == on_disk);
  CHECK(on_disk.at("train_scenes").size() == 1);
  CHECK(on_disk.at("val_scenes").size() == 1);
  CHECK(on_disk.at("classes").is_array());
  CHECK(on_disk.at("total_pairs").get<int>() > 0);

  // Same config and seed into a second directory: byte-identical dataset.
  const CliResult second =
      run_cli(dir, fmt::format("synth {} --dataset {}", cfg_arg, (dir / "again").string()));
  CHECK(second.exit_code == 0);
  CHECK(slurp(dir / "again" / "manifest.json") ==
        slurp(dir / "out" / "dataset" / "manifest.json"));
  CHECK(slurp(dir / "again" / "scenes" / "scene_0" / "view_0.png") ==
        slurp(dir / "out" / "dataset" / "scenes" / "scene_0" / "view_0.png"));

  // Rotation noise on the sources lands in pairs.json next to the clean ids.
  const CliResult noisy = run_cli(
      dir, fmt::format("synth {} --noise-deg 10 --dataset {}", cfg_arg, (dir / "noisy").string()));
  CHECK(noisy.exit_code == 0);
  const Json pairs = Json::parse(slurp(dir / "noisy" / "scenes" / "scene_0" / "pairs.json"));
  REQUIRE(pairs.is_array());
  REQUIRE(!pairs.empty());
  CHECK(pairs[0].contains("sources_noisy"));
  CHECK(pairs[0].at("sources_noisy").size() == pairs[0].at("sources").size());
}

TEST_CASE("cli: train writes a loadable checkpoint and honors the loss toggles") {
  const fs::path dir = fresh_dir("train");
  write_config(dir, tiny_run_config(dir / "out", 1, 0));
  const std::string cfg_arg = fmt::format("--config {}", (dir / "run.json").string());
  REQUIRE(run_cli(dir, fmt::format("synth {}", cfg_arg)).exit_code == 0);
  const std::string data_arg = fmt::format("--dataset {}", (dir / "out" / "dataset").string());

  const CliResult t1 =
      run_cli(dir, fmt::format("train {} {} --out {}", cfg_arg, data_arg, (dir / "t1").string()));
  CHECK(t1.exit_code == 0);

  // The checkpoint loads, carries the class registry, and matches the model.
  const Checkpoint ck = load_checkpoint((dir / "t1" / "checkpoint.nsrf").string());
  CHECK(ck.step == 2);
  CHECK(ck.config.contains("classes"));
  TrainConfig tc = train_config_from_json(ck.config);
  verify_checkpoint_tensors(ck, tc);

  // Trace: exact header, one line per step, first column counts from 1.
  const std::string trace = slurp(dir / "t1" / "trace.csv");
  CHECK(trace.rfind("step,loss_total,loss_p_t,loss_p_s,loss_s_t,loss_s_s\n", 0) == 0);
  const auto steps = csv_column(trace, 0);
  REQUIRE(steps.size() == 2);
  CHECK(steps[0] == "1");
  CHECK(steps[1] == "2");

  // Same seed, same dataset: byte-identical artifacts.
  const CliResult t2 =
      run_cli(dir, fmt::format("train {} {} --out {}", cfg_arg, data_arg, (dir / "t2").string()));
  CHECK(t2.exit_code == 0);
  CHECK(slurp(dir / "t2" / "trace.csv") == trace);
  CHECK(slurp(dir / "t2" / "checkpoint.nsrf") == slurp(dir / "t1" / "checkpoint.nsrf"));

  // Disabling the semantic terms zeroes exactly their trace columns.
  const CliResult ns = run_cli(dir, fmt::format("train {} {} --no-semantic --out {}", cfg_arg,
                                                data_arg, (dir / "nosem").string()));
  CHECK(ns.exit_code == 0);
  const std::string nstrace = slurp(dir / "nosem" / "trace.csv");
  for (const std::string& cell : csv_column(nstrace, 4)) CHECK(cell == "0");
  for (const std::string& cell : csv_column(nstrace, 5)) CHECK(cell == "0");
  for (const std::string& cell : csv_column(nstrace, 1)) CHECK(std::stod(cell) > 0.0);
}

TEST_CASE("cli: render emits three rasters per camera without target ground truth") {
  const fs::path dir = fresh_dir("render");
  write_config(dir, tiny_run_config(dir / "out", 1, 0));
  const std::string cfg_arg = fmt::format("--config {}", (dir / "run.json").string());
  REQUIRE(run_cli(dir, fmt::format("synth {}", cfg_arg)).exit_code == 0);
  REQUIRE(run_cli(dir, fmt::format("train {}", cfg_arg)).exit_code == 0);

  // Strip the target view's rasters: rendering may only touch the camera
  // list and the listed source views.
  const fs::path scene = dir / "out" / "dataset" / "scenes" / "scene_0";
  fs::remove(scene / "view_0.png");
  fs::remove(scene / "view_0.labels.png");
  fs::remove(scene / "view_0.pfm");
  const Json cams = Json::parse(slurp(scene / "cameras.json"));
  spit(dir / "novel.json", Json::array({cams.at(0)}).dump());

  const fs::path rend = dir / "rend";
  const CliResult r = run_cli(
      dir, fmt::format("render --checkpoint {} --cameras {} --scene-dir {} --sources 1,2 --out {}",
                       (dir / "out" / "checkpoint.nsrf").string(), (dir / "novel.json").string(),
                       scene.string(), rend.string()));
  CHECK(r.exit_code == 0);

  // Exactly three files, and each decodes to a consistent raster.
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(rend)) names.push_back(e.path().filename());
  std::sort(names.begin(), names.end());
  REQUIRE(names == std::vector<std::string>{"pred_0.labels.png", "pred_0.pfm", "pred_0.png"});

  int w = 0, h = 0;
  const std::vector<uint8_t> labels = read_label_png((rend / "pred_0.labels.png").string(), &w, &h);
  CHECK(w == 24);
  CHECK(h == 18);
  const Json manifest = Json::parse(slurp(dir / "out" / "dataset" / "manifest.json"));
  const int n_classes = static_cast<int>(manifest.at("classes").size());
  for (const uint8_t l : labels) CHECK(l < n_classes);

  const std::vector<double> rgb = read_rgb_png((rend / "pred_0.png").string(), &w, &h);
  REQUIRE(rgb.size() == size_t(24 * 18 * 3));
  for (const double v : rgb) CHECK((v >= 0.0 && v <= 1.0));

  // Expected depth is a convex combination of sample depths and the far
  // plane, so it must land inside the integration interval.
  const std::vector<double> depth = read_pfm((rend / "pred_0.pfm").string(), &w, &h);
  REQUIRE(depth.size() == size_t(24 * 18));
  const Checkpoint ck = load_checkpoint((dir / "out" / "checkpoint.nsrf").string());
  const TrainConfig tc = train_config_from_json(ck.config);
  for (const double d : depth) {
    CHECK(d >= tc.render.t_near);
    CHECK(d <= tc.render.t_far);
  }
}

TEST_CASE("cli: eval self-test is perfect and a missing split fails loudly") {
  const fs::path dir = fresh_dir("eval");
  write_config(dir, tiny_run_config(dir / "out", 2, 1));
  const std::string cfg_arg = fmt::format("--config {}", (dir / "run.json").string());
  REQUIRE(run_cli(dir, fmt::format("synth {}", cfg_arg)).exit_code == 0);
  const std::string data_arg = fmt::format("--dataset {}", (dir / "out" / "dataset").string());

  // Oracle rasters scored against themselves: the harness identity check.
  const CliResult st = run_cli(dir, fmt::format("eval {} {} --self-test --out {}", cfg_arg,
                                                data_arg, (dir / "st").string()));
  CHECK(st.exit_code == 0);
  const Json m = Json::parse(slurp(dir / "st" / "metrics.json"));
  CHECK(m.at("miou").get<double>() == 100.0);
  CHECK(m.at("p_acc").get<double>() == 100.0);
  CHECK(m.at("l1").get<double>() == 0.0);
  CHECK(m.at("rel").get<double>() == 0.0);
  CHECK(m.at("delta_125").get<double>() == 100.0);
  CHECK(m.at("photo_mse").get<double>() == 0.0);
  CHECK(m.at("self_test").get<bool>() == true);
  for (const char* key : {"miou", "iou_things", "iou_stuff", "fw_iou", "p_acc", "m_acc", "l1",
                          "rel", "rel_things", "rel_stuff", "delta_125", "delta_125_2",
                          "delta_125_3", "pixels", "split", "dataset_hash"})
    CHECK(m.contains(key));

  // A trained checkpoint evaluates with finite, in-range pooled metrics.
  REQUIRE(run_cli(dir, fmt::format("train {} {}", cfg_arg, data_arg)).exit_code == 0);
  const CliResult ev = run_cli(
      dir, fmt::format("eval {} {} --checkpoint {} --out {}", cfg_arg, data_arg,
                       (dir / "out" / "checkpoint.nsrf").string(), (dir / "ev").string()));
  CHECK(ev.exit_code == 0);
  const Json em = Json::parse(slurp(dir / "ev" / "metrics.json"));
  CHECK(em.at("miou").get<double>() >= 0.0);
  CHECK(em.at("miou").get<double>() <= 100.0);
  CHECK(std::isfinite(em.at("l1").get<double>()));
  CHECK(em.at("photo_mse").get<double>() >= 0.0);
  CHECK(em.at("pixels").get<int64_t>() > 0);
  CHECK(fs::exists(dir / "ev" / "metrics.txt"));

  // Asking for a split the dataset does not have: config error naming it.
  const fs::path dir2 = fresh_dir("eval_noval");
  write_config(dir2, tiny_run_config(dir2 / "out", 1, 0));
  const std::string cfg2 = fmt::format("--config {}", (dir2 / "run.json").string());
  REQUIRE(run_cli(dir2, fmt::format("synth {}", cfg2)).exit_code == 0);
  const CliResult miss = run_cli(dir2, fmt::format("eval {} --self-test --split val", cfg2));
  CHECK(miss.exit_code == 2);
  CHECK(miss.err.find("split 'val'") != std::string::npos);
  CHECK(miss.err.find((dir2 / "out" / "dataset").string()) != std::string::npos);
}

TEST_CASE("cli: ablate sweeps five configurations and dashes the semantic-free row") {
  const fs::path dir = fresh_dir("ablate");
  write_config(dir, tiny_run_config(dir / "out", 1, 0));
  const std::string cfg_arg = fmt::format("--config {}", (dir / "run.json").string());
  REQUIRE(run_cli(dir, fmt::format("synth {}", cfg_arg)).exit_code == 0);

  const CliResult ab = run_cli(
      dir, fmt::format("ablate {} --dataset {} --steps 1 --out {}", cfg_arg,
                       (dir / "out" / "dataset").string(), (dir / "abl").string()));
  CHECK(ab.exit_code == 0);

  const std::string table = slurp(dir / "abl" / "ablation.txt");
  CHECK(table == ab.out);
  for (const char* name : {"final", "w/o photometric loss", "w/o semantic loss",
                           "w/o source view loss", "w/o viewing dir"})
    CHECK(table.find(name) != std::string::npos);
  CHECK(table.find("dataset hash: ") != std::string::npos);

  const Json aj = Json::parse(slurp(dir / "abl" / "ablation.json"));
  REQUIRE(aj.at("rows").size() == 5);
  for (const Json& row : aj.at("rows")) CHECK(row.at("ok").get<bool>());
  // Row 2 trains without the semantic loss: its label metrics are withheld.
  const Json& nosem = aj.at("rows").at(2);
  CHECK(nosem.at("name").get<std::string>() == "w/o semantic loss");
  CHECK(nosem.at("metrics").at("miou").is_null());
  CHECK(nosem.at("metrics").at("rel").is_number());
  // All five row directories trained to completion.
  for (const char* slug : {"final", "no-photometric", "no-semantic", "no-source-loss",
                           "no-viewdir"})
    CHECK(fs::exists(dir / "abl" / slug / "checkpoint.nsrf"));
  // The dashed row shows up in the text table as '-' cells.
  const size_t row_pos = table.find("w/o semantic loss");
  const size_t row_end = table.find('\n', row_pos);
  const std::string row_text = table.substr(row_pos, row_end - row_pos);
  CHECK(row_text.find("-") != std::string::npos);
  CHECK(row_text.find("ok") != std::string::npos);
}

TEST_CASE("cli: bad inputs map to the documented exit codes") {
  const fs::path dir = fresh_dir("exitcodes");

  // Unknown key in the config file: exit 2, message names the key.
  spit(dir / "bad.json", R"({"seed": 1, "bogus": true})");
  const CliResult bad =
      run_cli(dir, fmt::format("synth --config {}", (dir / "bad.json").string()));
  CHECK(bad.exit_code == 2);
  CHECK(bad.err.find("bogus") != std::string::npos);

  // Unreadable config file: exit 3.
  const CliResult gone =
      run_cli(dir, fmt::format("synth --config {}", (dir / "missing.json").string()));
  CHECK(gone.exit_code == 3);

  // Malformed JSON: exit 2.
  spit(dir / "broken.json", "{nope");
  const CliResult broken =
      run_cli(dir, fmt::format("synth --config {}", (dir / "broken.json").string()));
  CHECK(broken.exit_code == 2);

  // Unknown flag: CLI parse error, exit 2.
  const CliResult flag = run_cli(dir, "synth --definitely-not-a-flag");
  CHECK(flag.exit_code == 2);

  // Missing required option on render: exit 2.
  const CliResult req = run_cli(dir, "render");
  CHECK(req.exit_code == 2);
}
