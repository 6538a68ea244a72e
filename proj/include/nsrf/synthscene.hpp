#pragma once

#include <array>
#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "nsrf/geometry.hpp"
#include "nsrf/rng.hpp"

namespace nsrf {

using Json = nlohmann::json;

enum class PrimitiveKind { kSphere, kBox, kSlab };

// Spheres use center/radius; boxes and slabs are axis-aligned with corner
// bounds. A slab is geometrically a box; the separate kind marks the thin
// wall/floor/ceiling pieces that carry stuff classes.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kSphere;
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();
  Vec3 albedo = Vec3(0.5, 0.5, 0.5);
  int class_id = 1;
  bool stuff = false;
};

struct ClassEntry {
  std::string name;
  bool stuff = false;
  std::array<uint8_t, 3> color = {0, 0, 0};
};

// Class ids are dense indices into the registry; id 0 is reserved for the
// background (ray escapes / residual transmittance).
struct Scene {
  std::vector<Primitive> primitives;
  std::vector<ClassEntry> registry;
};

struct GroundTruthView {
  Camera camera;
  std::vector<double> rgb;      // H*W*3 in [0,1]
  std::vector<uint8_t> labels;  // H*W class ids
  std::vector<double> depth;    // H*W meters, t_far where nothing was hit
};

// Analytic intersections; parameters in world space, ray direction unit
// length. Returns the nearest positive distance.
std::optional<double> intersect_sphere(const Ray& ray, const Vec3& center, double radius);
std::optional<double> intersect_box(const Ray& ray, const Vec3& lo, const Vec3& hi);

struct Hit {
  double t = 0.0;
  int prim = -1;  // index into Scene::primitives, -1 for a miss
  Vec3 normal = Vec3::Zero();
};

// Nearest primitive hit within (0, t_far], or prim == -1.
Hit trace_nearest(const Scene& scene, const Ray& ray, double t_far);

// Scene description schema (all lengths in meters):
//   room:            {"min": [x,y,z], "max": [x,y,z]}   world is z-up
//   classes:         [{"name", "stuff", "color":[r,g,b]}...]; index == id,
//                    entry 0 is the background
//   shell:           optional {"thickness", "wall_class", "floor_class",
//                    "ceiling_class"} — inward-facing box shell of slabs
//   primitives:      optional explicit list:
//                    {"kind":"sphere","center":[..],"radius":r,"class":id}
//                    {"kind":"box"|"slab","min":[..],"max":[..],"class":id}
//   random_spheres:  optional {"count", "radius":[lo,hi], "classes":[ids]}
//   random_boxes:    optional {"count", "half_extent":[lo,hi], "classes":[ids]}
// Albedo is the class display color scaled to [0,1]. Deterministic in
// (spec, rng state).
Scene build_scene(const Json& spec, Rng& rng);

// Parses a class array of the schema above (also used by the dataset
// manifest's "classes" echo).
std::vector<ClassEntry> registry_from_json(const Json& classes);

// Built-in default: 8-class desk-scale room with a slab shell and four
// random objects.
Json default_scene_spec();

// Per pixel center: nearest-hit shading. rgb = albedo * max(0.2, |n.d|),
// labels = primitive class or 0, depth = hit distance or t_far.
GroundTruthView oracle_render(const Scene& scene, const Camera& camera, double t_far);

// Camera orbiting the room interior, looking near the room center, built
// from `rng` draws. Used by dataset generation; exposed for tests.
Camera sample_orbit_camera(const Json& room, int index, int count, int width, int height,
                           double fov_deg, Rng& rng);

struct ViewPair {
  int target = 0;
  std::vector<int> sources;
};

struct PairSelection {
  std::vector<ViewPair> pairs;
  int dropped_targets = 0;
};

// A source is admissible for a target iff frustum_overlap(target, source)
// >= min_overlap AND the camera centers are more than min_translation apart
// AND the relative rotation is at least min_rotation_deg. Each target keeps
// the n_sources highest-overlap admissible sources; targets with fewer than
// n_sources admissible sources are dropped.
PairSelection select_pairs(const std::vector<Camera>& cameras, int n_sources, double near,
                           double far, double min_overlap = 0.10, double min_translation = 0.5,
                           double min_rotation_deg = 30.0, int grid = 16);

struct DatasetConfig {
  int scenes = 4;
  int val_scenes = 1;
  int views_per_scene = 12;
  int width = 96, height = 72;
  double fov_deg = 60.0;
  int n_sources = 4;
  double near = 0.1, far = 20.0;
  double noise_deg = 0.0;  // source-camera rotation perturbation
  int overlap_grid = 16;
  Json scene_spec;  // empty -> default_scene_spec()
};

// Layout written under `out_dir`:
//   scenes/scene_{i}/view_{k}.png          RGB
//   scenes/scene_{i}/view_{k}.labels.png   class ids (indexed palette)
//   scenes/scene_{i}/view_{k}.pfm          depth
//   scenes/scene_{i}/cameras.json          true cameras, view order
//   scenes/scene_{i}/pairs.json            [{"target","sources",
//                                            "sources_noisy"?}]
//   manifest.json                          seed, config echo, splits
// Renders always use the true cameras; when noise_deg > 0 the perturbed
// source poses are stored alongside each pair (targets stay clean).
struct DatasetSummary {
  std::vector<std::string> train_scenes, val_scenes;
  int total_pairs = 0;
  int dropped_targets = 0;
};
DatasetSummary generate_dataset(const DatasetConfig& config, uint64_t seed,
                                const std::string& out_dir);

Json camera_to_json(const Camera& camera);
Camera camera_from_json(const Json& j);

// In-memory mirror of one scene directory.
struct LoadedPair {
  int target = 0;
  std::vector<int> sources;
  std::vector<Camera> sources_noisy;  // empty when the dataset is clean
};

struct LoadedScene {
  std::string id;
  std::vector<GroundTruthView> views;
  std::vector<LoadedPair> pairs;
};

struct Dataset {
  std::vector<LoadedScene> train, val;
  Json manifest;
};

LoadedScene load_scene_dir(const std::string& scene_dir, const std::string& id);
Dataset load_dataset(const std::string& dir);

}  // namespace nsrf
