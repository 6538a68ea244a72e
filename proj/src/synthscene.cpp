#include "nsrf/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nsrf/check.hpp"

namespace nsrf {

namespace {

constexpr double kRayEps = 1e-9;
constexpr double kPi = 3.14159265358979323846;

Vec3 vec3_from(const Json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(fmt::format("{}: expected [x, y, z]", path));
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

int checked_class(const Json& j, size_t registry_size, const std::string& path) {
  const int id = j.get<int>();
  if (id < 1 || static_cast<size_t>(id) >= registry_size)
    throw ConfigError(
        fmt::format("{}: class id {} not registered (registry has {} entries, 0 is background)",
                    path, id, registry_size));
  return id;
}

Vec3 albedo_of(const std::vector<ClassEntry>& registry, int class_id) {
  const auto& c = registry[static_cast<size_t>(class_id)].color;
  return Vec3(c[0] / 255.0, c[1] / 255.0, c[2] / 255.0);
}

Primitive make_sphere(const Vec3& center, double radius, int class_id,
                      const std::vector<ClassEntry>& registry) {
  Primitive p;
  p.kind = PrimitiveKind::kSphere;
  p.center = center;
  p.radius = radius;
  p.class_id = class_id;
  p.stuff = registry[static_cast<size_t>(class_id)].stuff;
  p.albedo = albedo_of(registry, class_id);
  return p;
}

Primitive make_box(PrimitiveKind kind, const Vec3& lo, const Vec3& hi, int class_id,
                   const std::vector<ClassEntry>& registry) {
  Primitive p;
  p.kind = kind;
  p.lo = lo;
  p.hi = hi;
  p.center = 0.5 * (lo + hi);
  p.class_id = class_id;
  p.stuff = registry[static_cast<size_t>(class_id)].stuff;
  p.albedo = albedo_of(registry, class_id);
  return p;
}

}  // namespace

std::optional<double> intersect_sphere(const Ray& ray, const Vec3& center, double radius) {
  const Vec3 oc = ray.origin - center;
  const double b = oc.dot(ray.direction);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  const double t1 = -b - s, t2 = -b + s;
  if (t1 > kRayEps) return t1;
  if (t2 > kRayEps) return t2;
  return std::nullopt;
}

std::optional<double> intersect_box(const Ray& ray, const Vec3& lo, const Vec3& hi) {
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.direction[a];
    if (std::abs(d) < 1e-300) {
      if (o < lo[a] || o > hi[a]) return std::nullopt;
      continue;
    }
    double t1 = (lo[a] - o) / d, t2 = (hi[a] - o) / d;
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return std::nullopt;
  }
  if (tmin > kRayEps) return tmin;
  if (tmax > kRayEps) return tmax;
  return std::nullopt;
}

namespace {

Vec3 box_normal(const Primitive& p, const Vec3& point) {
  // Face with the smallest distance from the hit point.
  double best = std::numeric_limits<double>::infinity();
  Vec3 n = Vec3::UnitX();
  for (int a = 0; a < 3; ++a) {
    const double d_lo = std::abs(point[a] - p.lo[a]);
    const double d_hi = std::abs(point[a] - p.hi[a]);
    if (d_lo < best) {
      best = d_lo;
      n = Vec3::Zero();
      n[a] = -1.0;
    }
    if (d_hi < best) {
      best = d_hi;
      n = Vec3::Zero();
      n[a] = 1.0;
    }
  }
  return n;
}

}  // namespace

Hit trace_nearest(const Scene& scene, const Ray& ray, double t_far) {
  Hit hit;
  hit.t = t_far;
  for (size_t i = 0; i < scene.primitives.size(); ++i) {
    const Primitive& p = scene.primitives[i];
    std::optional<double> t;
    if (p.kind == PrimitiveKind::kSphere)
      t = intersect_sphere(ray, p.center, p.radius);
    else
      t = intersect_box(ray, p.lo, p.hi);
    if (!t || *t > t_far) continue;
    if (hit.prim == -1 || *t < hit.t) {
      hit.t = *t;
      hit.prim = static_cast<int>(i);
    }
  }
  if (hit.prim >= 0) {
    const Primitive& p = scene.primitives[static_cast<size_t>(hit.prim)];
    const Vec3 point = ray.origin + hit.t * ray.direction;
    hit.normal = p.kind == PrimitiveKind::kSphere ? Vec3((point - p.center) / p.radius)
                                                  : box_normal(p, point);
  }
  return hit;
}

Json default_scene_spec() {
  return Json{
      {"room", {{"min", {-3.0, -3.0, 0.0}}, {"max", {3.0, 3.0, 2.5}}}},
      {"classes",
       {
           {{"name", "background"}, {"stuff", false}, {"color", {0, 0, 0}}},
           {{"name", "wall"}, {"stuff", true}, {"color", {180, 180, 185}}},
           {{"name", "floor"}, {"stuff", true}, {"color", {125, 95, 60}}},
           {{"name", "ceiling"}, {"stuff", true}, {"color", {235, 235, 230}}},
           {{"name", "sphere-a"}, {"stuff", false}, {"color", {215, 55, 55}}},
           {{"name", "sphere-b"}, {"stuff", false}, {"color", {55, 95, 215}}},
           {{"name", "box-a"}, {"stuff", false}, {"color", {55, 195, 85}}},
           {{"name", "box-b"}, {"stuff", false}, {"color", {225, 175, 50}}},
       }},
      {"shell", {{"thickness", 0.1}, {"wall_class", 1}, {"floor_class", 2}, {"ceiling_class", 3}}},
      {"random_spheres", {{"count", 2}, {"radius", {0.35, 0.7}}, {"classes", {4, 5}}}},
      {"random_boxes", {{"count", 2}, {"half_extent", {0.25, 0.6}}, {"classes", {6, 7}}}},
  };
}

std::vector<ClassEntry> registry_from_json(const Json& classes) {
  if (!classes.is_array() || classes.empty())
    throw ConfigError("classes: expected a non-empty array");
  if (classes.size() > 256) throw ConfigError("classes: at most 256 entries fit a palette");
  std::vector<ClassEntry> registry;
  registry.reserve(classes.size());
  for (size_t i = 0; i < classes.size(); ++i) {
    const Json& cj = classes[i];
    const std::string path = fmt::format("classes[{}]", i);
    if (!cj.contains("name") || !cj.contains("stuff") || !cj.contains("color"))
      throw ConfigError(path + ": needs name, stuff, color");
    ClassEntry entry;
    entry.name = cj["name"].get<std::string>();
    entry.stuff = cj["stuff"].get<bool>();
    const Json& col = cj["color"];
    if (!col.is_array() || col.size() != 3) throw ConfigError(path + ".color: expected [r, g, b]");
    for (int k = 0; k < 3; ++k) {
      const int v = col[static_cast<size_t>(k)].get<int>();
      if (v < 0 || v > 255) throw ConfigError(path + ".color: components must be 0..255");
      entry.color[static_cast<size_t>(k)] = static_cast<uint8_t>(v);
    }
    registry.push_back(std::move(entry));
  }
  return registry;
}

Scene build_scene(const Json& spec, Rng& rng) {
  Scene scene;
  if (!spec.contains("classes"))
    throw ConfigError("classes: expected a non-empty array");
  scene.registry = registry_from_json(spec["classes"]);

  if (!spec.contains("room")) throw ConfigError("room: required");
  const Vec3 room_lo = vec3_from(spec["room"].value("min", Json()), "room.min");
  const Vec3 room_hi = vec3_from(spec["room"].value("max", Json()), "room.max");
  for (int a = 0; a < 3; ++a)
    if (!(room_lo[a] < room_hi[a])) throw ConfigError("room: min must be below max per axis");

  double margin = 0.0;
  if (spec.contains("shell")) {
    const Json& sh = spec["shell"];
    const double thick = sh.value("thickness", 0.1);
    if (thick <= 0.0) throw ConfigError("shell.thickness: must be positive");
    margin = thick;
    const int wall = checked_class(sh.value("wall_class", 1), scene.registry.size(),
                                   "shell.wall_class");
    const int floor = checked_class(sh.value("floor_class", 2), scene.registry.size(),
                                    "shell.floor_class");
    const int ceiling = checked_class(sh.value("ceiling_class", 3), scene.registry.size(),
                                      "shell.ceiling_class");
    const Vec3 lo = room_lo, hi = room_hi;
    // Floor and ceiling span the full footprint; walls fill the rim between.
    scene.primitives.push_back(make_box(PrimitiveKind::kSlab, lo,
                                        Vec3(hi.x(), hi.y(), lo.z() + thick), floor,
                                        scene.registry));
    scene.primitives.push_back(make_box(PrimitiveKind::kSlab, Vec3(lo.x(), lo.y(), hi.z() - thick),
                                        hi, ceiling, scene.registry));
    scene.primitives.push_back(make_box(PrimitiveKind::kSlab, lo,
                                        Vec3(lo.x() + thick, hi.y(), hi.z()), wall,
                                        scene.registry));
    scene.primitives.push_back(make_box(PrimitiveKind::kSlab, Vec3(hi.x() - thick, lo.y(), lo.z()),
                                        hi, wall, scene.registry));
    scene.primitives.push_back(make_box(PrimitiveKind::kSlab, lo,
                                        Vec3(hi.x(), lo.y() + thick, hi.z()), wall,
                                        scene.registry));
    scene.primitives.push_back(make_box(PrimitiveKind::kSlab, Vec3(lo.x(), hi.y() - thick, lo.z()),
                                        hi, wall, scene.registry));
  }

  if (spec.contains("primitives")) {
    const Json& prims = spec["primitives"];
    if (!prims.is_array()) throw ConfigError("primitives: expected an array");
    for (size_t i = 0; i < prims.size(); ++i) {
      const Json& pj = prims[i];
      const std::string path = fmt::format("primitives[{}]", i);
      const std::string kind = pj.value("kind", "");
      const int cls = checked_class(pj.value("class", Json(0)), scene.registry.size(),
                                    path + ".class");
      if (kind == "sphere") {
        const double radius = pj.value("radius", 0.0);
        if (radius <= 0.0) throw ConfigError(path + ".radius: must be positive");
        scene.primitives.push_back(
            make_sphere(vec3_from(pj.value("center", Json()), path + ".center"), radius, cls,
                        scene.registry));
      } else if (kind == "box" || kind == "slab") {
        const Vec3 lo = vec3_from(pj.value("min", Json()), path + ".min");
        const Vec3 hi = vec3_from(pj.value("max", Json()), path + ".max");
        for (int a = 0; a < 3; ++a)
          if (!(lo[a] < hi[a])) throw ConfigError(path + ": min must be below max per axis");
        scene.primitives.push_back(make_box(
            kind == "box" ? PrimitiveKind::kBox : PrimitiveKind::kSlab, lo, hi, cls,
            scene.registry));
      } else {
        throw ConfigError(path + ".kind: expected sphere, box, or slab");
      }
    }
  }

  if (spec.contains("random_spheres")) {
    const Json& rs = spec["random_spheres"];
    const int count = rs.value("count", 0);
    if (count < 0) throw ConfigError("random_spheres.count: must be nonnegative");
    const Json& rr = rs.value("radius", Json::array({0.3, 0.6}));
    const double r_lo = rr[0].get<double>(), r_hi = rr[1].get<double>();
    if (!(0.0 < r_lo && r_lo <= r_hi)) throw ConfigError("random_spheres.radius: bad range");
    std::vector<int> classes;
    for (const Json& cj : rs.value("classes", Json::array()))
      classes.push_back(checked_class(cj, scene.registry.size(), "random_spheres.classes"));
    if (count > 0 && classes.empty()) throw ConfigError("random_spheres.classes: none given");
    for (int i = 0; i < count; ++i) {
      const double radius = rng.uniform(r_lo, r_hi);
      Vec3 center;
      for (int a = 0; a < 3; ++a) {
        const double lo = room_lo[a] + margin + radius, hi = room_hi[a] - margin - radius;
        if (!(lo < hi)) throw ConfigError("random_spheres: room too small for the radius range");
        center[a] = rng.uniform(lo, hi);
      }
      const int cls = classes[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(classes.size())))];
      scene.primitives.push_back(make_sphere(center, radius, cls, scene.registry));
    }
  }

  if (spec.contains("random_boxes")) {
    const Json& rb = spec["random_boxes"];
    const int count = rb.value("count", 0);
    if (count < 0) throw ConfigError("random_boxes.count: must be nonnegative");
    const Json& er = rb.value("half_extent", Json::array({0.2, 0.5}));
    const double e_lo = er[0].get<double>(), e_hi = er[1].get<double>();
    if (!(0.0 < e_lo && e_lo <= e_hi)) throw ConfigError("random_boxes.half_extent: bad range");
    std::vector<int> classes;
    for (const Json& cj : rb.value("classes", Json::array()))
      classes.push_back(checked_class(cj, scene.registry.size(), "random_boxes.classes"));
    if (count > 0 && classes.empty()) throw ConfigError("random_boxes.classes: none given");
    for (int i = 0; i < count; ++i) {
      Vec3 half;
      for (int a = 0; a < 3; ++a) half[a] = rng.uniform(e_lo, e_hi);
      Vec3 center;
      for (int a = 0; a < 3; ++a) {
        const double lo = room_lo[a] + margin + half[a], hi = room_hi[a] - margin - half[a];
        if (!(lo < hi)) throw ConfigError("random_boxes: room too small for the extent range");
        center[a] = rng.uniform(lo, hi);
      }
      const int cls = classes[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(classes.size())))];
      scene.primitives.push_back(make_box(PrimitiveKind::kBox, center - half, center + half, cls,
                                          scene.registry));
    }
  }

  return scene;
}

GroundTruthView oracle_render(const Scene& scene, const Camera& camera, double t_far) {
  camera.validate();
  NSRF_CHECK(t_far > 0.0, "oracle_render: t_far must be positive, got {}", t_far);
  GroundTruthView view;
  view.camera = camera;
  const int w = camera.width, h = camera.height;
  view.rgb.assign(static_cast<size_t>(w) * h * 3, 0.0);
  view.labels.assign(static_cast<size_t>(w) * h, 0);
  view.depth.assign(static_cast<size_t>(w) * h, t_far);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Ray ray = generate_ray(camera, x + 0.5, y + 0.5);
      const Hit hit = trace_nearest(scene, ray, t_far);
      const size_t px = static_cast<size_t>(y) * w + x;
      if (hit.prim < 0) continue;
      const Primitive& p = scene.primitives[static_cast<size_t>(hit.prim)];
      const double shade = std::max(0.2, std::abs(hit.normal.dot(ray.direction)));
      for (int c = 0; c < 3; ++c) view.rgb[px * 3 + c] = p.albedo[c] * shade;
      view.labels[px] = static_cast<uint8_t>(p.class_id);
      view.depth[px] = hit.t;
    }
  return view;
}

Camera sample_orbit_camera(const Json& room, int index, int count, int width, int height,
                           double fov_deg, Rng& rng) {
  NSRF_CHECK(count >= 1 && index >= 0 && index < count, "sample_orbit_camera: index {} of {}",
             index, count);
  const Vec3 lo = vec3_from(room.value("min", Json()), "room.min");
  const Vec3 hi = vec3_from(room.value("max", Json()), "room.max");
  const Vec3 center = 0.5 * (lo + hi);
  const double rim = 0.45;  // keep clear of the shell
  const double r_max = 0.5 * std::min(hi.x() - lo.x(), hi.y() - lo.y()) - rim;
  const double room_h = hi.z() - lo.z();

  const double theta = 2.0 * kPi * (index + 0.5 * rng.uniform()) / count;
  const double radius = rng.uniform(0.6, 1.0) * r_max;
  const double z = lo.z() + rng.uniform(0.35, 0.75) * room_h;
  const Vec3 pos(center.x() + radius * std::cos(theta), center.y() + radius * std::sin(theta), z);

  Vec3 target = center + Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                              rng.uniform(-0.15, 0.15) * room_h);
  target.z() = std::clamp(target.z(), lo.z() + rim, hi.z() - rim);

  const Vec3 up(0.0, 0.0, 1.0);
  const Vec3 forward = (target - pos).normalized();
  Vec3 x_axis = forward.cross(up);
  if (x_axis.norm() < 1e-9) x_axis = Vec3(1.0, 0.0, 0.0);
  x_axis.normalize();
  const Vec3 y_axis = forward.cross(x_axis);  // unit, points groundward

  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.fx = cam.fy = (width / 2.0) / std::tan(fov_deg * kPi / 360.0);
  cam.rotation.row(0) = x_axis;
  cam.rotation.row(1) = y_axis;
  cam.rotation.row(2) = forward;
  cam.translation = -(cam.rotation * pos);
  cam.validate();
  return cam;
}

PairSelection select_pairs(const std::vector<Camera>& cameras, int n_sources, double near,
                           double far, double min_overlap, double min_translation,
                           double min_rotation_deg, int grid) {
  NSRF_CHECK(n_sources >= 1, "select_pairs: n_sources must be at least 1, got {}", n_sources);
  PairSelection out;
  const int n = static_cast<int>(cameras.size());
  for (int t = 0; t < n; ++t) {
    std::vector<std::pair<double, int>> admissible;  // (overlap, source index)
    for (int s = 0; s < n; ++s) {
      if (s == t) continue;
      const double dist = (cameras[static_cast<size_t>(t)].center() -
                           cameras[static_cast<size_t>(s)].center())
                              .norm();
      if (!(dist > min_translation)) continue;
      if (relative_rotation_deg(cameras[static_cast<size_t>(t)], cameras[static_cast<size_t>(s)]) <
          min_rotation_deg)
        continue;
      const double overlap = frustum_overlap(cameras[static_cast<size_t>(t)],
                                             cameras[static_cast<size_t>(s)], near, far, grid);
      if (overlap < min_overlap) continue;
      admissible.emplace_back(overlap, s);
    }
    if (static_cast<int>(admissible.size()) < n_sources) {
      ++out.dropped_targets;
      continue;
    }
    std::sort(admissible.begin(), admissible.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;  // highest overlap first
      return a.second < b.second;
    });
    ViewPair pair;
    pair.target = t;
    for (int k = 0; k < n_sources; ++k) pair.sources.push_back(admissible[static_cast<size_t>(k)].second);
    out.pairs.push_back(std::move(pair));
  }
  return out;
}

Json camera_to_json(const Camera& camera) {
  Json rot = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(camera.rotation(r, c));
  return Json{
      {"fx", camera.fx},       {"fy", camera.fy},
      {"cx", camera.cx},       {"cy", camera.cy},
      {"width", camera.width}, {"height", camera.height},
      {"rotation", rot},
      {"translation", {camera.translation.x(), camera.translation.y(), camera.translation.z()}},
  };
}

Camera camera_from_json(const Json& j) {
  Camera cam;
  try {
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    const Json& rot = j.at("rotation");
    const Json& tr = j.at("translation");
    if (rot.size() != 9 || tr.size() != 3)
      throw ConfigError("camera: rotation needs 9 entries, translation 3");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        cam.rotation(r, c) = rot[static_cast<size_t>(3 * r + c)].get<double>();
    for (int a = 0; a < 3; ++a) cam.translation[a] = tr[static_cast<size_t>(a)].get<double>();
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("camera: {}", e.what()));
  }
  cam.validate();
  return cam;
}

}  // namespace nsrf
