#include "nsrf/geometry.hpp"

#include <cmath>

#include "nsrf/check.hpp"

namespace nsrf {

namespace {

constexpr double kPi = 3.14159265358979323846;

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

}  // namespace

void Camera::validate() const {
  NSRF_CHECK(fx > 0.0 && fy > 0.0, "camera: focal lengths must be positive, got fx {} fy {}", fx,
             fy);
  NSRF_CHECK(width >= 1 && height >= 1, "camera: image extents must be positive, got {}x{}",
             width, height);
  NSRF_CHECK(0.0 < cx && cx < width, "camera: cx {} outside (0, {})", cx, width);
  NSRF_CHECK(0.0 < cy && cy < height, "camera: cy {} outside (0, {})", cy, height);
  const Mat3 gram = rotation.transpose() * rotation;
  const double dev = (gram - Mat3::Identity()).cwiseAbs().maxCoeff();
  NSRF_CHECK(dev < 1e-9, "camera: rotation is not orthonormal (deviation {})", dev);
  NSRF_CHECK(rotation.determinant() > 0.0, "camera: rotation must have determinant +1");
}

Ray generate_ray(const Camera& camera, double u, double v) {
  NSRF_CHECK(0.0 <= u && u <= camera.width && 0.0 <= v && v <= camera.height,
             "generate_ray: pixel ({}, {}) outside {}x{} image", u, v, camera.width,
             camera.height);
  const Vec3 dir_cam((u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0);
  Ray ray;
  ray.origin = camera.center();
  ray.direction = (camera.rotation.transpose() * dir_cam).normalized();
  ray.u = u;
  ray.v = v;
  return ray;
}

Projection project(const Camera& camera, const Vec3& point) {
  const Vec3 p = camera.rotation * point + camera.translation;
  Projection out;
  out.depth = p.z();
  out.in_front = p.z() > 0.0;
  if (!out.in_front) return out;
  out.u = camera.cx + camera.fx * p.x() / p.z();
  out.v = camera.cy + camera.fy * p.y() / p.z();
  return out;
}

std::vector<double> positional_encoding(const double* x, int n, int octaves) {
  NSRF_CHECK(n >= 0 && octaves >= 0, "positional_encoding: n {} octaves {}", n, octaves);
  std::vector<double> out(static_cast<size_t>(n) * (2 * static_cast<size_t>(octaves) + 1));
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = x[i];
  size_t at = static_cast<size_t>(n);
  for (int l = 0; l < octaves; ++l) {
    const double freq = std::ldexp(kPi, l);  // 2^l * pi
    for (int i = 0; i < n; ++i) out[at++] = std::sin(freq * x[i]);
    for (int i = 0; i < n; ++i) out[at++] = std::cos(freq * x[i]);
  }
  return out;
}

std::vector<double> positional_encoding(const Vec3& x, int octaves) {
  return positional_encoding(x.data(), 3, octaves);
}

Camera perturb_camera(const Camera& camera, double max_angle_deg, Rng& rng) {
  NSRF_CHECK(max_angle_deg >= 0.0, "perturb_camera: negative angle bound {}", max_angle_deg);
  const double to_rad = kPi / 180.0;
  const double ax = rng.uniform(-max_angle_deg, max_angle_deg) * to_rad;
  const double ay = rng.uniform(-max_angle_deg, max_angle_deg) * to_rad;
  const double az = rng.uniform(-max_angle_deg, max_angle_deg) * to_rad;
  Camera out = camera;
  out.rotation = rot_z(az) * rot_y(ay) * rot_x(ax) * camera.rotation;
  return out;
}

double relative_rotation_deg(const Camera& a, const Camera& b) {
  const Mat3 rel = a.rotation * b.rotation.transpose();
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / kPi;
}

std::vector<Vec3> frustum_points(const Camera& camera, double near, double far, int grid) {
  NSRF_CHECK(near < far, "frustum_points: near {} must be below far {}", near, far);
  NSRF_CHECK(grid >= 2, "frustum_points: grid must be at least 2, got {}", grid);
  std::vector<Vec3> points;
  points.reserve(static_cast<size_t>(grid) * grid * grid);
  const Mat3 r_inv = camera.rotation.transpose();
  for (int k = 0; k < grid; ++k) {
    const double z = near + (k + 0.5) / grid * (far - near);
    for (int j = 0; j < grid; ++j) {
      const double v = (j + 0.5) / grid * camera.height;
      for (int i = 0; i < grid; ++i) {
        const double u = (i + 0.5) / grid * camera.width;
        const Vec3 cam((u - camera.cx) / camera.fx * z, (v - camera.cy) / camera.fy * z, z);
        points.push_back(r_inv * (cam - camera.translation));
      }
    }
  }
  return points;
}

bool point_in_frustum(const Camera& camera, const Vec3& point, double near, double far) {
  const Projection p = project(camera, point);
  return p.in_front && p.depth >= near && p.depth <= far && p.u >= 0.0 && p.u <= camera.width &&
         p.v >= 0.0 && p.v <= camera.height;
}

double frustum_overlap(const Camera& a, const Camera& b, double near, double far, int grid) {
  const std::vector<Vec3> points = frustum_points(a, near, far, grid);
  size_t inside = 0;
  for (const Vec3& p : points)
    if (point_in_frustum(b, p, near, far)) ++inside;
  return static_cast<double>(inside) / static_cast<double>(points.size());
}

}  // namespace nsrf
