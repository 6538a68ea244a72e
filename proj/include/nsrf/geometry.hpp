#pragma once

#include <Eigen/Dense>
#include <vector>

#include "nsrf/rng.hpp"

namespace nsrf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Pinhole camera. rotation/translation map world points into the camera
// frame: x_cam = R * x + t; the camera center in world space is -Rᵀ t.
// Pixels use u rightward, v downward, origin at the top-left corner, pixel
// centers at half-integers.
struct Camera {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 center() const { return -(rotation.transpose() * translation); }

  // Rejects non-orthonormal rotations, non-positive focals, and principal
  // points outside the image.
  void validate() const;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::Zero();  // unit length
  double u = 0.0, v = 0.0;        // source pixel
};

struct Projection {
  double u = 0.0, v = 0.0;
  double depth = 0.0;  // camera-frame z, meters
  bool in_front = false;
};

// Ray through pixel (u, v), originating at the camera center. The pixel must
// lie within [0, width] x [0, height].
Ray generate_ray(const Camera& camera, double u, double v);

// Pixel coordinates and camera-frame depth of a world point. Points at or
// behind the camera plane are flagged rather than rejected.
Projection project(const Camera& camera, const Vec3& point);

// [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x)]
// laid out in blocks of n: the raw input first, then one sin and one cos
// block per octave. Output length n * (2L + 1).
std::vector<double> positional_encoding(const double* x, int n, int octaves);
std::vector<double> positional_encoding(const Vec3& x, int octaves);

// Composes per-axis rotations by angles drawn uniformly from
// [-max_angle_deg, +max_angle_deg] about X, then Y, then Z onto the camera
// rotation. Translation is unchanged.
Camera perturb_camera(const Camera& camera, double max_angle_deg, Rng& rng);

// Geodesic angle of R_a * R_bᵀ in degrees.
double relative_rotation_deg(const Camera& a, const Camera& b);

// Regular grid of points filling a camera's frustum: grid steps across the
// image in u and v and across [near, far] in depth, at cell centers.
std::vector<Vec3> frustum_points(const Camera& camera, double near, double far, int grid);

// True when the point projects inside the image with depth in [near, far].
bool point_in_frustum(const Camera& camera, const Vec3& point, double near, double far);

// Fraction of a's frustum grid that lies inside b's frustum. Directional:
// overlap(a, b) need not equal overlap(b, a).
double frustum_overlap(const Camera& a, const Camera& b, double near, double far, int grid);

}  // namespace nsrf
