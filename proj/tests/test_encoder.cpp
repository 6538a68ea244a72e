#include <doctest.h>

#include <cmath>
#include <cstring>

#include "nsrf/encoder.hpp"
#include "nsrf/ops.hpp"
#include "test_util.hpp"

using namespace nsrf;
using namespace nsrf_test;

namespace {

ad::Tensor random_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  return ad::Tensor({h, w, 3}, random_values(rng, int64_t{3} * h * w, 0.0, 1.0));
}

// Map whose row p is an affine ramp per channel, handy for exact checks.
FeatureMap ramp_map(const Camera& cam, int k) {
  const int64_t rows = int64_t{cam.width} * cam.height;
  std::vector<double> v(static_cast<size_t>(rows * k));
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < k; ++c)
      v[static_cast<size_t>(r * k + c)] = static_cast<double>(r) + 1000.0 * c;
  FeatureMap map;
  map.values = ad::Tensor({rows, k}, std::move(v));
  map.width = cam.width;
  map.height = cam.height;
  map.camera = cam;
  return map;
}

}  // namespace

TEST_CASE("feature maps keep the source extents") {
  ParamStore store;
  Rng rng(3);
  init_encoder_params(store, "enc", 5, rng);
  for (auto [h, w] : {std::pair{8, 8}, {9, 13}, {16, 12}}) {
    Camera cam = axis_camera(w, h, 20.0);
    FeatureMap map = encode_features(random_image(h, w, 7), cam, getter(store), "enc");
    CHECK(map.width == w);
    CHECK(map.height == h);
    REQUIRE(map.values.rank() == 2);
    CHECK(map.values.dim(0) == int64_t{h} * w);
    CHECK(map.values.dim(1) == 5);
    for (int64_t i = 0; i < map.values.numel(); ++i) CHECK(std::isfinite(map.values.at(i)));
  }
}

TEST_CASE("identical images produce identical feature maps") {
  ParamStore store;
  Rng rng(4);
  init_encoder_params(store, "enc", 6, rng);
  Camera cam = axis_camera(10, 8, 20.0);
  ad::Tensor image = random_image(8, 10, 21);
  FeatureMap a = encode_features(image, cam, getter(store), "enc");
  FeatureMap b = encode_features(image, cam, getter(store), "enc");
  CHECK(same_bits(a.values, b.values));
}

TEST_CASE("encoder gradients match finite differences on an 8x8 probe") {
  ParamStore store;
  Rng rng(5);
  init_encoder_params(store, "enc", 3, rng);
  Camera cam = axis_camera(8, 8, 16.0);
  ad::Tensor image = random_image(8, 8, 22);
  require_store_fd(
      store,
      [&](const ParamGetter& p) {
        FeatureMap map = encode_features(image, cam, p, "enc");
        return ad::sum(ad::slice_cols(map.values, 1, 2));
      },
      1e-4);
}

TEST_CASE("sampling at a pixel center returns that pixel's features") {
  Camera cam = axis_camera(8, 8, 10.0);
  FeatureMap map = ramp_map(cam, 2);
  for (auto [px, py] : {std::pair{3, 2}, {0, 0}, {7, 7}}) {
    Vec3 x = point_at_pixel(cam, px + 0.5, py + 0.5, 2.0);
    std::vector<double> f = sample_feature(map, x);
    REQUIRE(f.size() == 2);
    const int64_t row = int64_t{py} * 8 + px;
    CHECK(f[0] == doctest::Approx(map.values.at(row * 2 + 0)).epsilon(1e-12));
    CHECK(f[1] == doctest::Approx(map.values.at(row * 2 + 1)).epsilon(1e-12));
  }
}

TEST_CASE("sampling midway between horizontal neighbours averages them") {
  Camera cam = axis_camera(8, 8, 10.0);
  FeatureMap map = ramp_map(cam, 2);
  Vec3 x = point_at_pixel(cam, 4.0, 2.5, 2.0);  // between centers (3.5, 2.5) and (4.5, 2.5)
  std::vector<double> f = sample_feature(map, x);
  const int64_t left = 2 * 8 + 3, right = 2 * 8 + 4;
  for (int c = 0; c < 2; ++c) {
    const double mean = 0.5 * (map.values.at(left * 2 + c) + map.values.at(right * 2 + c));
    CHECK(f[static_cast<size_t>(c)] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("behind-camera and off-image points sample zero") {
  Camera cam = axis_camera(8, 8, 10.0);
  FeatureMap map = ramp_map(cam, 3);
  for (const Vec3& x : {Vec3{0.0, 0.0, -1.0}, Vec3{50.0, 0.0, 2.0}, Vec3{0.0, -40.0, 2.0}}) {
    std::vector<double> f = sample_feature(map, x);
    for (double v : f) CHECK(v == 0.0);
  }
  ad::GatherPlan plan = build_gather_plan(cam, {Vec3{0.0, 0.0, -1.0}});
  for (int j = 0; j < 4; ++j) CHECK(plan.index[static_cast<size_t>(j)] == -1);
}

TEST_CASE("interior bilinear weights are nonnegative and sum to one") {
  Camera cam = axis_camera(16, 12, 10.0);
  Rng rng(9);
  std::vector<Vec3> points;
  for (int i = 0; i < 200; ++i) {
    const double u = rng.uniform(0.5, 15.5), v = rng.uniform(0.5, 11.5);
    points.push_back(point_at_pixel(cam, u, v, rng.uniform(0.5, 5.0)));
  }
  ad::GatherPlan plan = build_gather_plan(cam, points);
  for (int64_t r = 0; r < plan.rows; ++r) {
    double sum = 0.0;
    for (int j = 0; j < 4; ++j) {
      const size_t idx = static_cast<size_t>(r * 4 + j);
      REQUIRE(plan.index[idx] >= 0);
      REQUIRE(plan.index[idx] < int64_t{16} * 12);
      CHECK(plan.weight[idx] >= 0.0);
      sum += plan.weight[idx];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("sampling is continuous along a pixel sweep") {
  Camera cam = axis_camera(8, 8, 10.0);
  Rng rng(10);
  const int k = 3;
  const int64_t rows = 64;
  FeatureMap map;
  map.values = ad::Tensor({rows, k}, random_values(rng, rows * k, -1.0, 1.0));
  map.width = map.height = 8;
  map.camera = cam;

  // Horizontal Lipschitz bound: largest channel gap between u-adjacent rows.
  double lip = 0.0;
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 0; x + 1 < 8; ++x)
      for (int c = 0; c < k; ++c)
        lip = std::max(lip, std::abs(map.values.at((y * 8 + x) * k + c) -
                                     map.values.at((y * 8 + x + 1) * k + c)));

  const double eps = 0.01;
  std::vector<double> prev = sample_feature(map, point_at_pixel(cam, 1.0, 3.7, 2.0));
  for (double u = 1.0 + eps; u <= 7.0; u += eps) {
    std::vector<double> cur = sample_feature(map, point_at_pixel(cam, u, 3.7, 2.0));
    for (int c = 0; c < k; ++c)
      CHECK(std::abs(cur[static_cast<size_t>(c)] - prev[static_cast<size_t>(c)]) <=
            eps * lip * (1.0 + 1e-6) + 1e-12);
    prev = std::move(cur);
  }
}

TEST_CASE("gathered feature gradients flow back to the map") {
  Camera cam = axis_camera(8, 8, 10.0);
  Rng rng(11);
  const int64_t rows = 64;
  std::vector<Vec3> pts = {point_at_pixel(cam, 2.3, 4.1, 1.5), point_at_pixel(cam, 6.8, 1.2, 3.0),
                           Vec3{0.0, 0.0, -2.0}};
  ad::GatherPlan plan = build_gather_plan(cam, pts);

  ParamStore store;
  store.add("map", ad::Tensor({rows, 2}, random_values(rng, rows * 2, -1.0, 1.0)));
  require_store_fd(
      store,
      [&](const ParamGetter& p) {
        FeatureMap map;
        map.values = p("map");
        map.width = map.height = 8;
        map.camera = cam;
        return ad::sum(sample_features(map, plan));
      },
      1e-6);
}
