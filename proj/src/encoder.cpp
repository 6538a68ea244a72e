#include "nsrf/encoder.hpp"

#include <cmath>
#include <utility>

#include "nsrf/check.hpp"

namespace nsrf {
namespace {

ad::Tensor uniform_init(ad::Shape shape, double fan_in, double fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> v(static_cast<size_t>(ad::shape_numel(shape)));
  for (double& x : v) x = rng.uniform(-a, a);
  return ad::Tensor(std::move(shape), std::move(v));
}

}  // namespace

void init_encoder_params(ParamStore& store, const std::string& prefix, int k_dim, Rng& rng) {
  NSRF_CHECK(k_dim >= 1, "feature dimension must be positive, got {}", k_dim);
  auto conv = [&](const std::string& name, int64_t cin, int64_t cout) {
    store.add(prefix + name + ".w",
              uniform_init({cout, cin * 9}, static_cast<double>(cin) * 9.0,
                           static_cast<double>(cout) * 9.0, rng));
    store.add(prefix + name + ".b", ad::Tensor::zeros({cout}));
  };
  conv(".conv1", 3, 16);
  conv(".conv2", 16, 32);
  conv(".conv3", 32, 32);
  store.add(prefix + ".proj.w", uniform_init({32, k_dim}, 32.0, static_cast<double>(k_dim), rng));
  store.add(prefix + ".proj.b", ad::Tensor::zeros({k_dim}));
}

FeatureMap encode_features(const ad::Tensor& image, const Camera& camera,
                           const ParamGetter& params, const std::string& prefix) {
  NSRF_CHECK(image.rank() == 3 && image.dim(2) == 3, "encoder expects an [H x W x 3] image, got {}",
             ad::shape_str(image.shape()));
  const int64_t h = image.dim(0), w = image.dim(1);
  NSRF_CHECK(h == camera.height && w == camera.width,
             "image is {}x{} but the camera covers {}x{}", w, h, camera.width, camera.height);
  auto p = [&](const std::string& name) -> const ad::Tensor& { return params(prefix + name); };

  ad::Tensor x = ad::relu(ad::conv3x3(image, p(".conv1.w"), p(".conv1.b"), 1));
  x = ad::relu(ad::conv3x3(x, p(".conv2.w"), p(".conv2.b"), 2));
  x = ad::relu(ad::conv3x3(x, p(".conv3.w"), p(".conv3.b"), 1));
  x = ad::upsample2x_nn(x, h, w);
  x = ad::reshape(x, {h * w, 32});
  x = ad::linear(x, p(".proj.w"), p(".proj.b"));

  FeatureMap map;
  map.values = x;
  map.width = static_cast<int>(w);
  map.height = static_cast<int>(h);
  map.camera = camera;
  return map;
}

ad::GatherPlan build_gather_plan(const Camera& camera, const std::vector<Vec3>& points) {
  const int64_t w = camera.width, h = camera.height;
  ad::GatherPlan plan;
  plan.rows = static_cast<int64_t>(points.size());
  plan.index.assign(static_cast<size_t>(plan.rows) * 4, -1);
  plan.weight.assign(static_cast<size_t>(plan.rows) * 4, 0.0);
  for (int64_t r = 0; r < plan.rows; ++r) {
    Projection pr = project(camera, points[static_cast<size_t>(r)]);
    if (!pr.in_front) continue;
    if (pr.u < 0.0 || pr.u > static_cast<double>(w) || pr.v < 0.0 || pr.v > static_cast<double>(h))
      continue;
    // Pixel centers sit at integer+0.5 coordinates; shift so interpolation
    // cells are unit squares between centers.
    const double gx = pr.u - 0.5, gy = pr.v - 0.5;
    const double fx0 = std::floor(gx), fy0 = std::floor(gy);
    const int64_t x0 = static_cast<int64_t>(fx0), y0 = static_cast<int64_t>(fy0);
    const double fx = gx - fx0, fy = gy - fy0;
    const int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
    const double ws[4] = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy};
    for (int j = 0; j < 4; ++j) {
      if (xs[j] < 0 || xs[j] >= w || ys[j] < 0 || ys[j] >= h) continue;  // zero border
      plan.index[static_cast<size_t>(r * 4 + j)] = ys[j] * w + xs[j];
      plan.weight[static_cast<size_t>(r * 4 + j)] = ws[j];
    }
  }
  return plan;
}

ad::Tensor sample_features(const FeatureMap& map, const ad::GatherPlan& plan) {
  NSRF_CHECK(map.values.rank() == 2 &&
                 map.values.dim(0) == static_cast<int64_t>(map.width) * map.height,
             "feature map shape {} does not match {}x{}", ad::shape_str(map.values.shape()),
             map.width, map.height);
  return ad::bilinear_gather(map.values, plan);
}

std::vector<double> sample_feature(const FeatureMap& map, const Vec3& x) {
  ad::GatherPlan plan = build_gather_plan(map.camera, {x});
  ad::Tensor row = sample_features(map, plan);
  return row.values();
}

}  // namespace nsrf
