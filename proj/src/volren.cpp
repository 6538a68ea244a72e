#include "nsrf/volren.hpp"

#include <algorithm>
#include <cmath>

#include "nsrf/check.hpp"

namespace nsrf {
namespace {

std::vector<double> deltas_for(const std::vector<double>& ts, double t_far) {
  std::vector<double> d(ts.size());
  for (size_t i = 0; i + 1 < ts.size(); ++i) d[i] = ts[i + 1] - ts[i];
  d.back() = t_far - ts.back();
  return d;
}

}  // namespace

RaySamples stratified_samples(double t_near, double t_far, int n, Rng& rng) {
  NSRF_CHECK(0.0 < t_near && t_near < t_far, "need 0 < t_near < t_far, got [{}, {}]", t_near,
             t_far);
  NSRF_CHECK(n >= 1, "need at least one sample, got {}", n);
  RaySamples s;
  s.t_near = t_near;
  s.t_far = t_far;
  s.ts.resize(static_cast<size_t>(n));
  const double width = (t_far - t_near) / n;
  for (int i = 0; i < n; ++i) s.ts[static_cast<size_t>(i)] = t_near + (i + rng.uniform()) * width;
  s.deltas = deltas_for(s.ts, t_far);
  return s;
}

RaySamples importance_samples(const RaySamples& coarse, const std::vector<double>& weights,
                              int n_fine, Rng& rng) {
  NSRF_CHECK(n_fine >= 0, "fine sample count must be nonnegative, got {}", n_fine);
  NSRF_CHECK(weights.size() == coarse.ts.size(), "{} weights for {} coarse samples",
             weights.size(), coarse.ts.size());
  const size_t nc = coarse.ts.size();
  // Piecewise-constant density over the coarse bins, floored so the
  // inverse CDF stays defined when all weights vanish.
  std::vector<double> cdf(nc);
  double total = 0.0;
  for (size_t i = 0; i < nc; ++i) {
    NSRF_CHECK(weights[i] >= 0.0, "negative quadrature weight {}", weights[i]);
    total += (weights[i] + 1e-5) * coarse.deltas[i];
    cdf[i] = total;
  }
  std::vector<double> merged = coarse.ts;
  merged.reserve(nc + static_cast<size_t>(n_fine));
  for (int k = 0; k < n_fine; ++k) {
    const double u = rng.uniform() * total;
    const size_t i = static_cast<size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    const size_t bin = std::min(i, nc - 1);
    const double lo = bin == 0 ? 0.0 : cdf[bin - 1];
    const double mass = cdf[bin] - lo;
    const double frac = mass > 0.0 ? (u - lo) / mass : 0.5;
    merged.push_back(coarse.ts[bin] + frac * coarse.deltas[bin]);
  }
  std::sort(merged.begin(), merged.end());
  for (size_t i = 1; i < merged.size(); ++i)
    if (merged[i] <= merged[i - 1]) merged[i] = merged[i - 1] + 1e-9;

  RaySamples s;
  s.t_near = coarse.t_near;
  s.t_far = coarse.t_far;
  s.ts = std::move(merged);
  s.deltas = deltas_for(s.ts, s.t_far);
  return s;
}

std::pair<std::vector<double>, double> quadrature_weights(const std::vector<double>& sigmas,
                                                          const RaySamples& samples) {
  NSRF_CHECK(sigmas.size() == samples.ts.size(), "{} densities for {} samples", sigmas.size(),
             samples.ts.size());
  std::vector<double> w(sigmas.size());
  double acc = 0.0;
  for (size_t i = 0; i < sigmas.size(); ++i) {
    NSRF_CHECK(sigmas[i] >= 0.0, "negative density {}", sigmas[i]);
    const double sd = sigmas[i] * samples.deltas[i];
    w[i] = std::exp(-acc) * (1.0 - std::exp(-sd));
    acc += sd;
  }
  return {std::move(w), std::exp(-acc)};
}

RenderedRay composite(const std::vector<double>& weights, double residual_t,
                      const std::vector<FieldOutput>& outputs, const RaySamples& samples,
                      bool depth_residual) {
  NSRF_CHECK(weights.size() == outputs.size() && weights.size() == samples.ts.size(),
             "composite length mismatch: {} weights, {} outputs, {} samples", weights.size(),
             outputs.size(), samples.ts.size());
  RenderedRay ray;
  ray.weights = weights;
  ray.residual_t = residual_t;
  const size_t n_fg = outputs.empty() ? 0 : outputs.front().semantics.size();
  ray.s_hat.assign(n_fg + 1, 0.0);
  ray.s_hat[0] = residual_t;
  ray.d_hat = depth_residual ? residual_t * samples.t_far : 0.0;
  for (size_t i = 0; i < outputs.size(); ++i) {
    const FieldOutput& o = outputs[i];
    NSRF_CHECK(o.semantics.size() == n_fg, "inconsistent class counts along the ray");
    for (size_t k = 0; k < n_fg; ++k) ray.s_hat[k + 1] += weights[i] * o.semantics[k];
    for (int c = 0; c < 3; ++c)
      ray.c_hat[static_cast<size_t>(c)] += weights[i] * o.color[static_cast<size_t>(c)];
    ray.d_hat += weights[i] * samples.ts[i];
  }
  return ray;
}

QuadratureBatch quadrature_weights_batch(const ad::Tensor& sigma, const ad::Tensor& deltas) {
  NSRF_CHECK(deltas.rank() == 2, "deltas must be [R x P], got {}", ad::shape_str(deltas.shape()));
  const int64_t rows = deltas.dim(0), per_ray = deltas.dim(1);
  NSRF_CHECK(sigma.numel() == rows * per_ray, "{} densities for {} x {} rays/samples",
             sigma.numel(), rows, per_ray);
  ad::Tensor sig = ad::reshape(sigma, {rows, per_ray});
  ad::Tensor sigdel = ad::mul(sig, deltas);
  ad::Tensor transmittance = ad::exp(ad::neg(ad::cumsum_exclusive_rows(sigdel)));
  ad::Tensor absorb =
      ad::sub(ad::Tensor::full({rows, per_ray}, 1.0), ad::exp(ad::neg(sigdel)));
  QuadratureBatch q;
  q.weights = ad::mul(transmittance, absorb);
  q.residual = ad::exp(ad::neg(ad::sum_axis(sigdel, 1)));
  return q;
}

RenderedBatch composite_batch(const QuadratureBatch& quad, const FieldBatch& field,
                              const ad::Tensor& ts, double t_far, bool depth_residual) {
  RenderedBatch out;
  out.weights = quad.weights;
  out.residual = quad.residual;
  out.s_hat = ad::concat(quad.residual, ad::weighted_sum_rows(quad.weights, field.semantics), 1);
  out.c_hat = ad::weighted_sum_rows(quad.weights, field.color);
  ad::Tensor depth = ad::sum_axis(ad::mul(quad.weights, ts), 1);
  if (depth_residual) depth = ad::add(depth, ad::scale(quad.residual, t_far));
  out.d_hat = depth;
  return out;
}

RenderedBatch render_with_samples(const std::vector<Ray>& rays,
                                  const std::vector<RaySamples>& samples,
                                  const std::vector<FeatureMap>& sources,
                                  const ParamGetter& params, const std::string& prefix,
                                  const FieldDims& dims, const RenderConfig& cfg) {
  NSRF_CHECK(!rays.empty() && rays.size() == samples.size(),
             "{} rays with {} sample sets", rays.size(), samples.size());
  const int64_t n_rays = static_cast<int64_t>(rays.size());
  const int64_t per_ray = static_cast<int64_t>(samples.front().ts.size());
  const int64_t n_points = n_rays * per_ray;
  const int64_t g_dim = cfg.gamma_dim();

  std::vector<Vec3> points;
  points.reserve(static_cast<size_t>(n_points));
  std::vector<double> gamma_buf(static_cast<size_t>(n_points * g_dim));
  std::vector<double> dir_buf(static_cast<size_t>(n_points * 3));
  std::vector<double> ts_buf(static_cast<size_t>(n_points));
  std::vector<double> delta_buf(static_cast<size_t>(n_points));
  for (int64_t r = 0; r < n_rays; ++r) {
    const Ray& ray = rays[static_cast<size_t>(r)];
    const RaySamples& s = samples[static_cast<size_t>(r)];
    NSRF_CHECK(static_cast<int64_t>(s.ts.size()) == per_ray, "ragged sample counts in one pass");
    for (int64_t i = 0; i < per_ray; ++i) {
      const int64_t row = r * per_ray + i;
      const double t = s.ts[static_cast<size_t>(i)];
      const Vec3 x = ray.origin + t * ray.direction;
      points.push_back(x);
      std::vector<double> enc = positional_encoding(x, cfg.pe_octaves);
      std::copy(enc.begin(), enc.end(), gamma_buf.begin() + row * g_dim);
      dir_buf[static_cast<size_t>(row * 3 + 0)] = ray.direction.x();
      dir_buf[static_cast<size_t>(row * 3 + 1)] = ray.direction.y();
      dir_buf[static_cast<size_t>(row * 3 + 2)] = ray.direction.z();
      ts_buf[static_cast<size_t>(row)] = t;
      delta_buf[static_cast<size_t>(row)] = s.deltas[static_cast<size_t>(i)];
    }
  }
  ad::Tensor gamma({n_points, g_dim}, std::move(gamma_buf));
  ad::Tensor dirs({n_points, 3}, std::move(dir_buf));
  ad::Tensor ts({n_rays, per_ray}, std::move(ts_buf));
  ad::Tensor deltas({n_rays, per_ray}, std::move(delta_buf));

  std::vector<ad::Tensor> feats;
  feats.reserve(sources.size());
  for (const FeatureMap& map : sources)
    feats.push_back(sample_features(map, build_gather_plan(map.camera, points)));

  FieldBatch field = field_eval_batch(gamma, dirs, feats, params, prefix, dims, cfg.use_viewdir);
  QuadratureBatch quad = quadrature_weights_batch(field.sigma, deltas);
  return composite_batch(quad, field, ts, cfg.t_far, cfg.depth_residual);
}

RenderResult render_rays(const std::vector<Ray>& rays, const std::vector<FeatureMap>& sources,
                         const ParamGetter& params, const std::string& coarse_prefix,
                         const std::string& fine_prefix, const FieldDims& dims,
                         const RenderConfig& cfg, const Rng& rng, int64_t ray_offset) {
  NSRF_CHECK(!rays.empty(), "empty ray batch");
  NSRF_CHECK(!sources.empty(), "rendering needs at least one source view");
  const int64_t n_rays = static_cast<int64_t>(rays.size());

  std::vector<RaySamples> coarse_samples(static_cast<size_t>(n_rays));
  for (int64_t r = 0; r < n_rays; ++r) {
    Rng draw = rng.fork(static_cast<uint64_t>(ray_offset + r)).fork(0);
    coarse_samples[static_cast<size_t>(r)] =
        stratified_samples(cfg.t_near, cfg.t_far, cfg.n_coarse, draw);
  }

  RenderResult out;
  out.coarse = render_with_samples(rays, coarse_samples, sources, params, coarse_prefix, dims, cfg);

  // Fine locations depend on coarse weights as numbers only; no gradient
  // flows through the sample placement.
  const std::vector<double>& w = out.coarse.weights.values();
  std::vector<RaySamples> fine_samples(static_cast<size_t>(n_rays));
  for (int64_t r = 0; r < n_rays; ++r) {
    std::vector<double> row(w.begin() + r * cfg.n_coarse, w.begin() + (r + 1) * cfg.n_coarse);
    Rng draw = rng.fork(static_cast<uint64_t>(ray_offset + r)).fork(1);
    fine_samples[static_cast<size_t>(r)] =
        importance_samples(coarse_samples[static_cast<size_t>(r)], row, cfg.n_fine, draw);
  }
  out.fine = render_with_samples(rays, fine_samples, sources, params, fine_prefix, dims, cfg);
  return out;
}

}  // namespace nsrf
