#pragma once

#include <utility>
#include <vector>

#include "nsrf/encoder.hpp"
#include "nsrf/field.hpp"
#include "nsrf/geometry.hpp"
#include "nsrf/ops.hpp"
#include "nsrf/rng.hpp"

namespace nsrf {

// Sample depths along one ray. ts lie strictly ascending inside
// (t_near, t_far); deltas[i] = ts[i+1] - ts[i] and the last delta reaches
// t_far.
struct RaySamples {
  std::vector<double> ts;
  std::vector<double> deltas;
  double t_near = 0.0;
  double t_far = 0.0;
};

// One uniform draw per equal-width bin of [t_near, t_far].
RaySamples stratified_samples(double t_near, double t_far, int n, Rng& rng);

// Inverse-transform draws from the piecewise-constant density proportional
// to (weights + 1e-5) over the coarse bins, merged and sorted with the
// coarse depths (ties separated by 1e-9). The result covers coarse+fine.
RaySamples importance_samples(const RaySamples& coarse, const std::vector<double>& weights,
                              int n_fine, Rng& rng);

// Transmittance quadrature for one ray: weights[i] = T_i(1 - exp(-sigma_i
// delta_i)) with T_i = exp(-sum_{j<i} sigma_j delta_j); the residual is the
// transmittance past t_far. Weights and residual sum to 1.
std::pair<std::vector<double>, double> quadrature_weights(const std::vector<double>& sigmas,
                                                          const RaySamples& samples);

// One composited ray. s_hat spans all classes with index 0 = background,
// which receives the residual transmittance.
struct RenderedRay {
  std::vector<double> s_hat;
  std::array<double, 3> c_hat{};
  double d_hat = 0.0;
  std::vector<double> weights;
  double residual_t = 0.0;
};

// Composites per-sample field values under the given weights. With
// depth_residual the leftover transmittance contributes t_far to depth;
// without it depth is the bare weighted sum (the literal integral form).
RenderedRay composite(const std::vector<double>& weights, double residual_t,
                      const std::vector<FieldOutput>& outputs, const RaySamples& samples,
                      bool depth_residual);

// Batched, differentiable forms. sigma is [R*P x 1] row-per-sample (ray
// major); ts/deltas are [R x P] constants.
struct QuadratureBatch {
  ad::Tensor weights;   // [R x P]
  ad::Tensor residual;  // [R x 1]
};
QuadratureBatch quadrature_weights_batch(const ad::Tensor& sigma, const ad::Tensor& deltas);

struct RenderedBatch {
  ad::Tensor s_hat;     // [R x (1+n_fg)], col 0 background
  ad::Tensor c_hat;     // [R x 3]
  ad::Tensor d_hat;     // [R x 1]
  ad::Tensor weights;   // [R x P]
  ad::Tensor residual;  // [R x 1]
};
RenderedBatch composite_batch(const QuadratureBatch& quad, const FieldBatch& field,
                              const ad::Tensor& ts, double t_far, bool depth_residual);

struct RenderConfig {
  double t_near = 0.1;
  double t_far = 20.0;
  int n_coarse = 64;
  int n_fine = 128;
  int pe_octaves = 6;
  bool use_viewdir = true;
  bool depth_residual = true;

  int gamma_dim() const { return 3 * (2 * pe_octaves + 1); }
};

// Single-pass render of a ray batch from caller-supplied sample depths
// (one RaySamples per ray, equal counts). Differentiable w.r.t. params and
// feature maps; the depths themselves are constants, matching the training
// convention that no gradient flows through sample placement.
RenderedBatch render_with_samples(const std::vector<Ray>& rays,
                                  const std::vector<RaySamples>& samples,
                                  const std::vector<FeatureMap>& sources,
                                  const ParamGetter& params, const std::string& prefix,
                                  const FieldDims& dims, const RenderConfig& cfg);

// Full two-pass render of a ray batch against a set of source-view feature
// maps. rng is forked per absolute ray index (ray_offset + position;
// substream 0 feeds the coarse draw, substream 1 the fine draw), so results
// do not depend on how a larger batch was chunked.
struct RenderResult {
  RenderedBatch coarse;
  RenderedBatch fine;
};
RenderResult render_rays(const std::vector<Ray>& rays, const std::vector<FeatureMap>& sources,
                         const ParamGetter& params, const std::string& coarse_prefix,
                         const std::string& fine_prefix, const FieldDims& dims,
                         const RenderConfig& cfg, const Rng& rng, int64_t ray_offset = 0);

}  // namespace nsrf
