#pragma once

#include <string>
#include <vector>

#include "nsrf/geometry.hpp"
#include "nsrf/ops.hpp"
#include "nsrf/params.hpp"
#include "nsrf/rng.hpp"

namespace nsrf {

// K-channel feature map of one source view, stored flat as [H*W x K] so
// sampling is a sparse row gather. Lives on a tape during training.
struct FeatureMap {
  ad::Tensor values;
  int width = 0, height = 0;
  Camera camera;
};

// Registers the encoder weights under `prefix`: three 3x3 convolutions
// (3->16 stride 1, 16->32 stride 2, 32->32 stride 1) and a 1x1 projection
// (32->k_dim). Weights are uniform in ±sqrt(6/(fan_in+fan_out)) with the
// receptive field counted in the fans; biases start at zero.
void init_encoder_params(ParamStore& store, const std::string& prefix, int k_dim, Rng& rng);

// Same-resolution feature extraction: conv/relu at full and half resolution,
// nearest-neighbour upsample back, per-pixel projection to k_dim channels.
FeatureMap encode_features(const ad::Tensor& image, const Camera& camera,
                           const ParamGetter& params, const std::string& prefix);

// Projection of world points into a map's image plane as a bilinear gather
// plan: rows with four in-bounds neighbours mix them with unit-sum weights;
// neighbours falling off the image contribute zero; points behind the
// camera or projecting outside the image produce all-zero rows.
ad::GatherPlan build_gather_plan(const Camera& camera, const std::vector<Vec3>& points);

// Feature rows for each planned point: [P x K].
ad::Tensor sample_features(const FeatureMap& map, const ad::GatherPlan& plan);

// Single-point convenience used by tests.
std::vector<double> sample_feature(const FeatureMap& map, const Vec3& x);

}  // namespace nsrf
