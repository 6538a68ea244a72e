#pragma once

#include <array>
#include <string>
#include <vector>

#include "nsrf/encoder.hpp"
#include "nsrf/geometry.hpp"
#include "nsrf/ops.hpp"
#include "nsrf/params.hpp"
#include "nsrf/rng.hpp"

namespace nsrf {

// Widths of the implicit field network. gamma_dim is the positional-encoding
// length 3*(2*octaves+1); n_fg_classes excludes the background class, which
// is produced at compositing from leftover transmittance.
struct FieldDims {
  int gamma_dim = 0;
  int feat_dim = 0;
  int hidden = 128;
  int n_fg_classes = 0;
};

// One point's field value.
struct FieldOutput {
  std::array<double, 3> color{};    // each in [0,1]
  double sigma = 0.0;               // >= 0, units 1/meter
  std::vector<double> semantics;    // simplex over foreground classes
};

// Batched field values, differentiable when inputs/params live on a tape.
struct FieldBatch {
  ad::Tensor color;      // [P x 3]
  ad::Tensor sigma;      // [P x 1]
  ad::Tensor semantics;  // [P x n_fg_classes]
};

// Registers the field weights under `prefix`: split input projections for
// the encoding, direction, and per-view feature, a trunk of 3 residual
// blocks shared across views, then after mean pooling a 2-block semantic
// head (softmax over foreground classes) and a 2-block geometry head
// (sigmoid color, softplus density).
void init_field_params(ParamStore& store, const std::string& prefix, const FieldDims& dims,
                       Rng& rng);

// Evaluates the field at P points. gamma is [P x gamma_dim], dirs [P x 3]
// (unit rows), and view_features holds one [P x feat_dim] tensor per source
// view (at least one). Views are mean-pooled with a permutation-invariant
// reduction. With use_viewdir=false the direction term is dropped, making
// the output independent of dirs.
FieldBatch field_eval_batch(const ad::Tensor& gamma, const ad::Tensor& dirs,
                            const std::vector<ad::Tensor>& view_features,
                            const ParamGetter& params, const std::string& prefix,
                            const FieldDims& dims, bool use_viewdir);

// Single-point convenience: encodes x positionally and runs a batch of one.
FieldOutput field_eval(const Vec3& x, const Vec3& d,
                       const std::vector<std::vector<double>>& features,
                       const ParamGetter& params, const std::string& prefix,
                       const FieldDims& dims, int pe_octaves, bool use_viewdir);

}  // namespace nsrf
