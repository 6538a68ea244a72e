#pragma once

#include <vector>

#include "nsrf/tape.hpp"
#include "nsrf/tensor.hpp"

namespace nsrf::ad {

// Primitive tensor operations. Shapes are explicit: there is no implicit
// broadcasting, and mismatches are rejected with the offending shapes named.
// When at least one operand lives on a tape the result is recorded there
// with its adjoint rule; all-constant operands produce a constant.

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Unary elementwise.
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double k);
Tensor add_scalar(const Tensor& x, double k);
// Subgradient: passes the gradient where lo <= x <= hi, zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);

// Rank-2 linear algebra. matmul is [m x k] * [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// x*w + b broadcast over rows; b is [n].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor add_rowvec(const Tensor& x, const Tensor& row);

// Structure.
Tensor concat(const Tensor& a, const Tensor& b, int axis);       // rank 2
Tensor slice_cols(const Tensor& x, int64_t begin, int64_t end);  // rank 2
Tensor reshape(const Tensor& x, Shape shape);

// Reductions.
Tensor sum(const Tensor& x);                  // -> scalar
Tensor sum_axis(const Tensor& x, int axis);   // rank 2 -> [m x 1] or [1 x n]
Tensor mean_axis(const Tensor& x, int axis);  // rank 2

// Softmax over the last axis of a rank-2 tensor; rows are probability
// vectors (nonnegative, unit sum).
Tensor softmax(const Tensor& x);

// out[r, 0] = x[r, cols[r]].
Tensor row_gather(const Tensor& x, const std::vector<int64_t>& cols);

// out[r, j] = sum_{i < j} x[r, i].
Tensor cumsum_exclusive_rows(const Tensor& x);

// w is [R x P], v is [R*P x M]; out[r, m] = sum_p w[r,p] * v[r*P+p, m].
Tensor weighted_sum_rows(const Tensor& w, const Tensor& v);

// Elementwise mean of equal-shaped tensors. Addends are sorted per element
// and reduced pairwise, so the result is bitwise invariant under permutation
// of the inputs and exact for duplicated inputs when n is a power of two.
Tensor mean_pool_sorted(const std::vector<Tensor>& xs);

// Sparse bilinear read of a [H*W x K] map. Each output row r mixes up to
// four map rows: sum_j weight[r][j] * map[index[r][j], :], entries with
// index -1 contribute zero. Rows with no valid entries come out zero.
struct GatherPlan {
  int64_t rows = 0;
  std::vector<int64_t> index;  // rows*4, -1 for absent
  std::vector<double> weight;  // rows*4
};
Tensor bilinear_gather(const Tensor& map, const GatherPlan& plan);

// 3x3 convolution over an [H x W x Cin] tensor with zero padding 1 and the
// given stride; kernel is [Cout x Cin*9] (row-major dy,dx,ci), bias [Cout].
Tensor conv3x3(const Tensor& image, const Tensor& kernel, const Tensor& bias, int stride);

// Nearest-neighbour 2x upsample of [H x W x C], cropped to [out_h x out_w x C].
Tensor upsample2x_nn(const Tensor& image, int64_t out_h, int64_t out_w);

}  // namespace nsrf::ad
