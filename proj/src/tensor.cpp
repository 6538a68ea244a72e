#include "nsrf/tensor.hpp"

#include <numeric>

#include "nsrf/check.hpp"

namespace nsrf::ad {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  for (int64_t e : shape_) NSRF_CHECK(e >= 1, "shape extents must be >= 1, got {}", shape_str(shape_));
  NSRF_CHECK(shape_numel(shape_) == static_cast<int64_t>(values.size()),
             "shape {} does not match {} values", shape_str(shape_), values.size());
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

double Tensor::value() const {
  NSRF_CHECK(numel() == 1, "value() needs a scalar, tensor is {}", shape_str(shape_));
  return (*values_)[0];
}

}  // namespace nsrf::ad
