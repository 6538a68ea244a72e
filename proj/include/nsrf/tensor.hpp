#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace nsrf::ad {

class Tape;

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major tensor of 64-bit reals. Copies share storage. A tensor
// recorded on a tape carries the tape pointer and its node id; constants
// have node == -1 and may be combined freely with recorded tensors.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  int64_t numel() const { return values_ ? static_cast<int64_t>(values_->size()) : 0; }

  const double* data() const { return values_->data(); }
  const std::vector<double>& values() const { return *values_; }
  const std::shared_ptr<const std::vector<double>>& storage() const { return values_; }

  double at(int64_t i) const { return (*values_)[static_cast<size_t>(i)]; }
  double value() const;  // scalar tensors only

  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool on_tape() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> values_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

}  // namespace nsrf::ad
