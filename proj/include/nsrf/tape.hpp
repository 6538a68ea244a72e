#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nsrf/tensor.hpp"

namespace nsrf::ad {

// Gradients keyed by node id, produced by Tape::backprop.
class GradMap {
 public:
  const Tensor* find(const Tensor& leaf) const;
  Tensor at(const Tensor& leaf) const;
  void insert(int node, Tensor grad) { grads_.emplace(node, std::move(grad)); }
  size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<int, Tensor> grads_;
};

// Accumulation buffers for one backward sweep. Adjoint rules add into
// grad(node); a null pointer means that node needs no gradient.
class BackCtx {
 public:
  double* grad(int node) {
    if (node < 0) return nullptr;  // constant operand
    auto& buf = (*bufs_)[static_cast<size_t>(node)];
    return buf.empty() ? nullptr : buf.data();
  }

 private:
  friend class Tape;
  std::vector<std::vector<double>>* bufs_ = nullptr;
};

using BackwardFn = std::function<void(const double* dout, BackCtx&)>;

// Reverse-mode tape. Operations append nodes in execution order, which is a
// topological order by construction; backprop replays adjoint rules in
// reverse. Single-writer: one logical thread records and backpropagates a
// given tape. Distinct tapes are fully independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `values` as a leaf. Leaves with grad participate in backprop.
  Tensor leaf(Tensor values, bool requires_grad = true);

  // Used by the primitive ops; not part of the public surface.
  Tensor record(Shape shape, std::vector<double> values, std::vector<int> inputs,
                BackwardFn backward);

  // Reverse sweep from a scalar output. Returns gradients for every grad
  // leaf (zeros if the leaf is unreachable from the output).
  GradMap backprop(const Tensor& output);

  // Reverse sweep seeded with external adjoints at the given nodes, for
  // backpropagating across tape boundaries.
  GradMap backprop_seeded(const std::vector<std::pair<Tensor, Tensor>>& seeds);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct OpNode {
    Shape shape;
    int64_t numel = 0;
    std::vector<int> inputs;
    BackwardFn backward;
    bool is_grad_leaf = false;
  };

  GradMap run_backward(const std::vector<std::pair<int, Tensor>>& seeds);

  std::vector<OpNode> nodes_;
};

}  // namespace nsrf::ad
