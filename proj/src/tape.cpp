#include "nsrf/tape.hpp"

#include "nsrf/check.hpp"

namespace nsrf::ad {

const Tensor* GradMap::find(const Tensor& leaf) const {
  auto it = grads_.find(leaf.node());
  return it == grads_.end() ? nullptr : &it->second;
}

Tensor GradMap::at(const Tensor& leaf) const {
  const Tensor* g = find(leaf);
  NSRF_CHECK(g != nullptr, "no gradient recorded for node {}", leaf.node());
  return *g;
}

Tensor Tape::leaf(Tensor values, bool requires_grad) {
  NSRF_CHECK(!values.on_tape(), "leaf() takes a constant tensor");
  OpNode n;
  n.shape = values.shape();
  n.numel = values.numel();
  n.is_grad_leaf = requires_grad;
  nodes_.push_back(std::move(n));
  values.tape_ = this;
  values.node_ = static_cast<int>(nodes_.size()) - 1;
  return values;
}

Tensor Tape::record(Shape shape, std::vector<double> values, std::vector<int> inputs,
                    BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  OpNode n;
  n.shape = out.shape();
  n.numel = out.numel();
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  return out;
}

GradMap Tape::backprop(const Tensor& output) {
  NSRF_CHECK(output.on_tape() && output.tape() == this, "output was not produced by this tape");
  NSRF_CHECK(output.numel() == 1, "backprop needs a scalar output, got {}",
             shape_str(output.shape()));
  return run_backward({{output.node(), Tensor::scalar(1.0)}});
}

GradMap Tape::backprop_seeded(const std::vector<std::pair<Tensor, Tensor>>& seeds) {
  std::vector<std::pair<int, Tensor>> s;
  s.reserve(seeds.size());
  for (const auto& [node, adj] : seeds) {
    NSRF_CHECK(node.on_tape() && node.tape() == this, "seed node was not produced by this tape");
    NSRF_CHECK(same_shape(node.shape(), adj.shape()), "seed adjoint shape {} != node shape {}",
               shape_str(adj.shape()), shape_str(node.shape()));
    s.emplace_back(node.node(), adj);
  }
  return run_backward(s);
}

GradMap Tape::run_backward(const std::vector<std::pair<int, Tensor>>& seeds) {
  const size_t n = nodes_.size();

  // A node needs a gradient buffer iff a grad leaf is upstream of it and it
  // is upstream of some seed.
  std::vector<char> from_leaf(n, 0), to_seed(n, 0);
  for (size_t i = 0; i < n; ++i) {
    if (nodes_[i].is_grad_leaf) {
      from_leaf[i] = 1;
      continue;
    }
    for (int in : nodes_[i].inputs)
      if (in >= 0 && from_leaf[static_cast<size_t>(in)]) {
        from_leaf[i] = 1;
        break;
      }
  }
  for (const auto& [node, adj] : seeds) to_seed[static_cast<size_t>(node)] = 1;
  for (size_t i = n; i-- > 0;) {
    if (!to_seed[i]) continue;
    for (int in : nodes_[i].inputs)
      if (in >= 0) to_seed[static_cast<size_t>(in)] = 1;
  }

  std::vector<std::vector<double>> bufs(n);
  auto ensure = [&](size_t i) {
    if (bufs[i].empty()) bufs[i].assign(static_cast<size_t>(nodes_[i].numel), 0.0);
  };
  for (size_t i = 0; i < n; ++i)
    if (from_leaf[i] && to_seed[i]) ensure(i);

  for (const auto& [node, adj] : seeds) {
    const size_t i = static_cast<size_t>(node);
    if (bufs[i].empty()) continue;  // seed with no grad leaf upstream
    const double* a = adj.data();
    for (size_t k = 0; k < bufs[i].size(); ++k) bufs[i][k] += a[k];
  }

  BackCtx ctx;
  ctx.bufs_ = &bufs;
  for (size_t i = n; i-- > 0;) {
    if (bufs[i].empty() || !nodes_[i].backward) continue;
    nodes_[i].backward(bufs[i].data(), ctx);
    if (!nodes_[i].is_grad_leaf) {
      bufs[i].clear();
      bufs[i].shrink_to_fit();
    }
  }

  GradMap out;
  for (size_t i = 0; i < n; ++i) {
    if (!nodes_[i].is_grad_leaf) continue;
    if (bufs[i].empty())
      out.insert(static_cast<int>(i), Tensor::zeros(nodes_[i].shape));
    else
      out.insert(static_cast<int>(i), Tensor(nodes_[i].shape, std::move(bufs[i])));
  }
  return out;
}

}  // namespace nsrf::ad
