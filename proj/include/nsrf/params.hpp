#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nsrf/tape.hpp"
#include "nsrf/tensor.hpp"

namespace nsrf {

// Canonical storage for trainable tensors, keyed by name with a stable
// registration order. Values are plain (off-tape) tensors; the optimizer
// replaces them between steps.
class ParamStore {
 public:
  void add(const std::string& name, ad::Tensor value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const ad::Tensor& at(const std::string& name) const;
  // Same-shape replacement (optimizer updates, checkpoint restore).
  void set(const std::string& name, ad::Tensor value);
  const std::vector<std::string>& names() const { return order_; }
  int64_t total_size() const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, ad::Tensor> values_;
};

// Leaves for every stored parameter on one tape, bound in registration
// order so node ids are reproducible.
class TapeBinding {
 public:
  TapeBinding(ad::Tape& tape, const ParamStore& store);
  const ad::Tensor& at(const std::string& name) const;
  const std::vector<std::pair<std::string, ad::Tensor>>& leaves() const { return order_; }

 private:
  std::vector<std::pair<std::string, ad::Tensor>> order_;
  std::unordered_map<std::string, ad::Tensor> leaves_;
};

// Resolves parameter tensors by name; models read through this so the same
// code runs off-tape (inference) and on-tape (training, FD probes).
using ParamGetter = std::function<const ad::Tensor&(const std::string&)>;

ParamGetter getter(const ParamStore& store);
ParamGetter getter(const TapeBinding& binding);

}  // namespace nsrf
