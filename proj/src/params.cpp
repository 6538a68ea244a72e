#include "nsrf/params.hpp"

#include "nsrf/check.hpp"

namespace nsrf {

void ParamStore::add(const std::string& name, ad::Tensor value) {
  NSRF_CHECK(!contains(name), "parameter '{}' registered twice", name);
  NSRF_CHECK(!value.on_tape(), "parameter '{}' must be stored off-tape", name);
  order_.push_back(name);
  values_.emplace(name, std::move(value));
}

const ad::Tensor& ParamStore::at(const std::string& name) const {
  auto it = values_.find(name);
  NSRF_CHECK(it != values_.end(), "unknown parameter '{}'", name);
  return it->second;
}

void ParamStore::set(const std::string& name, ad::Tensor value) {
  auto it = values_.find(name);
  NSRF_CHECK(it != values_.end(), "unknown parameter '{}'", name);
  NSRF_CHECK(ad::same_shape(it->second.shape(), value.shape()),
             "parameter '{}' is {}, replacement is {}", name, ad::shape_str(it->second.shape()),
             ad::shape_str(value.shape()));
  it->second = std::move(value);
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [name, value] : values_) n += value.numel();
  return n;
}

TapeBinding::TapeBinding(ad::Tape& tape, const ParamStore& store) {
  for (const std::string& name : store.names()) {
    ad::Tensor leaf = tape.leaf(store.at(name));
    order_.emplace_back(name, leaf);
    leaves_.emplace(name, std::move(leaf));
  }
}

const ad::Tensor& TapeBinding::at(const std::string& name) const {
  auto it = leaves_.find(name);
  NSRF_CHECK(it != leaves_.end(), "parameter '{}' is not bound", name);
  return it->second;
}

ParamGetter getter(const ParamStore& store) {
  return [&store](const std::string& name) -> const ad::Tensor& { return store.at(name); };
}

ParamGetter getter(const TapeBinding& binding) {
  return [&binding](const std::string& name) -> const ad::Tensor& { return binding.at(name); };
}

}  // namespace nsrf
