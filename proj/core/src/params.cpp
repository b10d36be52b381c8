#include "whoi/params.hpp"

#include <cmath>
#include <stdexcept>

namespace whoi {

Tensor& ParameterStore::add(const std::string& name, int rows, int cols) {
  if (tensors_.count(name)) throw std::invalid_argument("parameter already registered: " + name);
  Tensor& t = tensors_[name];
  t.name = name;
  t.resize(rows, cols);
  order_.push_back(name);
  return t;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

void ParameterStore::zero_grads() {
  for (auto& [_, t] : tensors_) t.grad.setZero();
}

static bool all_finite(const Eigen::MatrixXd& m) {
  return m.allFinite();
}

bool ParameterStore::values_finite() const {
  for (const auto& [_, t] : tensors_)
    if (!all_finite(t.value)) return false;
  return true;
}

bool ParameterStore::grads_finite() const {
  for (const auto& [_, t] : tensors_)
    if (!all_finite(t.grad)) return false;
  return true;
}

std::int64_t ParameterStore::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.value.size();
  return n;
}

}  // namespace whoi
