#pragma once

// Named parameter tensors with paired gradient and Adam state. Everything the
// optimizer touches lives here; layers hold pointers into the store.
// std::map keeps node addresses stable and iteration order deterministic.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace whoi {

struct Tensor {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd adam_m;
  Eigen::MatrixXd adam_v;

  void resize(int rows, int cols) {
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
    adam_m.setZero(rows, cols);
    adam_v.setZero(rows, cols);
  }
};

class ParameterStore {
 public:
  Tensor& add(const std::string& name, int rows, int cols);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }

  // Registration order; used for reproducible init draws and serialization.
  const std::vector<std::string>& names() const { return order_; }

  void zero_grads();
  bool values_finite() const;
  bool grads_finite() const;
  std::int64_t parameter_count() const;

 private:
  std::map<std::string, Tensor> tensors_;
  std::vector<std::string> order_;
};

}  // namespace whoi
