#include "whoi/nn.hpp"

namespace whoi {

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp().matrix();
  return e / e.sum();
}

Eigen::VectorXd softmax_backward(const Eigen::VectorXd& alpha, const Eigen::VectorXd& dalpha) {
  const double dot = alpha.dot(dalpha);
  return (alpha.array() * (dalpha.array() - dot)).matrix();
}

}  // namespace whoi
