#pragma once

// Tiny layer zoo: a linear map and a one-hidden-layer tanh MLP, each with a
// hand-written backward pass. Backward accumulates into Tensor::grad and
// returns the input gradient so stages can be chained by the caller.

#include <Eigen/Dense>

#include "whoi/params.hpp"

namespace whoi {

struct Linear {
  Tensor* w = nullptr;  // out x in
  Tensor* b = nullptr;  // out x 1

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    return w->value * x + b->value.col(0);
  }

  // dy is d(loss)/d(output); returns d(loss)/d(input).
  Eigen::VectorXd backward(const Eigen::VectorXd& x, const Eigen::VectorXd& dy) const {
    w->grad += dy * x.transpose();
    b->grad.col(0) += dy;
    return w->value.transpose() * dy;
  }
};

struct MlpCache {
  Eigen::VectorXd x;   // input
  Eigen::VectorXd t1;  // tanh(w1 x + b1)
};

// y = w2 * tanh(w1 x + b1) + b2
struct Mlp {
  Linear l1, l2;

  Eigen::VectorXd forward(const Eigen::VectorXd& x, MlpCache* cache = nullptr) const {
    Eigen::VectorXd t1 = l1.forward(x).array().tanh().matrix();
    if (cache) {
      cache->x = x;
      cache->t1 = t1;
    }
    return l2.forward(t1);
  }

  Eigen::VectorXd backward(const MlpCache& cache, const Eigen::VectorXd& dy) const {
    Eigen::VectorXd dt1 = l2.backward(cache.t1, dy);
    Eigen::VectorXd dpre = (dt1.array() * (1.0 - cache.t1.array().square())).matrix();
    return l1.backward(cache.x, dpre);
  }
};

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Softmax of a vector; plain shifted-exp form.
Eigen::VectorXd softmax(const Eigen::VectorXd& z);

// d(loss)/d(logits) given d(loss)/d(softmax output) and the softmax output.
Eigen::VectorXd softmax_backward(const Eigen::VectorXd& alpha, const Eigen::VectorXd& dalpha);

}  // namespace whoi
