#include "whoi/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace whoi {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x1 < x2 && y1 < y2;
}

Box Box::clamped(double img_w, double img_h) const {
  Box c;
  c.x1 = std::clamp(x1, 0.0, img_w);
  c.y1 = std::clamp(y1, 0.0, img_h);
  c.x2 = std::clamp(x2, 0.0, img_w);
  c.y2 = std::clamp(y2, 0.0, img_h);
  return c;
}

static void require_valid(const Box& b, const char* who) {
  if (!b.valid())
    throw std::invalid_argument(std::string(who) + ": degenerate box [" + std::to_string(b.x1) + ", " +
                                std::to_string(b.y1) + ", " + std::to_string(b.x2) + ", " +
                                std::to_string(b.y2) + "]");
}

double iou(const Box& a, const Box& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

Box union_box(const Box& a, const Box& b) {
  require_valid(a, "union_box");
  require_valid(b, "union_box");
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

Eigen::VectorXd spatial_features(const Box& human, const Box& object, double img_w, double img_h) {
  if (!(img_w > 0.0) || !(img_h > 0.0))
    throw std::invalid_argument("spatial_features: image dimensions must be positive");
  const Box h = human.clamped(img_w, img_h);
  const Box o = object.clamped(img_w, img_h);
  require_valid(h, "spatial_features(human)");
  require_valid(o, "spatial_features(object)");

  Eigen::VectorXd p(kSpatialDim);
  auto put_box = [&](int base, const Box& b) {
    p[base + 0] = b.cx() / img_w;
    p[base + 1] = b.cy() / img_h;
    p[base + 2] = b.width() / img_w;
    p[base + 3] = b.height() / img_h;
    p[base + 4] = b.width() / b.height();
    p[base + 5] = b.area() / (img_w * img_h);
  };
  put_box(0, h);
  put_box(6, o);
  p[12] = iou(h, o);
  p[13] = h.area() / o.area();
  const double dcx = o.cx() - h.cx();
  const double dcy = o.cy() - h.cy();
  p[14] = std::abs(dcx) / img_w;
  p[15] = std::abs(dcy) / img_h;
  p[16] = (h.cx() < o.cx() || (h.cx() == o.cx() && h.cy() <= o.cy())) ? 1.0 : 0.0;
  p[17] = std::sqrt(dcx * dcx + dcy * dcy) / std::sqrt(img_w * img_w + img_h * img_h);
  return p;
}

Eigen::VectorXd embed_spatial(const Eigen::VectorXd& p, const Mlp& f_sp, MlpCache* cache) {
  if (p.size() != kSpatialDim)
    throw std::invalid_argument("embed_spatial: expected " + std::to_string(kSpatialDim) +
                                " entries, got " + std::to_string(p.size()));
  Eigen::VectorXd x(2 * kSpatialDim);
  x.head(kSpatialDim) = p;
  x.tail(kSpatialDim) = (p.array() + kSpatialLogEps).log().matrix();
  return f_sp.forward(x, cache);
}

}  // namespace whoi
