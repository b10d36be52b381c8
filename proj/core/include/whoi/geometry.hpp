#pragma once

// Box arithmetic and the human/object spatial relation features.

#include <Eigen/Dense>

#include "whoi/nn.hpp"

namespace whoi {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const;
  Box clamped(double img_w, double img_h) const;

  bool operator==(const Box& o) const { return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2; }
};

// Intersection over union. Throws std::invalid_argument on degenerate boxes.
double iou(const Box& a, const Box& b);

// Smallest box covering both inputs.
Box union_box(const Box& a, const Box& b);

// Relative-layout descriptor for a (human, object) box pair. 18 entries, all
// non-negative, in this frozen order (W, H are the image dimensions):
//   0..5   human:  cx/W, cy/H, w/W, h/H, w/h, area/(W*H)
//   6..11  object: same six
//   12     iou(human, object)
//   13     area(human) / area(object)
//   14,15  |object cx - human cx| / W, |object cy - human cy| / H
//   16     ordering bit: 1 when (human cx, cy) <= (object cx, cy)
//          lexicographically, else 0
//   17     center distance / image diagonal
// Entries 0,1,6,7 are the only ones that move under joint translation.
constexpr int kSpatialDim = 18;
Eigen::VectorXd spatial_features(const Box& human, const Box& object, double img_w, double img_h);

// v_sp = F_sp([p ; log(p + eps)]); the log pairing exposes scale ratios that a
// first linear layer cannot form from the raw entries alone.
constexpr double kSpatialLogEps = 1e-6;
Eigen::VectorXd embed_spatial(const Eigen::VectorXd& p, const Mlp& f_sp, MlpCache* cache = nullptr);

}  // namespace whoi
