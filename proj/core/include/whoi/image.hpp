#pragma once

// Dense RGB image, channels-last, values in [0, 1].

#include <cstddef>
#include <vector>

namespace whoi {

struct Image {
  int h = 0;
  int w = 0;
  std::vector<double> rgb;  // (y * w + x) * 3 + c

  Image() = default;
  Image(int height, int width, double fill = 0.0)
      : h(height), w(width), rgb(static_cast<std::size_t>(height) * width * 3, fill) {}

  double at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
  double& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
};

}  // namespace whoi
