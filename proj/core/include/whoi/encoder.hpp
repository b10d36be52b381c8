#pragma once

// Pluggable toy encoders. The visual side maps non-overlapping image patches
// to a feature grid, pools grids into single vectors with one shared
// attention head, and crops boxes via bilinear RoI sampling. The text side
// hashes tokens into deterministic pseudo-random vectors. Interfaces are kept
// narrow so a real backbone could be swapped in behind the same signatures.

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "whoi/geometry.hpp"
#include "whoi/image.hpp"
#include "whoi/nn.hpp"
#include "whoi/params.hpp"

namespace whoi {

// D x (gh*gw) cell matrix; column index = gy * gw + gx. Cell (gy, gx) covers
// the pixel block [gx*patch, (gx+1)*patch) x [gy*patch, (gy+1)*patch).
struct FeatureMap {
  int dim = 0;
  int gh = 0;
  int gw = 0;
  int patch = 0;
  Eigen::MatrixXd cells;

  int cell_index(int gy, int gx) const { return gy * gw + gx; }
};

struct VisualEncoder {
  Tensor* patch_proj = nullptr;  // D x 3*patch^2
  Tensor* patch_bias = nullptr;  // D x 1
  Tensor* pos = nullptr;         // D x gh*gw, additive positional table
  int patch_size = 0;
};

// cell = tanh(patch_proj * flatten(patch) + bias + pos[cell]). Patch pixels
// are flattened row-major as (py, px, channel). H and W must be divisible by
// the patch size and match the positional table.
FeatureMap encode_image(const Image& img, const VisualEncoder& enc);
void encode_image_backward(const Image& img, const FeatureMap& fmap, const Eigen::MatrixXd& d_cells,
                           const VisualEncoder& enc);

struct AttentionPool {
  Tensor* wq = nullptr;
  Tensor* wk = nullptr;
  Tensor* wv = nullptr;
  Tensor* wo = nullptr;
};

struct PoolCache {
  Eigen::MatrixXd cells;  // D x n
  Eigen::VectorXd mean, q, alpha, z;
  Eigen::MatrixXd k, u;
};

// Query from the mean cell, scaled dot-product weights over cells:
//   out = Wo * sum_i alpha_i * (Wv c_i),  alpha = softmax(q . (Wk c_i) / sqrt(D))
Eigen::VectorXd attention_pool(const Eigen::MatrixXd& cells, const AttentionPool& pool,
                               PoolCache* cache = nullptr);
// Returns d(loss)/d(cells), accumulates the four projection grads.
Eigen::MatrixXd attention_pool_backward(const PoolCache& cache, const AttentionPool& pool,
                                        const Eigen::VectorXd& d_out);

// Bilinear sampling of the feature grid. One sample per output cell, taken at
// the cell center of a grid x grid lattice stretched over the box (pixel
// coordinates; box must lie inside the image).
struct RoiTap {
  int cell = 0;
  double w = 0;
};
struct RoiPlan {
  int grid = 0;
  std::vector<std::array<RoiTap, 4>> taps;  // grid*grid entries, row-major
};

RoiPlan roi_align_plan(const FeatureMap& fmap, const Box& box, int grid);
Eigen::MatrixXd roi_align_apply(const FeatureMap& fmap, const RoiPlan& plan);
Eigen::MatrixXd roi_align(const FeatureMap& fmap, const Box& box, int grid);
void roi_align_backward(const RoiPlan& plan, const Eigen::MatrixXd& d_sampled, Eigen::MatrixXd& d_cells);

// RoI crop followed by the shared attention pool.
Eigen::VectorXd region_feature(const FeatureMap& fmap, const Box& box, int grid,
                               const AttentionPool& pool, RoiPlan* plan = nullptr,
                               PoolCache* cache = nullptr);

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  // Unit-norm embedding of a prompt string.
  virtual Eigen::VectorXd encode(const std::string& text) const = 0;
};

// Whitespace tokens -> per-token vectors from a hash-seeded generator,
// averaged and L2-normalized. Prompts sharing tokens land near each other,
// which is all the knowledge bank needs at this scale.
class ToyTextEncoder final : public TextEncoder {
 public:
  explicit ToyTextEncoder(int dim);
  int dim() const override { return dim_; }
  Eigen::VectorXd encode(const std::string& text) const override;

 private:
  int dim_;
};

}  // namespace whoi
