#include "whoi/encoder.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "whoi/rng.hpp"

namespace whoi {

namespace {

Eigen::VectorXd flatten_patch(const Image& img, int gy, int gx, int patch) {
  Eigen::VectorXd x(3 * patch * patch);
  int k = 0;
  for (int py = 0; py < patch; ++py)
    for (int px = 0; px < patch; ++px)
      for (int c = 0; c < 3; ++c) x[k++] = img.at(gy * patch + py, gx * patch + px, c);
  return x;
}

}  // namespace

FeatureMap encode_image(const Image& img, const VisualEncoder& enc) {
  const int patch = enc.patch_size;
  if (patch <= 0) throw std::invalid_argument("encode_image: patch size must be positive");
  if (img.h % patch != 0 || img.w % patch != 0)
    throw std::invalid_argument("encode_image: image " + std::to_string(img.w) + "x" + std::to_string(img.h) +
                                " not divisible by patch " + std::to_string(patch));
  FeatureMap f;
  f.dim = static_cast<int>(enc.patch_proj->value.rows());
  f.gh = img.h / patch;
  f.gw = img.w / patch;
  f.patch = patch;
  if (enc.pos->value.cols() != f.gh * f.gw)
    throw std::invalid_argument("encode_image: positional table covers " +
                                std::to_string(enc.pos->value.cols()) + " cells, image needs " +
                                std::to_string(f.gh * f.gw));
  f.cells.resize(f.dim, f.gh * f.gw);
  for (int gy = 0; gy < f.gh; ++gy)
    for (int gx = 0; gx < f.gw; ++gx) {
      const int i = f.cell_index(gy, gx);
      Eigen::VectorXd pre = enc.patch_proj->value * flatten_patch(img, gy, gx, patch) +
                            enc.patch_bias->value.col(0) + enc.pos->value.col(i);
      f.cells.col(i) = pre.array().tanh().matrix();
    }
  return f;
}

void encode_image_backward(const Image& img, const FeatureMap& fmap, const Eigen::MatrixXd& d_cells,
                           const VisualEncoder& enc) {
  for (int gy = 0; gy < fmap.gh; ++gy)
    for (int gx = 0; gx < fmap.gw; ++gx) {
      const int i = fmap.cell_index(gy, gx);
      // tanh' from the stored activation
      Eigen::VectorXd d_pre =
          (d_cells.col(i).array() * (1.0 - fmap.cells.col(i).array().square())).matrix();
      enc.patch_proj->grad += d_pre * flatten_patch(img, gy, gx, fmap.patch).transpose();
      enc.patch_bias->grad.col(0) += d_pre;
      enc.pos->grad.col(i) += d_pre;
    }
}

Eigen::VectorXd attention_pool(const Eigen::MatrixXd& cells, const AttentionPool& pool, PoolCache* cache) {
  const auto n = cells.cols();
  if (n < 1) throw std::invalid_argument("attention_pool: need at least one cell");
  const double scale = 1.0 / std::sqrt(static_cast<double>(cells.rows()));
  Eigen::VectorXd mean = cells.rowwise().mean();
  Eigen::VectorXd q = pool.wq->value * mean;
  Eigen::MatrixXd k = pool.wk->value * cells;
  Eigen::MatrixXd u = pool.wv->value * cells;
  Eigen::VectorXd alpha = softmax(k.transpose() * q * scale);
  Eigen::VectorXd z = u * alpha;
  if (cache) {
    cache->cells = cells;
    cache->mean = std::move(mean);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->u = std::move(u);
    cache->alpha = alpha;
    cache->z = z;
  }
  return pool.wo->value * z;
}

Eigen::MatrixXd attention_pool_backward(const PoolCache& cache, const AttentionPool& pool,
                                        const Eigen::VectorXd& d_out) {
  const auto n = cache.cells.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(cache.cells.rows()));

  pool.wo->grad += d_out * cache.z.transpose();
  Eigen::VectorXd d_z = pool.wo->value.transpose() * d_out;

  Eigen::VectorXd d_alpha = cache.u.transpose() * d_z;
  Eigen::MatrixXd d_u = d_z * cache.alpha.transpose();
  pool.wv->grad += d_u * cache.cells.transpose();
  Eigen::MatrixXd d_cells = pool.wv->value.transpose() * d_u;

  Eigen::VectorXd d_logits = softmax_backward(cache.alpha, d_alpha) * scale;
  Eigen::VectorXd d_q = cache.k * d_logits;
  Eigen::MatrixXd d_k = cache.q * d_logits.transpose();
  pool.wk->grad += d_k * cache.cells.transpose();
  d_cells += pool.wk->value.transpose() * d_k;

  pool.wq->grad += d_q * cache.mean.transpose();
  Eigen::VectorXd d_mean = pool.wq->value.transpose() * d_q;
  d_cells.colwise() += (d_mean / static_cast<double>(n)).eval();
  return d_cells;
}

RoiPlan roi_align_plan(const FeatureMap& fmap, const Box& box, int grid) {
  if (grid < 1) throw std::invalid_argument("roi_align: output grid must be >= 1");
  const double img_w = static_cast<double>(fmap.gw) * fmap.patch;
  const double img_h = static_cast<double>(fmap.gh) * fmap.patch;
  if (!box.valid() || box.x1 < 0 || box.y1 < 0 || box.x2 > img_w || box.y2 > img_h)
    throw std::invalid_argument("roi_align: box outside the image");

  RoiPlan plan;
  plan.grid = grid;
  plan.taps.resize(static_cast<std::size_t>(grid) * grid);
  for (int oy = 0; oy < grid; ++oy)
    for (int ox = 0; ox < grid; ++ox) {
      // sample at the center of each output cell, in pixel space
      const double sx = box.x1 + (ox + 0.5) * box.width() / grid;
      const double sy = box.y1 + (oy + 0.5) * box.height() / grid;
      // to continuous grid coordinates: cell centers sit at (g + 0.5) * patch
      double fx = std::clamp(sx / fmap.patch - 0.5, 0.0, static_cast<double>(fmap.gw - 1));
      double fy = std::clamp(sy / fmap.patch - 0.5, 0.0, static_cast<double>(fmap.gh - 1));
      int x0 = std::min(static_cast<int>(std::floor(fx)), fmap.gw > 1 ? fmap.gw - 2 : 0);
      int y0 = std::min(static_cast<int>(std::floor(fy)), fmap.gh > 1 ? fmap.gh - 2 : 0);
      const int x1 = fmap.gw > 1 ? x0 + 1 : x0;
      const int y1 = fmap.gh > 1 ? y0 + 1 : y0;
      const double wx = fx - x0;
      const double wy = fy - y0;
      auto& t = plan.taps[static_cast<std::size_t>(oy) * grid + ox];
      t[0] = {fmap.cell_index(y0, x0), (1 - wx) * (1 - wy)};
      t[1] = {fmap.cell_index(y0, x1), wx * (1 - wy)};
      t[2] = {fmap.cell_index(y1, x0), (1 - wx) * wy};
      t[3] = {fmap.cell_index(y1, x1), wx * wy};
    }
  return plan;
}

Eigen::MatrixXd roi_align_apply(const FeatureMap& fmap, const RoiPlan& plan) {
  Eigen::MatrixXd out(fmap.dim, plan.taps.size());
  for (std::size_t i = 0; i < plan.taps.size(); ++i) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(fmap.dim);
    for (const RoiTap& t : plan.taps[i])
      if (t.w != 0.0) v += t.w * fmap.cells.col(t.cell);
    out.col(static_cast<Eigen::Index>(i)) = v;
  }
  return out;
}

Eigen::MatrixXd roi_align(const FeatureMap& fmap, const Box& box, int grid) {
  return roi_align_apply(fmap, roi_align_plan(fmap, box, grid));
}

void roi_align_backward(const RoiPlan& plan, const Eigen::MatrixXd& d_sampled, Eigen::MatrixXd& d_cells) {
  for (std::size_t i = 0; i < plan.taps.size(); ++i)
    for (const RoiTap& t : plan.taps[i])
      if (t.w != 0.0) d_cells.col(t.cell) += t.w * d_sampled.col(static_cast<Eigen::Index>(i));
}

Eigen::VectorXd region_feature(const FeatureMap& fmap, const Box& box, int grid,
                               const AttentionPool& pool, RoiPlan* plan_out, PoolCache* cache) {
  RoiPlan plan = roi_align_plan(fmap, box, grid);
  Eigen::MatrixXd sampled = roi_align_apply(fmap, plan);
  if (plan_out) *plan_out = std::move(plan);
  return attention_pool(sampled, pool, cache);
}

ToyTextEncoder::ToyTextEncoder(int dim) : dim_(dim) {
  if (dim < 1) throw std::invalid_argument("ToyTextEncoder: dim must be >= 1");
}

Eigen::VectorXd ToyTextEncoder::encode(const std::string& text) const {
  std::istringstream ss(text);
  std::string token;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim_);
  int count = 0;
  while (ss >> token) {
    SplitMix64 g{hash64(token)};
    for (int i = 0; i < dim_; ++i) sum[i] += g.uniform() * 2.0 - 1.0;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("ToyTextEncoder: prompt has no tokens");
  sum /= static_cast<double>(count);
  const double norm = sum.norm();
  if (norm < 1e-12) throw std::runtime_error("ToyTextEncoder: degenerate zero embedding");
  return sum / norm;
}

}  // namespace whoi
