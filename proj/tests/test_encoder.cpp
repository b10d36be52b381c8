#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "whoi/encoder.hpp"
#include "whoi/image.hpp"
#include "whoi/params.hpp"
#include "whoi/rng.hpp"

using whoi::AttentionPool;
using whoi::Box;
using whoi::FeatureMap;
using whoi::Image;
using whoi::ParameterStore;
using whoi::PoolCache;
using whoi::RandomStream;
using whoi::Tensor;
using whoi::VisualEncoder;

namespace {

void randomize(ParameterStore& store, std::uint64_t seed, double std_dev = 0.3) {
  RandomStream rs(seed);
  for (const std::string& n : store.names()) {
    Tensor& t = store.at(n);
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) t.value(r, c) = rs.normal(0.0, std_dev);
  }
}

VisualEncoder make_encoder(ParameterStore& store, int dim, int patch, int gh, int gw) {
  VisualEncoder enc;
  enc.patch_proj = &store.add("encoder.proj", dim, 3 * patch * patch);
  enc.patch_bias = &store.add("encoder.bias", dim, 1);
  enc.pos = &store.add("encoder.pos", dim, gh * gw);
  enc.patch_size = patch;
  return enc;
}

AttentionPool make_pool(ParameterStore& store, int dim) {
  AttentionPool pool;
  pool.wq = &store.add("pool.wq", dim, dim);
  pool.wk = &store.add("pool.wk", dim, dim);
  pool.wv = &store.add("pool.wv", dim, dim);
  pool.wo = &store.add("pool.wo", dim, dim);
  return pool;
}

}  // namespace

TEST_CASE("encode_image shape, zero case, and divisibility") {
  const int dim = 5, patch = 8;
  ParameterStore store;
  VisualEncoder enc = make_encoder(store, dim, patch, 2, 3);

  const Image zero(16, 24);  // all parameters still zero too
  FeatureMap f = whoi::encode_image(zero, enc);
  CHECK(f.dim == dim);
  CHECK(f.gh == 2);
  CHECK(f.gw == 3);
  CHECK(f.cells.rows() == dim);
  CHECK(f.cells.cols() == 6);
  CHECK(f.cells.cwiseAbs().maxCoeff() == 0.0);  // tanh(0)

  CHECK_THROWS_AS(whoi::encode_image(Image(15, 24), enc), std::invalid_argument);
  CHECK_THROWS_AS(whoi::encode_image(Image(16, 25), enc), std::invalid_argument);
  // positional table sized for a different grid
  CHECK_THROWS_AS(whoi::encode_image(Image(32, 32), enc), std::invalid_argument);
}

TEST_CASE("encode_image is deterministic") {
  ParameterStore store;
  VisualEncoder enc = make_encoder(store, 6, 8, 3, 3);
  randomize(store, 21);

  Image img(24, 24);
  RandomStream rs(4);
  for (double& v : img.rgb) v = rs.uniform();

  const FeatureMap a = whoi::encode_image(img, enc);
  const FeatureMap b = whoi::encode_image(img, enc);
  CHECK(a.cells == b.cells);
  CHECK(a.cells.allFinite());
}

TEST_CASE("attention_pool single and identical cells") {
  const int dim = 4;
  ParameterStore store;
  AttentionPool pool = make_pool(store, dim);
  randomize(store, 8);

  RandomStream rs(9);
  Eigen::VectorXd cell(dim);
  for (int i = 0; i < dim; ++i) cell[i] = rs.normal();

  PoolCache cache;
  const Eigen::VectorXd single = whoi::attention_pool(cell, pool, &cache);
  REQUIRE(cache.alpha.size() == 1);
  CHECK(cache.alpha[0] == 1.0);
  const Eigen::VectorXd expect = pool.wo->value * (pool.wv->value * cell);
  CHECK((single - expect).cwiseAbs().maxCoeff() < 1e-12);

  // five copies of the same cell pool to the single-cell answer
  Eigen::MatrixXd copies(dim, 5);
  for (int i = 0; i < 5; ++i) copies.col(i) = cell;
  const Eigen::VectorXd pooled = whoi::attention_pool(copies, pool);
  CHECK((pooled - single).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(whoi::attention_pool(Eigen::MatrixXd(dim, 0), pool), std::invalid_argument);
}

TEST_CASE("attention weights form a distribution") {
  const int dim = 6;
  ParameterStore store;
  AttentionPool pool = make_pool(store, dim);
  randomize(store, 13);

  RandomStream rs(14);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + rs.uniform_int(9);
    Eigen::MatrixXd cells(dim, n);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < dim; ++d) cells(d, i) = rs.normal(0.0, 2.0);
    PoolCache cache;
    whoi::attention_pool(cells, pool, &cache);
    CHECK(std::abs(cache.alpha.sum() - 1.0) < 1e-9);
    CHECK(cache.alpha.minCoeff() > 0.0);
    CHECK(cache.alpha.maxCoeff() < 1.0);
  }
}

TEST_CASE("roi_align constant field and exact cell pick") {
  const int dim = 3, patch = 8;
  FeatureMap f;
  f.dim = dim;
  f.gh = 4;
  f.gw = 4;
  f.patch = patch;
  f.cells = Eigen::MatrixXd::Constant(dim, 16, 0.7);

  const Eigen::MatrixXd sampled = whoi::roi_align(f, Box{3, 5, 27, 29}, 3);
  REQUIRE(sampled.rows() == dim);
  REQUIRE(sampled.cols() == 9);
  CHECK((sampled.array() - 0.7).abs().maxCoeff() < 1e-12);

  // 1x1 grid over exactly cell (1,2): the sample lands on that cell center
  Eigen::MatrixXd varied = Eigen::MatrixXd::Zero(dim, 16);
  for (int i = 0; i < 16; ++i) varied.col(i).setConstant(static_cast<double>(i));
  f.cells = varied;
  const Eigen::MatrixXd one = whoi::roi_align(f, Box{16, 8, 24, 16}, 1);
  CHECK(one(0, 0) == doctest::Approx(f.cell_index(1, 2)).epsilon(1e-12));

  CHECK_THROWS_AS(whoi::roi_align(f, Box{-1, 0, 8, 8}, 2), std::invalid_argument);
  CHECK_THROWS_AS(whoi::roi_align(f, Box{0, 0, 33, 8}, 2), std::invalid_argument);
  CHECK_THROWS_AS(whoi::roi_align(f, Box{0, 0, 8, 8}, 0), std::invalid_argument);
}

TEST_CASE("roi_align matches the bilinear formula on a linear ramp") {
  // cells linear in grid coordinates: value = 2*gx + 5*gy + 1; bilinear
  // interpolation of a linear field reproduces the field at the sample point
  const int patch = 8;
  FeatureMap f;
  f.dim = 1;
  f.gh = 4;
  f.gw = 4;
  f.patch = patch;
  f.cells.resize(1, 16);
  for (int gy = 0; gy < 4; ++gy)
    for (int gx = 0; gx < 4; ++gx) f.cells(0, f.cell_index(gy, gx)) = 2.0 * gx + 5.0 * gy + 1.0;

  const Box box{6, 10, 22, 26};
  const int grid = 2;
  const Eigen::MatrixXd sampled = whoi::roi_align(f, box, grid);
  for (int oy = 0; oy < grid; ++oy)
    for (int ox = 0; ox < grid; ++ox) {
      const double sx = box.x1 + (ox + 0.5) * box.width() / grid;
      const double sy = box.y1 + (oy + 0.5) * box.height() / grid;
      const double fx = sx / patch - 0.5;  // interior by construction
      const double fy = sy / patch - 0.5;
      const double expect = 2.0 * fx + 5.0 * fy + 1.0;
      CHECK(sampled(0, oy * grid + ox) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("region_feature ignores the box on a constant map") {
  const int dim = 5;
  ParameterStore store;
  AttentionPool pool = make_pool(store, dim);
  randomize(store, 31);

  FeatureMap f;
  f.dim = dim;
  f.gh = 3;
  f.gw = 3;
  f.patch = 8;
  f.cells = Eigen::MatrixXd::Constant(dim, 9, 0.25);

  const Eigen::VectorXd a = whoi::region_feature(f, Box{0, 0, 24, 24}, 3, pool);
  const Eigen::VectorXd b = whoi::region_feature(f, Box{9, 4, 15, 11}, 2, pool);
  REQUIRE(a.size() == dim);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("region_feature pooling gradients match finite differences") {
  const int dim = 5;
  ParameterStore store;
  AttentionPool pool = make_pool(store, dim);
  randomize(store, 42);

  FeatureMap f;
  f.dim = dim;
  f.gh = 3;
  f.gw = 3;
  f.patch = 8;
  f.cells.resize(dim, 9);
  RandomStream rs(43);
  for (int i = 0; i < 9; ++i)
    for (int d = 0; d < dim; ++d) f.cells(d, i) = rs.normal();
  const Box box{2, 3, 20, 22};

  Eigen::VectorXd probe(dim);
  for (int d = 0; d < dim; ++d) probe[d] = rs.normal();

  whoi::RoiPlan plan;
  PoolCache cache;
  whoi::region_feature(f, box, 2, pool, &plan, &cache);
  whoi::attention_pool_backward(cache, pool, probe);

  const double h = 1e-4;
  for (const std::string& n : store.names()) {
    Tensor& t = store.at(n);
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        const double keep = t.value(r, c);
        t.value(r, c) = keep + h;
        const double up = probe.dot(whoi::region_feature(f, box, 2, pool));
        t.value(r, c) = keep - h;
        const double dn = probe.dot(whoi::region_feature(f, box, 2, pool));
        t.value(r, c) = keep;
        const double numeric = (up - dn) / (2 * h);
        const double analytic = t.grad(r, c);
        const double rel = std::abs(analytic - numeric) /
                           std::max(1e-8, std::abs(analytic) + std::abs(numeric));
        CHECK(rel < 1e-4);
      }
  }
}

TEST_CASE("toy text encoder is a deterministic unit embedding") {
  const whoi::ToyTextEncoder text(24);
  CHECK(text.dim() == 24);

  const Eigen::VectorXd a = text.encode("a person riding a bicycle");
  const Eigen::VectorXd b = text.encode("a person riding a bicycle");
  CHECK(a == b);
  CHECK(std::abs(a.norm() - 1.0) < 1e-9);

  // one token different: related but never identical
  const Eigen::VectorXd c = text.encode("a person riding an elephant");
  const double cosine = a.dot(c);
  CHECK(cosine < 1.0 - 1e-6);
  CHECK(cosine > -1.0);

  CHECK_THROWS_AS(text.encode(""), std::invalid_argument);
  CHECK_THROWS_AS(text.encode("   "), std::invalid_argument);
  CHECK_THROWS_AS(whoi::ToyTextEncoder(0), std::invalid_argument);
}
