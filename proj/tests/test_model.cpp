#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "whoi/data.hpp"
#include "whoi/model.hpp"
#include "whoi/rng.hpp"

using whoi::Box;
using whoi::Image;
using whoi::KtnMode;
using whoi::ModelConfig;
using whoi::ModelDims;
using whoi::Network;
using whoi::ParameterStore;
using whoi::Proposal;
using whoi::RandomStream;
using whoi::SceneRecord;
using whoi::Tensor;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.feat_dim = 8;
  d.patch = 8;
  d.image_h = 16;
  d.image_w = 16;
  d.roi_grid = 2;
  return d;
}

Proposal prop(Box b, Proposal::Kind kind, int cls, double score) {
  Proposal p;
  p.box = b;
  p.kind = kind;
  p.object_class = cls;
  p.score = score;
  return p;
}

// two humans, two objects, image 16x16
SceneRecord tiny_scene() {
  SceneRecord rec;
  rec.image_id = 7;
  rec.width = 16;
  rec.height = 16;
  rec.proposals = {
      prop({1, 1, 7, 9}, Proposal::Kind::human, -1, 0.9),
      prop({8, 2, 15, 8}, Proposal::Kind::object, 0, 0.8),
      prop({2, 8, 9, 15}, Proposal::Kind::human, -1, 0.75),
      prop({9, 9, 14, 14}, Proposal::Kind::object, 1, 0.85),
  };
  return rec;
}

Image noise_image(int h, int w, std::uint64_t seed) {
  Image img(h, w);
  RandomStream rs(seed);
  for (double& v : img.rgb) v = rs.uniform();
  return img;
}

double scene_probe_loss(const SceneRecord& rec, const Image& img, const Network& net,
                        const ModelConfig& cfg, const Eigen::VectorXd& d_sg,
                        const Eigen::MatrixXd& d_S, const Eigen::VectorXd& d_sb,
                        const Eigen::VectorXd& d_vp_shared, const Eigen::VectorXd& d_vg_extra) {
  const whoi::SceneForward f = whoi::forward_scene(rec, img, net, cfg);
  double loss = d_sg.dot(f.s_g) + (d_S.array() * f.S.array()).sum() + d_sb.dot(f.s_b) +
                d_vg_extra.dot(f.v_g);
  for (const whoi::PairCache& c : f.pc) loss += d_vp_shared.dot(c.v_p);
  return loss;
}

}  // namespace

TEST_CASE("ktn mode names round trip") {
  for (KtnMode m :
       {KtnMode::softmax, KtnMode::uniform, KtnMode::sigmoid, KtnMode::union_only})
    CHECK(whoi::ktn_mode_from_string(whoi::to_string(m)) == m);
  CHECK_THROWS_AS(whoi::ktn_mode_from_string("attention"), std::invalid_argument);
}

TEST_CASE("network registers tensors in a frozen order") {
  ParameterStore store;
  Network net = Network::create(store, tiny_dims(), 3, 4);

  // checkpoints serialize values by this order; reordering breaks old files
  const std::vector<std::string> expected = {
      "encoder.patch_proj", "encoder.patch_bias", "encoder.pos", "pool.wq", "pool.wk",
      "pool.wv",            "pool.wo",            "f_sp.w1",     "f_sp.b1", "f_sp.w2",
      "f_sp.b2",            "f_e.w1",             "f_e.b1",      "f_e.w2",  "f_e.b2",
      "f_k.w1",             "f_k.b1",             "f_k.w2",      "f_k.b2",  "f_u.w",
      "f_u.b",              "f_p.w",              "f_p.b",       "f_b.w",   "f_b.b",
      "bank"};
  CHECK(store.names() == expected);

  CHECK(net.f_p.w->value.rows() == 3);
  CHECK(net.f_p.w->value.cols() == 8);
  CHECK(net.bank->value.rows() == 4);
  CHECK(net.bank->value.cols() == 8);
  CHECK(net.enc.pos->value.cols() == 4);  // 16x16 at patch 8
  CHECK(net.f_sp.l1.w->value.cols() == 2 * whoi::kSpatialDim);

  ParameterStore s2;
  ModelDims bad = tiny_dims();
  bad.feat_dim = 1;
  CHECK_THROWS_AS(Network::create(s2, bad, 3, 4), std::invalid_argument);
  bad = tiny_dims();
  bad.image_w = 17;
  CHECK_THROWS_AS(Network::create(s2, bad, 3, 4), std::invalid_argument);
  CHECK_THROWS_AS(Network::create(s2, tiny_dims(), 0, 4), std::invalid_argument);
}

TEST_CASE("parameter init is seeded, fan-in scaled, zero-biased") {
  ParameterStore a, b, c;
  Network::create(a, tiny_dims(), 3, 4);
  Network::create(b, tiny_dims(), 3, 4);
  Network::create(c, tiny_dims(), 3, 4);
  whoi::init_params(a, 5);
  whoi::init_params(b, 5);
  whoi::init_params(c, 6);

  for (const std::string& n : a.names()) {
    CHECK(a.at(n).value == b.at(n).value);
    const bool is_bias = n.ends_with(".b") || n.ends_with(".b1") || n.ends_with(".b2") ||
                         n.ends_with("_bias");
    if (is_bias) CHECK(a.at(n).value.cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(a.at("f_e.w1").value != c.at("f_e.w1").value);
  CHECK(a.values_finite());

  // the positional table uses a fixed scale, everything else shrinks with
  // fan-in; check the sample spread of the two largest tensors
  const Eigen::MatrixXd& pos = a.at("encoder.pos").value;
  const double pos_std = std::sqrt(pos.array().square().mean());
  CHECK(pos_std == doctest::Approx(0.1).epsilon(0.35));
  const Eigen::MatrixXd& proj = a.at("encoder.patch_proj").value;
  const double proj_std = std::sqrt(proj.array().square().mean());
  CHECK(proj_std == doctest::Approx(1.0 / std::sqrt(192.0)).epsilon(0.15));
}

TEST_CASE("bank rows are the vocabulary prompt embeddings") {
  ParameterStore store;
  Network net = Network::create(store, tiny_dims(), 3, 4);
  const whoi::HOIVocabulary vocab = whoi::make_toy_vocabulary(3, 2, 4);
  const whoi::ToyTextEncoder text(8);
  whoi::init_bank(net, vocab, text);

  for (int k = 0; k < 4; ++k) {
    const Eigen::VectorXd row = net.bank->value.row(k).transpose();
    CHECK((row - text.encode(vocab.make_prompt(k))).cwiseAbs().maxCoeff() == 0.0);
    CHECK(std::abs(row.norm() - 1.0) < 1e-9);
  }

  const whoi::ToyTextEncoder wrong_dim(9);
  CHECK_THROWS_AS(whoi::init_bank(net, vocab, wrong_dim), std::invalid_argument);
  const whoi::HOIVocabulary bigger = whoi::make_toy_vocabulary(3, 2, 5);
  CHECK_THROWS_AS(whoi::init_bank(net, bigger, text), std::invalid_argument);
}

TEST_CASE("global scores are bank inner products") {
  RandomStream rs(17);
  Eigen::MatrixXd bank(5, 6);
  Eigen::VectorXd v(6);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 6; ++c) bank(r, c) = rs.normal();
  for (int c = 0; c < 6; ++c) v[c] = rs.normal();

  const Eigen::VectorXd s = whoi::global_hoi_scores(v, bank);
  REQUIRE(s.size() == 5);
  for (int k = 0; k < 5; ++k) CHECK(s[k] == doctest::Approx(bank.row(k).dot(v)).epsilon(1e-12));
  CHECK_THROWS_AS(whoi::global_hoi_scores(Eigen::VectorXd::Zero(4), bank), std::invalid_argument);
}

TEST_CASE("knowledge readout modes produce the documented formulas") {
  ParameterStore store;
  Network net = Network::create(store, tiny_dims(), 3, 4);
  whoi::init_params(store, 2);
  RandomStream rs(3);
  Eigen::VectorXd v_p(8), v_u(8);
  for (int i = 0; i < 8; ++i) {
    v_p[i] = rs.normal();
    v_u[i] = rs.normal();
  }
  const Eigen::MatrixXd& bank = net.bank->value;
  ModelConfig cfg;

  cfg.ktn_mode = KtnMode::softmax;
  whoi::KtnResult r = whoi::ktn(v_p, v_u, net, cfg);
  Eigen::VectorXd alpha = whoi::softmax(bank * v_u);
  CHECK((r.alpha - alpha).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(r.alpha.sum() - 1.0) < 1e-12);
  CHECK((r.v_meta - bank.transpose() * alpha).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r.vhat - net.f_k.forward(v_p + r.v_meta)).cwiseAbs().maxCoeff() < 1e-12);

  cfg.ktn_mode = KtnMode::uniform;
  r = whoi::ktn(v_p, v_u, net, cfg);
  CHECK((r.alpha.array() - 0.25).abs().maxCoeff() < 1e-12);
  // ignores the union feature entirely
  whoi::KtnResult r2 = whoi::ktn(v_p, 2.0 * v_u, net, cfg);
  CHECK((r.vhat - r2.vhat).cwiseAbs().maxCoeff() == 0.0);

  cfg.ktn_mode = KtnMode::sigmoid;
  r = whoi::ktn(v_p, v_u, net, cfg);
  const Eigen::VectorXd logits = bank * v_u;
  for (int k = 0; k < 4; ++k) CHECK(r.alpha[k] == doctest::Approx(whoi::sigmoid(logits[k])).epsilon(1e-12));

  cfg.ktn_mode = KtnMode::union_only;
  r = whoi::ktn(v_p, v_u, net, cfg);
  CHECK(r.alpha.size() == 0);
  CHECK((r.v_meta - net.f_u.forward(v_u)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("knowledge readout gradients match finite differences") {
  ParameterStore store;
  Network net = Network::create(store, tiny_dims(), 3, 4);
  whoi::init_params(store, 12);
  RandomStream rs(13);
  Eigen::VectorXd v_p(8), v_u(8), probe(8);
  for (int i = 0; i < 8; ++i) {
    v_p[i] = rs.normal();
    v_u[i] = rs.normal();
    probe[i] = rs.normal();
  }

  const double h = 1e-4;
  auto check_rel = [](double analytic, double numeric) {
    const double rel = std::abs(analytic - numeric) /
                       std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    CHECK(rel < 1e-4);
  };

  for (KtnMode mode :
       {KtnMode::softmax, KtnMode::uniform, KtnMode::sigmoid, KtnMode::union_only}) {
    CAPTURE(whoi::to_string(mode));
    ModelConfig cfg;
    cfg.ktn_mode = mode;
    cfg.local_detached = false;

    store.zero_grads();
    whoi::KtnCache cache;
    whoi::ktn(v_p, v_u, net, cfg, &cache);
    Eigen::VectorXd d_vu = Eigen::VectorXd::Zero(8);
    const Eigen::VectorXd d_vp = whoi::ktn_backward(cache, net, cfg, probe, d_vu);

    auto loss_at = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
      return probe.dot(whoi::ktn(a, b, net, cfg).vhat);
    };
    for (int i = 0; i < 8; ++i) {
      Eigen::VectorXd up = v_p, dn = v_p;
      up[i] += h;
      dn[i] -= h;
      check_rel(d_vp[i], (loss_at(up, v_u) - loss_at(dn, v_u)) / (2 * h));
      up = v_u;
      dn = v_u;
      up[i] += h;
      dn[i] -= h;
      const double numeric = (loss_at(v_p, up) - loss_at(v_p, dn)) / (2 * h);
      if (mode == KtnMode::uniform)
        CHECK(std::abs(numeric) < 1e-9);  // constant weights: nothing reaches v_u
      else
        check_rel(d_vu[i], numeric);
    }
    for (const std::string& n : {"f_k.w1", "f_k.b1", "f_k.w2", "f_k.b2", "f_u.w", "f_u.b", "bank"}) {
      Tensor& t = store.at(n);
      for (Eigen::Index r = 0; r < t.value.rows(); ++r)
        for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
          const double keep = t.value(r, c);
          t.value(r, c) = keep + h;
          const double up = probe.dot(whoi::ktn(v_p, v_u, net, cfg).vhat);
          t.value(r, c) = keep - h;
          const double dn = probe.dot(whoi::ktn(v_p, v_u, net, cfg).vhat);
          t.value(r, c) = keep;
          check_rel(t.grad(r, c), (up - dn) / (2 * h));
        }
    }
  }

  // with the local branch detached the bank must not accumulate anything
  ModelConfig cfg;
  cfg.ktn_mode = KtnMode::softmax;
  cfg.local_detached = true;
  store.zero_grads();
  whoi::KtnCache cache;
  whoi::ktn(v_p, v_u, net, cfg, &cache);
  Eigen::VectorXd d_vu = Eigen::VectorXd::Zero(8);
  whoi::ktn_backward(cache, net, cfg, probe, d_vu);
  CHECK(store.at("bank").grad.norm() == 0.0);
  CHECK(d_vu.norm() > 0.0);  // the union feature still steers the attention
}

TEST_CASE("per-class aggregation over the pair bag") {
  Eigen::MatrixXd S(3, 2);
  S << 1.0, -2.0,
       4.0, -2.0,
       4.0,  0.5;
  const Eigen::VectorXd top = whoi::aggregate_scores(S);
  CHECK(top[0] == 4.0);
  CHECK(top[1] == 0.5);
  const std::vector<int> rows = whoi::aggregate_argmax(S);
  CHECK(rows[0] == 1);  // tie between rows 1 and 2 goes to the first
  CHECK(rows[1] == 2);

  CHECK_THROWS_AS(whoi::aggregate_scores(Eigen::MatrixXd(0, 2)), std::invalid_argument);
  CHECK_THROWS_AS(whoi::aggregate_argmax(Eigen::MatrixXd(0, 2)), std::invalid_argument);
  CHECK_THROWS_AS(whoi::normalize_pairs(Eigen::MatrixXd(0, 2)), std::invalid_argument);
}

TEST_CASE("pair renormalization is a per-class distribution") {
  RandomStream rs(23);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 1 + rs.uniform_int(6);
    const int a = 1 + rs.uniform_int(4);
    Eigen::MatrixXd S(m, a);
    // include logits far outside the sane range; shifted exponentials must hold
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < a; ++j) S(i, j) = rs.normal(0.0, trial % 5 == 0 ? 300.0 : 2.0);
    const Eigen::MatrixXd bar = whoi::normalize_pairs(S);
    for (int j = 0; j < a; ++j) {
      CHECK(std::abs(bar.col(j).sum() - 1.0) < 1e-9);
      CHECK(bar.col(j).minCoeff() >= 0.0);
    }
    const Eigen::MatrixXd e = whoi::pair_class_probs(S);
    for (int j = 0; j < a; ++j) {
      const double gate = whoi::sigmoid(S.col(j).maxCoeff());
      for (int i = 0; i < m; ++i)
        CHECK(e(i, j) == doctest::Approx(gate * bar(i, j)).epsilon(1e-12));
    }
  }

  // a single pair: renormalization is a no-op, the gate is the whole story
  Eigen::MatrixXd one(1, 3);
  one << -1.3, 0.0, 2.4;
  const Eigen::MatrixXd e = whoi::pair_class_probs(one);
  for (int j = 0; j < 3; ++j)
    CHECK(e(0, j) == doctest::Approx(whoi::sigmoid(one(0, j))).epsilon(1e-12));
}

TEST_CASE("score fusion multiplies the documented factors") {
  const whoi::HOIVocabulary vocab = whoi::make_toy_vocabulary(3, 2, 4);
  const int verb = vocab.combo(2).verb_id;
  const int object = vocab.combo(2).object_id;

  Eigen::VectorXd s_g = Eigen::VectorXd::Constant(4, 5.0);
  s_g[2] = 0.0;  // sigmoid -> exactly 0.5
  Eigen::VectorXd e_p = Eigen::VectorXd::Constant(3, 0.9);
  e_p[verb] = 0.4;
  const double s_b = std::log(4.0);  // sigmoid -> 0.8

  const auto fused = whoi::fuse_scores(s_g, e_p, s_b, verb, object, 0.9, 0.8, 2.8, vocab, true);
  REQUIRE(fused.has_value());
  CHECK(fused->first == doctest::Approx(0.5 * 0.4 * 0.8).epsilon(1e-12));
  CHECK(fused->second == doctest::Approx(std::pow(0.72, 2.8) * 0.16).epsilon(1e-12));

  const auto bare = whoi::fuse_scores(s_g, e_p, s_b, verb, object, 0.9, 0.8, 2.8, vocab, false);
  CHECK(bare->first == doctest::Approx(0.5 * 0.4).epsilon(1e-12));

  // unknown combos are skipped, not an error; out-of-range priors are an error
  bool found_gap = false;
  for (int a = 0; a < 3 && !found_gap; ++a)
    for (int c = 0; c < 2 && !found_gap; ++c)
      if (!vocab.hoi_index(a, c)) {
        CHECK_FALSE(whoi::fuse_scores(s_g, e_p, s_b, a, c, 0.9, 0.8, 2.8, vocab, true).has_value());
        found_gap = true;
      }
  CHECK(found_gap);  // 3*2 grid minus 4 combos leaves gaps
  CHECK_THROWS_AS(whoi::fuse_scores(s_g, e_p, s_b, verb, object, 1.1, 0.8, 2.8, vocab, true),
                  std::invalid_argument);
}

TEST_CASE("pair enumeration is human-major and skips identical boxes") {
  SceneRecord rec = tiny_scene();
  // an object sharing the first human's exact box pairs with the second human only
  rec.proposals.push_back(prop({1, 1, 7, 9}, Proposal::Kind::object, 1, 0.5));

  const std::vector<whoi::PairItem> pairs = whoi::enumerate_pairs(rec);
  REQUIRE(pairs.size() == 5);
  CHECK(pairs[0].human_prop == 0);
  CHECK(pairs[0].object_prop == 1);
  CHECK(pairs[1].human_prop == 0);
  CHECK(pairs[1].object_prop == 3);
  CHECK(pairs[2].human_prop == 2);
  CHECK(pairs[2].object_prop == 1);
  CHECK(pairs[3].human_prop == 2);
  CHECK(pairs[3].object_prop == 3);
  CHECK(pairs[4].human_prop == 2);
  CHECK(pairs[4].object_prop == 4);

  const whoi::PairItem& p = pairs[0];
  CHECK(p.hbox == rec.proposals[0].box);
  CHECK(p.obox == rec.proposals[1].box);
  CHECK(p.ubox == whoi::union_box(p.hbox, p.obox));
  CHECK(p.object_class == 0);
  CHECK(p.score_h == 0.9);
  CHECK(p.score_o == 0.8);

  SceneRecord humans_only;
  humans_only.width = humans_only.height = 16;
  humans_only.proposals = {prop({1, 1, 5, 5}, Proposal::Kind::human, -1, 0.9)};
  CHECK(whoi::enumerate_pairs(humans_only).empty());
}

TEST_CASE("scene forward shapes and the conditioning bypass") {
  ParameterStore store;
  Network net = Network::create(store, tiny_dims(), 3, 4);
  whoi::init_params(store, 31);
  const SceneRecord rec = tiny_scene();
  const Image img = noise_image(16, 16, 32);

  ModelConfig cfg;
  const whoi::SceneForward f = whoi::forward_scene(rec, img, net, cfg);
  REQUIRE(f.pairs.size() == 4);
  CHECK(f.S.rows() == 4);
  CHECK(f.S.cols() == 3);
  CHECK(f.s_b.size() == 4);
  CHECK(f.s_g.size() == 4);
  CHECK((f.s_g - whoi::global_hoi_scores(f.v_g, net.bank->value)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(f.S.allFinite());
  for (const whoi::PairCache& c : f.pc) {
    CHECK(c.ktn.used);
    CHECK((c.vhat - c.v_p).cwiseAbs().maxCoeff() > 0.0);
  }

  ModelConfig raw = cfg;
  raw.use_ktn = false;
  const whoi::SceneForward g = whoi::forward_scene(rec, img, net, raw);
  for (const whoi::PairCache& c : g.pc) {
    CHECK_FALSE(c.ktn.used);
    CHECK(c.vhat == c.v_p);
  }
  // the global branch does not depend on the pair conditioning switch
  CHECK(g.s_g == f.s_g);
}

TEST_CASE("scene backward matches finite differences end to end") {
  ParameterStore store;
  Network net = Network::create(store, tiny_dims(), 3, 4);
  whoi::init_params(store, 41);
  const SceneRecord rec = tiny_scene();
  const Image img = noise_image(16, 16, 42);

  RandomStream rs(43);
  Eigen::VectorXd d_sg(4), d_sb(4), d_vp_shared(8), d_vg_extra(8);
  Eigen::MatrixXd d_S(4, 3);
  for (int i = 0; i < 4; ++i) d_sg[i] = rs.normal();
  for (int i = 0; i < 4; ++i) d_sb[i] = rs.normal();
  for (int i = 0; i < 8; ++i) d_vp_shared[i] = rs.normal();
  for (int i = 0; i < 8; ++i) d_vg_extra[i] = rs.normal();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) d_S(i, j) = rs.normal();

  for (const bool with_ktn : {true, false}) {
    CAPTURE(with_ktn);
    ModelConfig cfg;
    cfg.use_ktn = with_ktn;
    cfg.local_detached = false;

    store.zero_grads();
    const whoi::SceneForward f = whoi::forward_scene(rec, img, net, cfg);
    whoi::backward_scene(f, img, net, cfg, d_sg, d_S, d_sb, d_vp_shared, d_vg_extra);

    int checked = 0;
    for (const std::string& n : store.names()) {
      Tensor& t = store.at(n);
      for (Eigen::Index r = 0; r < t.value.rows(); ++r)
        for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
          const double keep = t.value(r, c);
          const double analytic = t.grad(r, c);
          // no single step width suits every entry: tiny gradients drown in
          // roundoff at small h and in curvature at large h. A wrong
          // derivative disagrees at every width, so trying three is sound.
          double best = 1.0;
          for (const double h : {1e-4, 1e-3, 1e-5}) {
            t.value(r, c) = keep + h;
            const double up = scene_probe_loss(rec, img, net, cfg, d_sg, d_S, d_sb, d_vp_shared, d_vg_extra);
            t.value(r, c) = keep - h;
            const double dn = scene_probe_loss(rec, img, net, cfg, d_sg, d_S, d_sb, d_vp_shared, d_vg_extra);
            t.value(r, c) = keep;
            const double numeric = (up - dn) / (2 * h);
            best = std::min(best, std::abs(analytic - numeric) /
                                      std::max(1e-8, std::abs(analytic) + std::abs(numeric)));
            if (best < 1e-4) break;
          }
          CHECK(best < 1e-4);
          ++checked;
        }
    }
    CHECK(checked == static_cast<int>(store.parameter_count()));
  }
}

TEST_CASE("detection list is ranked, complete, and factorized") {
  ParameterStore store;
  Network net = Network::create(store, tiny_dims(), 3, 4);
  whoi::init_params(store, 51);
  const whoi::HOIVocabulary vocab = whoi::make_toy_vocabulary(3, 2, 4);
  const whoi::ToyTextEncoder text(8);
  whoi::init_bank(net, vocab, text);

  const SceneRecord rec = tiny_scene();
  const Image img = noise_image(16, 16, 52);
  ModelConfig cfg;

  const std::vector<whoi::Detection> dets = whoi::detect(rec, img, net, cfg, vocab);
  REQUIRE_FALSE(dets.empty());

  int expected = 0;
  for (const whoi::PairItem& p : whoi::enumerate_pairs(rec))
    for (int a = 0; a < 3; ++a)
      if (vocab.hoi_index(a, p.object_class)) ++expected;
  CHECK(static_cast<int>(dets.size()) == expected);

  for (std::size_t i = 0; i + 1 < dets.size(); ++i) CHECK(dets[i].score_r >= dets[i + 1].score_r);
  for (const whoi::Detection& d : dets) {
    CHECK(d.image_id == rec.image_id);
    CHECK(vocab.hoi_index(d.verb, d.object_class).has_value());
    CHECK(d.score_r ==
          doctest::Approx(d.comp_det * d.comp_global * d.comp_pair * d.comp_related).epsilon(1e-12));
    CHECK(d.comp_global > 0.0);
    CHECK(d.comp_global < 1.0);
    CHECK(d.comp_related > 0.0);
    CHECK(d.comp_related < 1.0);
  }

  // rerunning the pipeline reproduces the list bit for bit
  const std::vector<whoi::Detection> again = whoi::detect(rec, img, net, cfg, vocab);
  REQUIRE(again.size() == dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    CHECK(again[i].score_r == dets[i].score_r);
    CHECK(again[i].verb == dets[i].verb);
    CHECK(again[i].object_class == dets[i].object_class);
  }

  ModelConfig no_src = cfg;
  no_src.use_src = false;
  for (const whoi::Detection& d : whoi::detect(rec, img, net, no_src, vocab))
    CHECK(d.comp_related == 1.0);

  SceneRecord empty = rec;
  empty.proposals.clear();
  CHECK(whoi::detect(empty, img, net, cfg, vocab).empty());
}

TEST_CASE("bank similarity scoring needs no trained heads") {
  ParameterStore store;
  Network net = Network::create(store, tiny_dims(), 3, 4);
  whoi::init_params(store, 61);
  const whoi::HOIVocabulary vocab = whoi::make_toy_vocabulary(3, 2, 4);
  const whoi::ToyTextEncoder text(8);
  whoi::init_bank(net, vocab, text);

  const SceneRecord rec = tiny_scene();
  const Image img = noise_image(16, 16, 62);
  const std::vector<whoi::Detection> dets = whoi::detect_bank_similarity(rec, img, net, 2.8, vocab);
  REQUIRE_FALSE(dets.empty());
  for (std::size_t i = 0; i + 1 < dets.size(); ++i) CHECK(dets[i].score_r >= dets[i + 1].score_r);
  for (const whoi::Detection& d : dets) {
    CHECK(d.comp_global == 1.0);
    CHECK(d.comp_related == 1.0);
    CHECK(d.comp_pair >= 0.0);
    CHECK(d.comp_pair <= 1.0);
    CHECK(d.score_r == doctest::Approx(d.comp_det * d.comp_pair).epsilon(1e-12));
  }
}

TEST_CASE("detections survive a file round trip") {
  std::vector<whoi::Detection> dets(2);
  dets[0].image_id = 3;
  dets[0].human_box = {1.25, 2.5, 10.75, 20.125};
  dets[0].object_box = {5, 6, 9, 14};
  dets[0].object_class = 1;
  dets[0].verb = 2;
  dets[0].score_r = 0.06125;
  dets[0].comp_global = 0.5;
  dets[0].comp_pair = 0.25;
  dets[0].comp_related = 0.7;
  dets[0].comp_det = 0.7;
  dets[1].image_id = 4;
  dets[1].human_box = {0, 0, 4, 4};
  dets[1].object_box = {8, 8, 12, 12};
  dets[1].score_r = 1e-9;

  const std::string path = "det_roundtrip.jsonl";
  whoi::save_detections(dets, path);
  const std::vector<whoi::Detection> back = whoi::load_detections(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_id == 3);
  CHECK(back[0].human_box == dets[0].human_box);
  CHECK(back[0].object_box == dets[0].object_box);
  CHECK(back[0].object_class == 1);
  CHECK(back[0].verb == 2);
  CHECK(back[0].score_r == dets[0].score_r);
  CHECK(back[0].comp_global == 0.5);
  CHECK(back[0].comp_pair == 0.25);
  CHECK(back[0].comp_related == 0.7);
  CHECK(back[0].comp_det == 0.7);
  CHECK(back[1].score_r == 1e-9);
  std::remove(path.c_str());

  CHECK_THROWS_AS(whoi::load_detections("no/such/file.jsonl"), std::runtime_error);

  const std::string bad_path = "det_bad.jsonl";
  {
    std::ofstream out(bad_path);
    out << R"({"image_id": 1, "human_box": [0,0,1,1], "object_box": [2,2,3,3], "object_class": 0, "verb": 0, "score_R": 0.5, "score_components": {"global": 1, "pair": 1, "relatedness": 1, "det": 1}})"
        << "\n";
    out << "{broken\n";
  }
  try {
    whoi::load_detections(bad_path);
    FAIL("malformed line should throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::remove(bad_path.c_str());
}
