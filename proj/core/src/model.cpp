#include "whoi/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "whoi/rng.hpp"

namespace whoi {

KtnMode ktn_mode_from_string(const std::string& s) {
  if (s == "softmax") return KtnMode::softmax;
  if (s == "uniform") return KtnMode::uniform;
  if (s == "sigmoid") return KtnMode::sigmoid;
  if (s == "union_only") return KtnMode::union_only;
  throw std::invalid_argument("unknown ktn mode: " + s);
}

std::string to_string(KtnMode m) {
  switch (m) {
    case KtnMode::softmax: return "softmax";
    case KtnMode::uniform: return "uniform";
    case KtnMode::sigmoid: return "sigmoid";
    case KtnMode::union_only: return "union_only";
  }
  return "softmax";
}

Network Network::create(ParameterStore& store, const ModelDims& dims, int num_verbs, int num_hoi) {
  if (dims.feat_dim < 2) throw std::invalid_argument("feat_dim must be >= 2");
  if (dims.patch < 1) throw std::invalid_argument("patch must be >= 1");
  if (dims.image_h < dims.patch || dims.image_w < dims.patch ||
      dims.image_h % dims.patch != 0 || dims.image_w % dims.patch != 0)
    throw std::invalid_argument("image size must be a positive multiple of the patch size");
  if (dims.roi_grid < 1) throw std::invalid_argument("roi_grid must be >= 1");
  if (num_verbs < 1 || num_hoi < 1) throw std::invalid_argument("need at least one verb and one interaction");

  const int d = dims.feat_dim;
  const int cells = (dims.image_h / dims.patch) * (dims.image_w / dims.patch);

  Network net;
  net.dims = dims;
  net.num_verbs = num_verbs;
  net.num_hoi = num_hoi;

  net.enc.patch_size = dims.patch;
  net.enc.patch_proj = &store.add("encoder.patch_proj", d, 3 * dims.patch * dims.patch);
  net.enc.patch_bias = &store.add("encoder.patch_bias", d, 1);
  net.enc.pos = &store.add("encoder.pos", d, cells);

  net.pool.wq = &store.add("pool.wq", d, d);
  net.pool.wk = &store.add("pool.wk", d, d);
  net.pool.wv = &store.add("pool.wv", d, d);
  net.pool.wo = &store.add("pool.wo", d, d);

  net.f_sp.l1 = {&store.add("f_sp.w1", d, 2 * kSpatialDim), &store.add("f_sp.b1", d, 1)};
  net.f_sp.l2 = {&store.add("f_sp.w2", d, d), &store.add("f_sp.b2", d, 1)};
  net.f_e.l1 = {&store.add("f_e.w1", d, 3 * d), &store.add("f_e.b1", d, 1)};
  net.f_e.l2 = {&store.add("f_e.w2", d, d), &store.add("f_e.b2", d, 1)};
  net.f_k.l1 = {&store.add("f_k.w1", d, d), &store.add("f_k.b1", d, 1)};
  net.f_k.l2 = {&store.add("f_k.w2", d, d), &store.add("f_k.b2", d, 1)};
  net.f_u = {&store.add("f_u.w", d, d), &store.add("f_u.b", d, 1)};
  net.f_p = {&store.add("f_p.w", num_verbs, d), &store.add("f_p.b", num_verbs, 1)};
  net.f_b = {&store.add("f_b.w", 1, d), &store.add("f_b.b", 1, 1)};
  net.bank = &store.add("bank", num_hoi, d);
  return net;
}

void init_params(ParameterStore& store, std::uint64_t seed) {
  RandomStream rs(seed);
  for (const std::string& name : store.names()) {
    Tensor& t = store.at(name);
    const bool is_bias = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") ||
                         name.ends_with("_bias");
    if (is_bias) {
      t.value.setZero();
      continue;
    }
    // position table likes a fixed modest scale; fan-in scaling elsewhere
    const double std_dev =
        name == "encoder.pos" ? 0.1 : 1.0 / std::sqrt(static_cast<double>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) t.value(r, c) = rs.normal(0.0, std_dev);
  }
}

void init_bank(Network& net, const HOIVocabulary& vocab, const TextEncoder& text) {
  if (text.dim() != net.dims.feat_dim)
    throw std::invalid_argument("init_bank: text encoder dim " + std::to_string(text.dim()) +
                                " != feat_dim " + std::to_string(net.dims.feat_dim));
  if (vocab.num_hoi() != net.num_hoi)
    throw std::invalid_argument("init_bank: vocabulary has " + std::to_string(vocab.num_hoi()) +
                                " interactions, network expects " + std::to_string(net.num_hoi));
  for (int k = 0; k < vocab.num_hoi(); ++k)
    net.bank->value.row(k) = text.encode(vocab.make_prompt(k)).transpose();
}

Eigen::VectorXd global_hoi_scores(const Eigen::VectorXd& v_g, const Eigen::MatrixXd& bank) {
  if (bank.cols() != v_g.size())
    throw std::invalid_argument("global_hoi_scores: bank cols != feature dim");
  return bank * v_g;
}

KtnResult ktn(const Eigen::VectorXd& v_p, const Eigen::VectorXd& v_u, const Network& net,
              const ModelConfig& cfg, KtnCache* cache) {
  const Eigen::MatrixXd& bank = net.bank->value;
  KtnResult r;
  if (cache) {
    cache->mode = cfg.ktn_mode;
    cache->used = true;
    cache->v_u = v_u;
  }
  switch (cfg.ktn_mode) {
    case KtnMode::softmax: {
      Eigen::VectorXd logits = bank * v_u;
      r.alpha = softmax(logits);
      r.v_meta = bank.transpose() * r.alpha;
      if (cache) {
        cache->logits = std::move(logits);
        cache->alpha = r.alpha;
      }
      break;
    }
    case KtnMode::uniform: {
      r.alpha = Eigen::VectorXd::Constant(bank.rows(), 1.0 / static_cast<double>(bank.rows()));
      r.v_meta = bank.transpose() * r.alpha;
      if (cache) cache->alpha = r.alpha;
      break;
    }
    case KtnMode::sigmoid: {
      Eigen::VectorXd logits = bank * v_u;
      r.alpha = logits.unaryExpr([](double z) { return sigmoid(z); });
      r.v_meta = bank.transpose() * r.alpha;
      if (cache) {
        cache->logits = std::move(logits);
        cache->alpha = r.alpha;
      }
      break;
    }
    case KtnMode::union_only: {
      // bank bypassed: condition directly on the union appearance
      r.v_meta = net.f_u.forward(v_u);
      if (cache) cache->fu_in = v_u;
      break;
    }
  }
  if (cache) cache->v_meta = r.v_meta;
  r.vhat = net.f_k.forward(v_p + r.v_meta, cache ? &cache->fk : nullptr);
  return r;
}

Eigen::VectorXd ktn_backward(const KtnCache& cache, const Network& net, const ModelConfig& cfg,
                             const Eigen::VectorXd& d_vhat, Eigen::VectorXd& d_vu_accum) {
  const Eigen::MatrixXd& bank = net.bank->value;
  Eigen::VectorXd d_h = net.f_k.backward(cache.fk, d_vhat);
  const Eigen::VectorXd& d_vmeta = d_h;  // h = v_p + v_meta

  switch (cache.mode) {
    case KtnMode::softmax: {
      if (!cfg.local_detached) net.bank->grad += cache.alpha * d_vmeta.transpose();
      Eigen::VectorXd d_alpha = bank * d_vmeta;
      Eigen::VectorXd d_logits = softmax_backward(cache.alpha, d_alpha);
      if (!cfg.local_detached) net.bank->grad += d_logits * cache.v_u.transpose();
      d_vu_accum += bank.transpose() * d_logits;
      break;
    }
    case KtnMode::uniform: {
      if (!cfg.local_detached) net.bank->grad += cache.alpha * d_vmeta.transpose();
      break;  // constant weights: nothing reaches v_u
    }
    case KtnMode::sigmoid: {
      if (!cfg.local_detached) net.bank->grad += cache.alpha * d_vmeta.transpose();
      Eigen::VectorXd d_alpha = bank * d_vmeta;
      Eigen::VectorXd d_logits =
          (d_alpha.array() * cache.alpha.array() * (1.0 - cache.alpha.array())).matrix();
      if (!cfg.local_detached) net.bank->grad += d_logits * cache.v_u.transpose();
      d_vu_accum += bank.transpose() * d_logits;
      break;
    }
    case KtnMode::union_only: {
      d_vu_accum += net.f_u.backward(cache.fu_in, d_vmeta);
      break;
    }
  }
  return d_h;  // d_vp
}

Eigen::VectorXd aggregate_scores(const Eigen::MatrixXd& S) {
  if (S.rows() == 0) throw std::invalid_argument("aggregate_scores: empty pair bag");
  return S.colwise().maxCoeff().transpose();
}

std::vector<int> aggregate_argmax(const Eigen::MatrixXd& S) {
  if (S.rows() == 0) throw std::invalid_argument("aggregate_argmax: empty pair bag");
  std::vector<int> rows(S.cols());
  for (Eigen::Index a = 0; a < S.cols(); ++a) {
    int best = 0;
    for (Eigen::Index m = 1; m < S.rows(); ++m)
      if (S(m, a) > S(best, a)) best = static_cast<int>(m);
    rows[a] = best;
  }
  return rows;
}

Eigen::MatrixXd normalize_pairs(const Eigen::MatrixXd& S) {
  if (S.rows() == 0) throw std::invalid_argument("normalize_pairs: empty pair bag");
  Eigen::MatrixXd out(S.rows(), S.cols());
  for (Eigen::Index a = 0; a < S.cols(); ++a) out.col(a) = softmax(S.col(a));
  return out;
}

Eigen::MatrixXd pair_class_probs(const Eigen::MatrixXd& S) {
  Eigen::MatrixXd s_bar = normalize_pairs(S);
  Eigen::VectorXd gate = aggregate_scores(S).unaryExpr([](double z) { return sigmoid(z); });
  return s_bar.array().rowwise() * gate.transpose().array();
}

std::optional<std::pair<double, double>> fuse_scores(const Eigen::VectorXd& s_g,
                                                     const Eigen::VectorXd& e_p_row, double s_b,
                                                     int verb, int object_class, double s_h,
                                                     double s_o, double gamma,
                                                     const HOIVocabulary& vocab,
                                                     bool use_relatedness) {
  if (s_h < 0.0 || s_h > 1.0 || s_o < 0.0 || s_o > 1.0)
    throw std::invalid_argument("fuse_scores: detector scores must lie in [0, 1]");
  const std::optional<int> idx = vocab.hoi_index(verb, object_class);
  if (!idx) return std::nullopt;
  const double fused =
      sigmoid(s_g[*idx]) * e_p_row[verb] * (use_relatedness ? sigmoid(s_b) : 1.0);
  return std::make_pair(fused, std::pow(s_h * s_o, gamma) * fused);
}

std::vector<PairItem> enumerate_pairs(const SceneRecord& rec) {
  std::vector<PairItem> pairs;
  for (std::size_t i = 0; i < rec.proposals.size(); ++i) {
    if (rec.proposals[i].kind != Proposal::Kind::human) continue;
    for (std::size_t j = 0; j < rec.proposals.size(); ++j) {
      if (rec.proposals[j].kind != Proposal::Kind::object) continue;
      if (rec.proposals[i].box == rec.proposals[j].box) continue;
      PairItem p;
      p.human_prop = static_cast<int>(i);
      p.object_prop = static_cast<int>(j);
      p.hbox = rec.proposals[i].box;
      p.obox = rec.proposals[j].box;
      p.ubox = union_box(p.hbox, p.obox);
      p.object_class = rec.proposals[j].object_class;
      p.score_h = rec.proposals[i].score;
      p.score_o = rec.proposals[j].score;
      pairs.push_back(p);
    }
  }
  return pairs;
}

SceneForward forward_scene(const SceneRecord& rec, const Image& img, const Network& net,
                           const ModelConfig& cfg) {
  SceneForward f;
  f.gamma = encode_image(img, net.enc);
  f.v_g = attention_pool(f.gamma.cells, net.pool, &f.pool_g);
  f.s_g = global_hoi_scores(f.v_g, net.bank->value);

  f.pairs = enumerate_pairs(rec);
  const int m_count = static_cast<int>(f.pairs.size());
  f.pc.resize(m_count);
  f.S.resize(m_count, net.num_verbs);
  f.s_b.resize(m_count);

  const double img_w = rec.width, img_h = rec.height;
  for (int m = 0; m < m_count; ++m) {
    const PairItem& pr = f.pairs[m];
    PairCache& c = f.pc[m];
    c.v_h = region_feature(f.gamma, pr.hbox.clamped(img_w, img_h), net.dims.roi_grid, net.pool,
                           &c.plan_h, &c.pool_h);
    c.v_o = region_feature(f.gamma, pr.obox.clamped(img_w, img_h), net.dims.roi_grid, net.pool,
                           &c.plan_o, &c.pool_o);
    c.p = spatial_features(pr.hbox, pr.obox, img_w, img_h);
    c.v_sp = embed_spatial(c.p, net.f_sp, &c.sp_cache);

    Eigen::VectorXd x(3 * net.dims.feat_dim);
    x << c.v_h, c.v_o, c.v_sp;
    c.v_p = net.f_e.forward(x, &c.fe_cache);

    if (cfg.use_ktn) {
      c.v_u = region_feature(f.gamma, pr.ubox.clamped(img_w, img_h), net.dims.roi_grid, net.pool,
                             &c.plan_u, &c.pool_u);
      KtnResult kr = ktn(c.v_p, c.v_u, net, cfg, &c.ktn);
      c.vhat = std::move(kr.vhat);
    } else {
      c.ktn.used = false;
      c.vhat = c.v_p;
    }

    f.S.row(m) = net.f_p.forward(c.vhat).transpose();
    f.s_b[m] = net.f_b.forward(c.vhat)[0];
  }
  return f;
}

void backward_scene(const SceneForward& f, const Image& img, const Network& net,
                    const ModelConfig& cfg, const Eigen::VectorXd& d_sg, const Eigen::MatrixXd& d_S,
                    const Eigen::VectorXd& d_sb, const Eigen::VectorXd& d_vp_shared,
                    const Eigen::VectorXd& d_vg_extra) {
  Eigen::MatrixXd d_gamma = Eigen::MatrixXd::Zero(f.gamma.dim, f.gamma.cells.cols());

  // global branch: s_g = bank v_g
  net.bank->grad += d_sg * f.v_g.transpose();
  Eigen::VectorXd d_vg = net.bank->value.transpose() * d_sg;
  if (d_vg_extra.size()) d_vg += d_vg_extra;
  d_gamma += attention_pool_backward(f.pool_g, net.pool, d_vg);

  for (int m = 0; m < static_cast<int>(f.pairs.size()); ++m) {
    const PairCache& c = f.pc[m];
    Eigen::VectorXd d_vhat = net.f_p.backward(c.vhat, d_S.row(m).transpose());
    d_vhat += net.f_b.backward(c.vhat, Eigen::VectorXd::Constant(1, d_sb[m]));

    Eigen::VectorXd d_vu = Eigen::VectorXd::Zero(net.dims.feat_dim);
    Eigen::VectorXd d_vp = c.ktn.used ? ktn_backward(c.ktn, net, cfg, d_vhat, d_vu) : d_vhat;
    if (d_vp_shared.size()) d_vp += d_vp_shared;

    Eigen::VectorXd d_x = net.f_e.backward(c.fe_cache, d_vp);
    const int d = net.dims.feat_dim;
    Eigen::VectorXd d_vh = d_x.segment(0, d);
    Eigen::VectorXd d_vo = d_x.segment(d, d);
    Eigen::VectorXd d_vsp = d_x.segment(2 * d, d);
    net.f_sp.backward(c.sp_cache, d_vsp);  // input is data, gradient stops here

    roi_align_backward(c.plan_h, attention_pool_backward(c.pool_h, net.pool, d_vh), d_gamma);
    roi_align_backward(c.plan_o, attention_pool_backward(c.pool_o, net.pool, d_vo), d_gamma);
    if (c.ktn.used)
      roi_align_backward(c.plan_u, attention_pool_backward(c.pool_u, net.pool, d_vu), d_gamma);
  }

  encode_image_backward(img, f.gamma, d_gamma, net.enc);
}

namespace {

void sort_detections(std::vector<Detection>& dets, const std::vector<int>& pair_of,
                     const std::vector<int>& verb_of) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score_r != dets[b].score_r) return dets[a].score_r > dets[b].score_r;
    if (pair_of[a] != pair_of[b]) return pair_of[a] < pair_of[b];
    return verb_of[a] < verb_of[b];
  });
  std::vector<Detection> sorted;
  sorted.reserve(dets.size());
  for (std::size_t i : order) sorted.push_back(dets[i]);
  dets = std::move(sorted);
}

}  // namespace

std::vector<Detection> detect(const SceneRecord& rec, const Image& img, const Network& net,
                              const ModelConfig& cfg, const HOIVocabulary& vocab) {
  SceneForward f = forward_scene(rec, img, net, cfg);
  std::vector<Detection> dets;
  if (f.pairs.empty()) return dets;

  Eigen::MatrixXd e_p = pair_class_probs(f.S);
  std::vector<int> pair_of, verb_of;
  const double prior_gamma = cfg.gamma;
  for (int m = 0; m < static_cast<int>(f.pairs.size()); ++m) {
    const PairItem& pr = f.pairs[m];
    for (int a = 0; a < net.num_verbs; ++a) {
      auto fused = fuse_scores(f.s_g, e_p.row(m).transpose(), f.s_b[m], a, pr.object_class,
                               pr.score_h, pr.score_o, prior_gamma, vocab, cfg.use_src);
      if (!fused) continue;  // combo not in the vocabulary
      Detection d;
      d.image_id = rec.image_id;
      d.human_box = pr.hbox;
      d.object_box = pr.obox;
      d.object_class = pr.object_class;
      d.verb = a;
      d.score_r = fused->second;
      d.comp_global = sigmoid(f.s_g[*vocab.hoi_index(a, pr.object_class)]);
      d.comp_pair = e_p(m, a);
      d.comp_related = cfg.use_src ? sigmoid(f.s_b[m]) : 1.0;
      d.comp_det = std::pow(pr.score_h * pr.score_o, prior_gamma);
      dets.push_back(d);
      pair_of.push_back(m);
      verb_of.push_back(a);
    }
  }
  sort_detections(dets, pair_of, verb_of);
  return dets;
}

std::vector<Detection> detect_bank_similarity(const SceneRecord& rec, const Image& img,
                                              const Network& net, double gamma,
                                              const HOIVocabulary& vocab) {
  std::vector<Detection> dets;
  std::vector<PairItem> pairs = enumerate_pairs(rec);
  if (pairs.empty()) return dets;
  FeatureMap fmap = encode_image(img, net.enc);

  std::vector<int> pair_of, verb_of;
  const double img_w = rec.width, img_h = rec.height;
  for (int m = 0; m < static_cast<int>(pairs.size()); ++m) {
    const PairItem& pr = pairs[m];
    Eigen::VectorXd v_u =
        region_feature(fmap, pr.ubox.clamped(img_w, img_h), net.dims.roi_grid, net.pool);
    const double vn = v_u.norm();
    for (int a = 0; a < net.num_verbs; ++a) {
      const std::optional<int> idx = vocab.hoi_index(a, pr.object_class);
      if (!idx) continue;
      const Eigen::VectorXd row = net.bank->value.row(*idx).transpose();
      const double rn = row.norm();
      const double cos = (vn > 1e-12 && rn > 1e-12) ? v_u.dot(row) / (vn * rn) : 0.0;
      const double sim = 0.5 * (1.0 + cos);
      Detection d;
      d.image_id = rec.image_id;
      d.human_box = pr.hbox;
      d.object_box = pr.obox;
      d.object_class = pr.object_class;
      d.verb = a;
      d.comp_global = 1.0;
      d.comp_pair = sim;
      d.comp_related = 1.0;
      d.comp_det = std::pow(pr.score_h * pr.score_o, gamma);
      d.score_r = d.comp_det * sim;
      dets.push_back(d);
      pair_of.push_back(m);
      verb_of.push_back(a);
    }
  }
  sort_detections(dets, pair_of, verb_of);
  return dets;
}

namespace {

nlohmann::json box_to_json(const Box& b) { return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("box must be [x1, y1, x2, y2]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

void save_detections(const std::vector<Detection>& dets, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("detections: cannot open " + path + " for writing");
  for (const Detection& d : dets) {
    nlohmann::json j{{"image_id", d.image_id},
                     {"human_box", box_to_json(d.human_box)},
                     {"object_box", box_to_json(d.object_box)},
                     {"object_class", d.object_class},
                     {"verb", d.verb},
                     {"score_R", d.score_r},
                     {"score_components",
                      {{"global", d.comp_global},
                       {"pair", d.comp_pair},
                       {"relatedness", d.comp_related},
                       {"det", d.comp_det}}}};
    out << j.dump() << "\n";
  }
}

std::vector<Detection> load_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("detections: cannot open " + path);
  std::vector<Detection> dets;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      Detection d;
      d.image_id = j.at("image_id").get<int>();
      d.human_box = box_from_json(j.at("human_box"));
      d.object_box = box_from_json(j.at("object_box"));
      d.object_class = j.at("object_class").get<int>();
      d.verb = j.at("verb").get<int>();
      d.score_r = j.at("score_R").get<double>();
      const auto& c = j.at("score_components");
      d.comp_global = c.at("global").get<double>();
      d.comp_pair = c.at("pair").get<double>();
      d.comp_related = c.at("relatedness").get<double>();
      d.comp_det = c.at("det").get<double>();
      dets.push_back(d);
    } catch (const std::exception& e) {
      throw std::runtime_error("detections line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return dets;
}

}  // namespace whoi
