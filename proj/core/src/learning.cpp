#include "whoi/learning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "whoi/rng.hpp"

namespace whoi {

double bce_logits(double logit, double label) {
  // max(z,0) - z*y + log(1 + exp(-|z|)), stable for large |z|
  return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

double bce_grad(double logit, double label) { return sigmoid(logit) - label; }

double loss_global(const Eigen::VectorXd& s_g, const std::set<int>& positive_hois) {
  for (int k : positive_hois)
    if (k < 0 || k >= s_g.size())
      throw std::invalid_argument("loss_global: label " + std::to_string(k) + " out of range");
  double loss = 0;
  for (Eigen::Index k = 0; k < s_g.size(); ++k)
    loss += bce_logits(s_g[k], positive_hois.count(static_cast<int>(k)) ? 1.0 : 0.0);
  return loss;
}

double loss_pairwise(const Eigen::VectorXd& s_tilde, const std::set<int>& positive_verbs) {
  for (int a : positive_verbs)
    if (a < 0 || a >= s_tilde.size())
      throw std::invalid_argument("loss_pairwise: verb " + std::to_string(a) + " out of range");
  double loss = 0;
  for (Eigen::Index a = 0; a < s_tilde.size(); ++a)
    loss += bce_logits(s_tilde[a], positive_verbs.count(static_cast<int>(a)) ? 1.0 : 0.0);
  return loss;
}

PseudoLabels pseudo_labels(const Eigen::MatrixXd& S, const std::vector<int>& pair_classes,
                           const std::set<int>& gt_classes, const std::set<int>& gt_verbs,
                           int top_k) {
  const int m_count = static_cast<int>(S.rows());
  if (static_cast<int>(pair_classes.size()) != m_count)
    throw std::invalid_argument("pseudo_labels: one object class per pair required");
  if (top_k < 1) throw std::invalid_argument("pseudo_labels: top_k must be >= 1");

  PseudoLabels pl;
  pl.b.assign(m_count, 0);
  pl.masked.assign(m_count, 0);
  for (int m = 0; m < m_count; ++m)
    pl.masked[m] = gt_classes.count(pair_classes[m]) ? 0 : 1;

  std::vector<int> order;
  for (int a : gt_verbs) {
    if (a < 0 || a >= S.cols())
      throw std::invalid_argument("pseudo_labels: verb " + std::to_string(a) + " out of range");
    order.clear();
    for (int m = 0; m < m_count; ++m)
      if (!pl.masked[m]) order.push_back(m);
    // highest verb logit first; equal logits keep the lower pair index
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return S(x, a) > S(y, a); });
    const int take = std::min<int>(top_k, static_cast<int>(order.size()));
    for (int i = 0; i < take; ++i) pl.b[order[i]] = 1;
  }
  return pl;
}

double loss_relatedness(const Eigen::VectorXd& s_b, const std::vector<int>& b, bool warmup) {
  if (warmup) return 0.0;
  if (static_cast<int>(b.size()) != s_b.size())
    throw std::invalid_argument("loss_relatedness: label count mismatch");
  double loss = 0;
  for (Eigen::Index m = 0; m < s_b.size(); ++m) loss += bce_logits(s_b[m], b[m]);
  return loss;
}

LossBreakdown scene_loss(const SceneRecord& rec, const Image& img, const Network& net,
                         const ModelConfig& cfg, const HOIVocabulary& vocab,
                         const LossWeights& weights, bool src_active, int top_k, bool with_grad) {
  std::set<int> gt_verbs, gt_classes;
  for (int hoi : rec.image_labels) {
    const Combo& c = vocab.combo(hoi);  // validates the id
    gt_verbs.insert(c.verb_id);
    gt_classes.insert(c.object_id);
  }

  SceneForward f = forward_scene(rec, img, net, cfg);
  const int m_count = static_cast<int>(f.pairs.size());

  LossBreakdown out;
  out.pair_count = m_count;
  out.global_term = loss_global(f.s_g, rec.image_labels);

  Eigen::VectorXd s_tilde;
  PseudoLabels pl;
  if (m_count > 0) {
    s_tilde = aggregate_scores(f.S);
    out.pairwise_term = loss_pairwise(s_tilde, gt_verbs);
    if (src_active) {
      std::vector<int> pair_classes(m_count);
      for (int m = 0; m < m_count; ++m) pair_classes[m] = f.pairs[m].object_class;
      pl = pseudo_labels(f.S, pair_classes, gt_classes, gt_verbs, top_k);
      out.relatedness_term = loss_relatedness(f.s_b, pl.b, false);
    }
  }

  Eigen::VectorXd reg_diff;
  if (weights.regularize != 0.0 && m_count > 0) {
    Eigen::VectorXd v_mean = Eigen::VectorXd::Zero(net.dims.feat_dim);
    for (int m = 0; m < m_count; ++m) v_mean += f.pc[m].v_p;
    v_mean /= static_cast<double>(m_count);
    reg_diff = v_mean - f.v_g;
    out.reg_term = reg_diff.squaredNorm();
  }

  out.total = weights.global * out.global_term + weights.pairwise * out.pairwise_term +
              weights.relatedness * out.relatedness_term + weights.regularize * out.reg_term;
  if (!std::isfinite(out.total))
    throw TrainingDiverged("non-finite loss on image " + std::to_string(rec.image_id));
  if (!with_grad) return out;

  Eigen::VectorXd d_sg(f.s_g.size());
  for (Eigen::Index k = 0; k < f.s_g.size(); ++k)
    d_sg[k] = weights.global *
              bce_grad(f.s_g[k], rec.image_labels.count(static_cast<int>(k)) ? 1.0 : 0.0);

  Eigen::MatrixXd d_S = Eigen::MatrixXd::Zero(m_count, net.num_verbs);
  Eigen::VectorXd d_sb = Eigen::VectorXd::Zero(m_count);
  if (m_count > 0) {
    const std::vector<int> argmax = aggregate_argmax(f.S);
    for (int a = 0; a < net.num_verbs; ++a)
      d_S(argmax[a], a) +=
          weights.pairwise * bce_grad(s_tilde[a], gt_verbs.count(a) ? 1.0 : 0.0);
    if (src_active)
      for (int m = 0; m < m_count; ++m)
        d_sb[m] = weights.relatedness * bce_grad(f.s_b[m], static_cast<double>(pl.b[m]));
  }

  Eigen::VectorXd d_vp_shared, d_vg_extra;
  if (weights.regularize != 0.0 && m_count > 0) {
    d_vp_shared = (2.0 * weights.regularize / m_count) * reg_diff;
    d_vg_extra = -2.0 * weights.regularize * reg_diff;
  }

  backward_scene(f, img, net, cfg, d_sg, d_S, d_sb, d_vp_shared, d_vg_extra);
  return out;
}

static bool is_backbone(const std::string& name) {
  return name.rfind("encoder.", 0) == 0 || name.rfind("pool.", 0) == 0;
}

TrainResult train(const std::vector<SceneRecord>& scenes, const std::vector<Image>& images,
                  const HOIVocabulary& vocab, Network& net, ParameterStore& store,
                  const ModelConfig& cfg, const TrainConfig& tc) {
  if (tc.iterations < 0) throw std::invalid_argument("train: iterations must be >= 0");
  if (tc.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (tc.lr_backbone <= 0 || tc.lr_heads <= 0)
    throw std::invalid_argument("train: learning rates must be positive");
  if (tc.src_warmup_frac < 0 || tc.src_warmup_frac > 1)
    throw std::invalid_argument("train: src_warmup_frac must lie in [0, 1]");
  if (scenes.size() != images.size())
    throw std::invalid_argument("train: one rendered image per scene required");
  if (tc.iterations > 0 && scenes.empty())
    throw std::invalid_argument("train: empty dataset");

  const int warmup_iters =
      static_cast<int>(std::floor(tc.src_warmup_frac * static_cast<double>(tc.iterations)));
  RandomStream rs(tc.seed);
  TrainResult result;
  result.iterations = tc.iterations;
  result.rows.reserve(tc.iterations);

  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double b1t = 1.0, b2t = 1.0;

  for (int iter = 0; iter < tc.iterations; ++iter) {
    const bool src_active = cfg.use_src && iter >= warmup_iters;
    store.zero_grads();
    MetricsRow row;
    row.iteration = iter;
    for (int b = 0; b < tc.batch_size; ++b) {
      const int idx = rs.uniform_int(static_cast<int>(scenes.size()));
      LossBreakdown lb;
      try {
        lb = scene_loss(scenes[idx], images[idx], net, cfg, vocab, tc.weights, src_active,
                        tc.top_k, true);
      } catch (const TrainingDiverged& e) {
        throw TrainingDiverged("iteration " + std::to_string(iter) + ": " + e.what());
      }
      row.total += lb.total;
      row.global_term += lb.global_term;
      row.pairwise_term += lb.pairwise_term;
      row.relatedness_term += lb.relatedness_term;
    }
    const double inv_b = 1.0 / tc.batch_size;
    row.total *= inv_b;
    row.global_term *= inv_b;
    row.pairwise_term *= inv_b;
    row.relatedness_term *= inv_b;

    if (!store.grads_finite())
      throw TrainingDiverged("iteration " + std::to_string(iter) + ": non-finite gradient");

    b1t *= b1;
    b2t *= b2;
    for (const std::string& name : store.names()) {
      Tensor& t = store.at(name);
      const double lr = is_backbone(name) ? tc.lr_backbone : tc.lr_heads;
      Eigen::MatrixXd g = t.grad * inv_b;
      t.adam_m = b1 * t.adam_m + (1.0 - b1) * g;
      t.adam_v = b2 * t.adam_v + (1.0 - b2) * g.cwiseProduct(g);
      t.value.array() -= lr * (t.adam_m.array() / (1.0 - b1t)) /
                         ((t.adam_v.array() / (1.0 - b2t)).sqrt() + eps);
    }
    result.rows.push_back(row);
  }
  if (!store.values_finite()) throw TrainingDiverged("non-finite parameters after training");
  return result;
}

void write_metrics_csv(const TrainResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics: cannot open " + path + " for writing");
  out << "iteration,L,L_g,L_p,L_b\n";
  char buf[256];
  for (const MetricsRow& r : result.rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.total,
                  r.global_term, r.pairwise_term, r.relatedness_term);
    out << buf;
  }
}

GradCheckReport gradient_check(const std::vector<SceneRecord>& scenes,
                               const std::vector<Image>& images, const HOIVocabulary& vocab,
                               Network& net, ParameterStore& store, const ModelConfig& cfg,
                               const LossWeights& weights, bool src_active, int top_k, double h,
                               const std::string& corrupt) {
  if (scenes.empty() || scenes.size() != images.size())
    throw std::invalid_argument("gradient_check: need scenes with matching images");

  auto total_loss = [&](bool with_grad) {
    double sum = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i)
      sum += scene_loss(scenes[i], images[i], net, cfg, vocab, weights, src_active, top_k,
                        with_grad)
                 .total;
    return sum;
  };

  store.zero_grads();
  total_loss(true);
  if (!corrupt.empty()) store.at(corrupt).grad(0, 0) += 1e-3;

  GradCheckReport rep;
  for (const std::string& name : store.names()) {
    Tensor& t = store.at(name);
    const Eigen::MatrixXd analytic = t.grad;  // keep before value twiddling
    GradCheckEntry entry;
    entry.name = name;
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        const double orig = t.value(r, c);
        t.value(r, c) = orig + h;
        const double lp = total_loss(false);
        t.value(r, c) = orig - h;
        const double lm = total_loss(false);
        t.value(r, c) = orig;
        const double numeric = (lp - lm) / (2.0 * h);
        const double a = analytic(r, c);
        const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        ++rep.entries_checked;
        if (rel > entry.max_rel_err) {
          entry.max_rel_err = rel;
          entry.worst_analytic = a;
          entry.worst_numeric = numeric;
        }
      }
    if (entry.max_rel_err > rep.max_rel_err) {
      rep.max_rel_err = entry.max_rel_err;
      rep.worst_param = name;
    }
    rep.per_tensor.push_back(entry);
  }
  return rep;
}

void save_checkpoint(const std::string& path, const ParameterStore& store, const Network& net,
                     const ModelConfig& cfg, int num_objects, int iteration) {
  nlohmann::json j;
  j["format"] = "whoi-checkpoint";
  j["version"] = 1;
  j["iteration"] = iteration;
  j["dims"] = {{"feat_dim", net.dims.feat_dim}, {"patch", net.dims.patch},
               {"image_h", net.dims.image_h},  {"image_w", net.dims.image_w},
               {"roi_grid", net.dims.roi_grid}};
  j["model"] = {{"ktn_mode", to_string(cfg.ktn_mode)},
                {"use_ktn", cfg.use_ktn},
                {"use_src", cfg.use_src},
                {"local_detached", cfg.local_detached},
                {"gamma", cfg.gamma}};
  j["vocab"] = {{"num_verbs", net.num_verbs}, {"num_objects", num_objects}, {"num_hoi", net.num_hoi}};
  nlohmann::json params = nlohmann::json::array();
  for (const std::string& name : store.names()) {
    const Tensor& t = store.at(name);
    std::vector<double> data;
    data.reserve(t.value.size());
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) data.push_back(t.value(r, c));
    params.push_back({{"name", name},
                      {"rows", t.value.rows()},
                      {"cols", t.value.cols()},
                      {"data", std::move(data)}});
  }
  j["params"] = std::move(params);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out << j.dump() << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: bad json in " + path + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "whoi-checkpoint")
      throw std::runtime_error("not a checkpoint file");
    if (j.at("version").get<int>() != 1) throw std::runtime_error("unsupported checkpoint version");

    Checkpoint ck;
    const auto& jd = j.at("dims");
    ck.dims.feat_dim = jd.at("feat_dim").get<int>();
    ck.dims.patch = jd.at("patch").get<int>();
    ck.dims.image_h = jd.at("image_h").get<int>();
    ck.dims.image_w = jd.at("image_w").get<int>();
    ck.dims.roi_grid = jd.at("roi_grid").get<int>();
    const auto& jm = j.at("model");
    ck.cfg.ktn_mode = ktn_mode_from_string(jm.at("ktn_mode").get<std::string>());
    ck.cfg.use_ktn = jm.at("use_ktn").get<bool>();
    ck.cfg.use_src = jm.at("use_src").get<bool>();
    ck.cfg.local_detached = jm.at("local_detached").get<bool>();
    ck.cfg.gamma = jm.at("gamma").get<double>();
    const auto& jv = j.at("vocab");
    ck.num_verbs = jv.at("num_verbs").get<int>();
    ck.num_objects = jv.at("num_objects").get<int>();
    ck.num_hoi = jv.at("num_hoi").get<int>();
    ck.iteration = j.at("iteration").get<int>();

    ck.store = std::make_unique<ParameterStore>();
    ck.net = Network::create(*ck.store, ck.dims, ck.num_verbs, ck.num_hoi);

    std::set<std::string> filled;
    for (const auto& p : j.at("params")) {
      const std::string name = p.at("name").get<std::string>();
      Tensor& t = ck.store->at(name);
      const auto rows = p.at("rows").get<Eigen::Index>();
      const auto cols = p.at("cols").get<Eigen::Index>();
      if (rows != t.value.rows() || cols != t.value.cols())
        throw std::runtime_error("parameter " + name + " has shape " + std::to_string(rows) + "x" +
                                 std::to_string(cols) + ", expected " +
                                 std::to_string(t.value.rows()) + "x" +
                                 std::to_string(t.value.cols()));
      const auto& data = p.at("data");
      if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw std::runtime_error("parameter " + name + " has wrong element count");
      Eigen::Index i = 0;
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) t.value(r, c) = data[i++].get<double>();
      filled.insert(name);
    }
    for (const std::string& name : ck.store->names())
      if (!filled.count(name)) throw std::runtime_error("checkpoint missing parameter " + name);
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: missing or mistyped field: " + std::string(e.what()));
  }
}

}  // namespace whoi
