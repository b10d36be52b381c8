#pragma once

// The bi-level scorer. A knowledge bank of prompt embeddings serves two
// branches: globally it classifies the pooled image feature, locally it is
// queried by each human-object pair's union feature to build a meta feature
// that conditions the pair representation. Pair logits are aggregated per
// class, renormalized across pairs, and fused with the global score, the
// relatedness head and the detector priors into one ranked detection list.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "whoi/data.hpp"
#include "whoi/encoder.hpp"
#include "whoi/nn.hpp"
#include "whoi/params.hpp"
#include "whoi/vocab.hpp"

namespace whoi {

struct ModelDims {
  int feat_dim = 32;
  int patch = 8;
  int image_h = 64;
  int image_w = 64;
  int roi_grid = 3;
};

enum class KtnMode { softmax, uniform, sigmoid, union_only };

KtnMode ktn_mode_from_string(const std::string& s);
std::string to_string(KtnMode m);

struct ModelConfig {
  KtnMode ktn_mode = KtnMode::softmax;
  bool use_ktn = true;          // off: pair heads read the raw pair feature
  bool use_src = true;          // off: relatedness head neither trained nor fused
  bool local_detached = true;   // pair-branch gradients stop at the bank
  double gamma = 2.8;           // detector prior exponent
};

// Pointers into a ParameterStore; create() registers every tensor in a fixed
// order (init draws and checkpoints depend on that order staying put).
struct Network {
  ModelDims dims;
  int num_verbs = 0;
  int num_hoi = 0;
  VisualEncoder enc;
  AttentionPool pool;
  Mlp f_sp;      // spatial embed, 36 -> D
  Mlp f_e;       // pair encoder, 3D -> D
  Mlp f_k;       // post-KTN projection, D -> D
  Linear f_u;    // union shortcut for the union_only mode
  Linear f_p;    // verb logits, D -> A
  Linear f_b;    // relatedness logit, D -> 1
  Tensor* bank = nullptr;  // N x D

  static Network create(ParameterStore& store, const ModelDims& dims, int num_verbs, int num_hoi);
};

// Seeded Gaussian init, scaled by fan-in; biases zero; bank left for
// init_bank. Draws follow store registration order.
void init_params(ParameterStore& store, std::uint64_t seed);

// Bank rows = text embeddings of each combo's prompt, in hoi order.
void init_bank(Network& net, const HOIVocabulary& vocab, const TextEncoder& text);

// --- scoring ops -----------------------------------------------------------

// s_g = bank * v_g, one logit per interaction class.
Eigen::VectorXd global_hoi_scores(const Eigen::VectorXd& v_g, const Eigen::MatrixXd& bank);

struct KtnResult {
  Eigen::VectorXd alpha;   // bank attention; empty in union_only mode
  Eigen::VectorXd v_meta;  // bank readout (or union shortcut)
  Eigen::VectorXd vhat;    // conditioned pair feature
};
struct KtnCache {
  KtnMode mode = KtnMode::softmax;
  bool used = true;
  Eigen::VectorXd v_u, logits, alpha, v_meta, fu_in;
  MlpCache fk;
};

// vhat = F_K(v_p + readout). softmax: readout = bank^T softmax(bank v_u);
// uniform: row mean, ignores v_u; sigmoid: unnormalized gate; union_only:
// readout = F_U(v_u), bank untouched.
KtnResult ktn(const Eigen::VectorXd& v_p, const Eigen::VectorXd& v_u, const Network& net,
              const ModelConfig& cfg, KtnCache* cache = nullptr);
// Returns d_vp and adds d_vu into d_vu_accum. Bank gradients are skipped when
// cfg.local_detached is set.
Eigen::VectorXd ktn_backward(const KtnCache& cache, const Network& net, const ModelConfig& cfg,
                             const Eigen::VectorXd& d_vhat, Eigen::VectorXd& d_vu_accum);

// Column-wise max over pairs -> per-class image logits. Throws on zero rows.
Eigen::VectorXd aggregate_scores(const Eigen::MatrixXd& S);
// Row index of each column's max, first row on ties (the subgradient route).
std::vector<int> aggregate_argmax(const Eigen::MatrixXd& S);

// Softmax over pairs within each class column (raw logits in, S_bar out).
Eigen::MatrixXd normalize_pairs(const Eigen::MatrixXd& S);
// e_p rows: sigmoid(column max) * S_bar; with one pair this is sigmoid(s_p).
Eigen::MatrixXd pair_class_probs(const Eigen::MatrixXd& S);

// Final per-pair-per-verb score. nullopt when (verb, object_class) is not in
// the vocabulary: such pairs are skipped, not an error. Returns the fused
// interaction score and the ranking score R = (s_h * s_o)^gamma * fused.
std::optional<std::pair<double, double>> fuse_scores(const Eigen::VectorXd& s_g,
                                                     const Eigen::VectorXd& e_p_row, double s_b,
                                                     int verb, int object_class, double s_h,
                                                     double s_o, double gamma,
                                                     const HOIVocabulary& vocab,
                                                     bool use_relatedness);

// --- scene forward/backward ------------------------------------------------

struct PairItem {
  int human_prop = 0;
  int object_prop = 0;
  Box hbox, obox, ubox;
  int object_class = -1;
  double score_h = 0, score_o = 0;
};

// Every (human proposal, object proposal) pair in proposal order, minus
// identical-box self pairs. Pair index = position in this list.
std::vector<PairItem> enumerate_pairs(const SceneRecord& rec);

struct PairCache {
  RoiPlan plan_h, plan_o, plan_u;
  PoolCache pool_h, pool_o, pool_u;
  Eigen::VectorXd p;  // spatial features
  MlpCache sp_cache, fe_cache;
  Eigen::VectorXd v_h, v_o, v_u, v_sp, v_p, vhat;
  KtnCache ktn;
};

struct SceneForward {
  FeatureMap gamma;
  PoolCache pool_g;
  Eigen::VectorXd v_g, s_g;
  std::vector<PairItem> pairs;
  std::vector<PairCache> pc;
  Eigen::MatrixXd S;    // M x A verb logits
  Eigen::VectorXd s_b;  // M relatedness logits
};

SceneForward forward_scene(const SceneRecord& rec, const Image& img, const Network& net,
                           const ModelConfig& cfg);

// Upstream gradients: d_sg (N), d_S (M x A), d_sb (M), plus the optional
// regularizer pulls d_vp_shared (added to every pair's v_p gradient) and
// d_vg_extra. Accumulates into every reachable tensor's grad.
void backward_scene(const SceneForward& f, const Image& img, const Network& net,
                    const ModelConfig& cfg, const Eigen::VectorXd& d_sg, const Eigen::MatrixXd& d_S,
                    const Eigen::VectorXd& d_sb, const Eigen::VectorXd& d_vp_shared,
                    const Eigen::VectorXd& d_vg_extra);

// --- detection -------------------------------------------------------------

struct Detection {
  int image_id = 0;
  Box human_box, object_box;
  int object_class = 0;
  int verb = 0;
  double score_r = 0;
  // fused-score factors, kept for reports and debugging
  double comp_global = 0, comp_pair = 0, comp_related = 0, comp_det = 0;
};

// Full pipeline on one scene; detections sorted by R descending, ties by pair
// index then verb. Scenes without a usable pair yield an empty list.
std::vector<Detection> detect(const SceneRecord& rec, const Image& img, const Network& net,
                              const ModelConfig& cfg, const HOIVocabulary& vocab);

// Zero-shot scoring: cosine(v_u, bank row), affinely mapped to [0, 1], times
// the detector prior. No trained heads beyond the encoder and bank.
std::vector<Detection> detect_bank_similarity(const SceneRecord& rec, const Image& img,
                                              const Network& net, double gamma,
                                              const HOIVocabulary& vocab);

void save_detections(const std::vector<Detection>& dets, const std::string& path);
std::vector<Detection> load_detections(const std::string& path);

}  // namespace whoi
