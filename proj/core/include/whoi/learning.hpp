#pragma once

// Weak supervision: the three loss terms, the pseudo relatedness labels, a
// hand-wired backward pass through the whole scorer, a finite-difference
// gradient audit, and the Adam training loop. Only image-level interaction
// labels ever enter; no box is supervised directly.

#include <cstdint>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "whoi/data.hpp"
#include "whoi/model.hpp"

namespace whoi {

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerically safe binary cross-entropy on a logit, and its d/d(logit).
double bce_logits(double logit, double label);
double bce_grad(double logit, double label);

// Sum of per-class BCE between the global logits and the multi-hot labels.
double loss_global(const Eigen::VectorXd& s_g, const std::set<int>& positive_hois);

// Sum of per-verb BCE on the max-aggregated pair logits. The subgradient
// flows through the argmax pair only (first row on ties).
double loss_pairwise(const Eigen::VectorXd& s_tilde, const std::set<int>& positive_verbs);

struct PseudoLabels {
  std::vector<int> b;               // per pair, 0/1
  std::vector<std::uint8_t> masked; // 1 where the pair's object class is not in the image
};

// Pairs whose object class does not appear among the image's interactions are
// masked negatives. For every labelled verb, the top_k unmasked pairs by verb
// logit become positives (ties to the lower pair index; fewer than top_k
// unmasked pairs means all of them). Selection depends only on the ordering
// of S entries, never their scale.
PseudoLabels pseudo_labels(const Eigen::MatrixXd& S, const std::vector<int>& pair_classes,
                           const std::set<int>& gt_classes, const std::set<int>& gt_verbs,
                           int top_k);

// Sum of BCE(s_b[m], b[m]); exactly zero while warm-up is active.
double loss_relatedness(const Eigen::VectorXd& s_b, const std::vector<int>& b, bool warmup);

struct LossWeights {
  double global = 1.0;
  double pairwise = 1.0;
  double relatedness = 1.0;
  double regularize = 0.0;  // pulls the mean pair feature toward the image feature
};

struct LossBreakdown {
  double total = 0;            // weighted sum
  double global_term = 0;      // unweighted terms
  double pairwise_term = 0;
  double relatedness_term = 0;
  double reg_term = 0;
  int pair_count = 0;
};

// Forward (and optionally backward) for one scene. Scenes with no usable
// pair contribute the global term only. src_active=false freezes the
// relatedness term to zero, gradient included. Throws TrainingDiverged when
// the loss goes non-finite.
LossBreakdown scene_loss(const SceneRecord& rec, const Image& img, const Network& net,
                         const ModelConfig& cfg, const HOIVocabulary& vocab,
                         const LossWeights& weights, bool src_active, int top_k, bool with_grad);

struct TrainConfig {
  double lr_backbone = 1e-3;
  double lr_heads = 3e-3;
  int iterations = 2000;
  int batch_size = 4;
  double src_warmup_frac = 0.4;  // leading fraction of iterations with L_b off
  int top_k = 1;
  LossWeights weights;
  std::uint64_t seed = 1;
};

struct MetricsRow {
  int iteration = 0;
  double total = 0, global_term = 0, pairwise_term = 0, relatedness_term = 0;
};

struct TrainResult {
  std::vector<MetricsRow> rows;  // one per iteration
  int iterations = 0;
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8); "encoder." and "pool." tensors use
// the backbone rate, everything else the heads rate. Batches are drawn with
// replacement from `scenes` using the config seed; batch loss is the mean of
// scene losses. Deterministic for a fixed seed and dataset.
TrainResult train(const std::vector<SceneRecord>& scenes, const std::vector<Image>& images,
                  const HOIVocabulary& vocab, Network& net, ParameterStore& store,
                  const ModelConfig& cfg, const TrainConfig& tc);

void write_metrics_csv(const TrainResult& result, const std::string& path);

// --- finite-difference audit ------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0;
  double worst_analytic = 0, worst_numeric = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_tensor;
  double max_rel_err = 0;
  std::string worst_param;
  std::int64_t entries_checked = 0;
};

// Central differences with step h over every parameter entry, against the
// analytic gradient of the summed scene losses. rel err uses
// |a - n| / max(1e-8, |a| + |n|). `corrupt` (test hook) perturbs that
// tensor's analytic gradient so the audit provably fails on bad gradients.
GradCheckReport gradient_check(const std::vector<SceneRecord>& scenes,
                               const std::vector<Image>& images, const HOIVocabulary& vocab,
                               Network& net, ParameterStore& store, const ModelConfig& cfg,
                               const LossWeights& weights, bool src_active, int top_k,
                               double h = 1e-5, const std::string& corrupt = "");

// --- checkpoints -------------------------------------------------------------

struct Checkpoint {
  ModelDims dims;
  ModelConfig cfg;
  int num_verbs = 0, num_objects = 0, num_hoi = 0;
  int iteration = 0;
  std::unique_ptr<ParameterStore> store;
  Network net;
};

void save_checkpoint(const std::string& path, const ParameterStore& store, const Network& net,
                     const ModelConfig& cfg, int num_objects, int iteration);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace whoi
