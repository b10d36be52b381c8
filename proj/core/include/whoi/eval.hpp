#pragma once

// Detection scoring against ground-truth instances. Matching is the usual
// greedy protocol: detections ranked by score, a hit needs both the human and
// the object box to clear the IoU threshold against one unmatched instance of
// the same interaction class. AP uses all-point interpolation (the precision
// envelope integrated over recall).

#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "whoi/data.hpp"
#include "whoi/model.hpp"
#include "whoi/vocab.hpp"

namespace whoi {

// "correct" scores every detection. "flawed" first drops, per image, any
// detection whose interaction class has no ground truth in that image, which
// silently deletes false positives and can only inflate the numbers. It
// exists so the inflation is measurable, not because it should be used.
enum class EvalProtocol { correct, flawed };

EvalProtocol eval_protocol_from_string(const std::string& s);
std::string to_string(EvalProtocol p);

struct PrPoint {
  double recall = 0;
  double precision = 0;
  double score = 0;  // detection score at this rank
  bool tp = false;
};

struct ClassAp {
  int hoi_id = 0;
  double ap = 0;
  int gt_count = 0;
  std::vector<PrPoint> curve;  // one entry per ranked detection of this class
};

struct EvalResult {
  EvalProtocol protocol = EvalProtocol::correct;
  double iou_threshold = 0.5;
  // classes with at least one ground-truth instance, ascending hoi_id
  std::vector<ClassAp> per_class;
  double map_full = 0, map_rare = 0, map_nonrare = 0;
  int classes_full = 0, classes_rare = 0, classes_nonrare = 0;
};

// Score detections against the scenes' ground truth. The rare set partitions
// evaluated classes for the rare / non-rare means; ids outside it count as
// non-rare. Classes with zero ground truth are dropped from every average.
// Throws if a detection names a (verb, object) pair outside the vocabulary.
EvalResult evaluate(const std::vector<Detection>& dets, const std::vector<SceneRecord>& scenes,
                    const HOIVocabulary& vocab, EvalProtocol protocol, const std::set<int>& rare,
                    double iou_threshold = 0.5);

// AP of one ranked tp/fp sequence, all-point interpolation. Exposed for tests.
double average_precision(const std::vector<bool>& tp_flags, int gt_count);

std::string report_json(const EvalResult& r);
void save_report(const EvalResult& r, const std::string& path);

// per-class table plus the three means, aligned for terminal reading
void print_report(std::ostream& out, const EvalResult& r, const HOIVocabulary& vocab);

// one row per ranked detection: hoi_id,rank,score,tp,recall,precision
void write_pr_csv(const EvalResult& r, const std::string& path);

}  // namespace whoi
