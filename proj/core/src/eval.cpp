#include "whoi/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace whoi {

EvalProtocol eval_protocol_from_string(const std::string& s) {
  if (s == "correct") return EvalProtocol::correct;
  if (s == "flawed") return EvalProtocol::flawed;
  throw std::invalid_argument("unknown eval protocol \"" + s + "\"");
}

std::string to_string(EvalProtocol p) {
  return p == EvalProtocol::correct ? "correct" : "flawed";
}

double average_precision(const std::vector<bool>& tp_flags, int gt_count) {
  if (gt_count <= 0) throw std::invalid_argument("average_precision: gt_count must be positive");
  const std::size_t n = tp_flags.size();
  if (n == 0) return 0.0;

  std::vector<double> recall(n), precision(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp_flags[i]) ++tp;
    recall[i] = static_cast<double>(tp) / gt_count;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }

  // precision envelope: best precision achievable at this recall or beyond
  for (std::size_t i = n - 1; i > 0; --i)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

namespace {

struct GtRef {
  const GtInstance* gt;
  bool matched = false;
};

struct RankedDet {
  const Detection* det;
  std::size_t file_index;  // position in the input list, the final tie break
  int hoi_id;
};

}  // namespace

EvalResult evaluate(const std::vector<Detection>& dets, const std::vector<SceneRecord>& scenes,
                    const HOIVocabulary& vocab, EvalProtocol protocol, const std::set<int>& rare,
                    double iou_threshold) {
  if (iou_threshold <= 0 || iou_threshold > 1)
    throw std::invalid_argument("evaluate: iou threshold must lie in (0, 1]");

  // ground truth per (image, class); gt_count per class
  std::map<int, std::map<int, std::vector<GtRef>>> gt_by_image;  // image -> hoi -> refs
  std::map<int, std::set<int>> classes_in_image;
  std::vector<int> gt_count(vocab.num_hoi(), 0);
  std::set<int> known_images;
  for (const SceneRecord& rec : scenes) {
    known_images.insert(rec.image_id);
    for (const GtInstance& gt : rec.gt_instances) {
      const auto idx = vocab.hoi_index(gt.verb, gt.object_class);
      if (!idx)
        throw std::invalid_argument("evaluate: ground truth (verb " + std::to_string(gt.verb) +
                                    ", object " + std::to_string(gt.object_class) +
                                    ") is not in the vocabulary");
      gt_by_image[rec.image_id][*idx].push_back({&gt, false});
      classes_in_image[rec.image_id].insert(*idx);
      ++gt_count[*idx];
    }
  }

  // bucket detections by class, applying the protocol filter
  std::map<int, std::vector<RankedDet>> by_class;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Detection& d = dets[i];
    if (!known_images.count(d.image_id))
      throw std::invalid_argument("evaluate: detection " + std::to_string(i) +
                                  " references unknown image " + std::to_string(d.image_id));
    const auto idx = vocab.hoi_index(d.verb, d.object_class);
    if (!idx)
      throw std::invalid_argument("evaluate: detection " + std::to_string(i) + " (verb " +
                                  std::to_string(d.verb) + ", object " +
                                  std::to_string(d.object_class) + ") is not in the vocabulary");
    if (protocol == EvalProtocol::flawed) {
      const auto it = classes_in_image.find(d.image_id);
      if (it == classes_in_image.end() || !it->second.count(*idx)) continue;
    }
    by_class[*idx].push_back({&d, i, *idx});
  }

  EvalResult out;
  out.protocol = protocol;
  out.iou_threshold = iou_threshold;

  double sum_full = 0, sum_rare = 0, sum_nonrare = 0;
  for (int hoi = 0; hoi < vocab.num_hoi(); ++hoi) {
    if (gt_count[hoi] == 0) continue;  // nothing to recall, class drops out

    ClassAp ca;
    ca.hoi_id = hoi;
    ca.gt_count = gt_count[hoi];

    auto it = by_class.find(hoi);
    std::vector<RankedDet> ranked = it == by_class.end() ? std::vector<RankedDet>{} : it->second;
    std::sort(ranked.begin(), ranked.end(), [](const RankedDet& a, const RankedDet& b) {
      if (a.det->score_r != b.det->score_r) return a.det->score_r > b.det->score_r;
      if (a.det->image_id != b.det->image_id) return a.det->image_id < b.det->image_id;
      return a.file_index < b.file_index;
    });

    std::vector<bool> tp_flags;
    tp_flags.reserve(ranked.size());
    int tp_running = 0;
    for (const RankedDet& rd : ranked) {
      auto& candidates = gt_by_image[rd.det->image_id][hoi];
      // best unmatched instance by the weaker of the two overlaps
      double best = -1;
      GtRef* best_ref = nullptr;
      for (GtRef& ref : candidates) {
        if (ref.matched) continue;
        const double q =
            std::min(iou(rd.det->human_box, ref.gt->human_box), iou(rd.det->object_box, ref.gt->object_box));
        if (q > best) {
          best = q;
          best_ref = &ref;
        }
      }
      const bool hit = best_ref != nullptr && best >= iou_threshold;
      if (hit) {
        best_ref->matched = true;
        ++tp_running;
      }
      tp_flags.push_back(hit);
      PrPoint pt;
      pt.score = rd.det->score_r;
      pt.tp = hit;
      pt.recall = static_cast<double>(tp_running) / ca.gt_count;
      pt.precision = static_cast<double>(tp_running) / static_cast<double>(tp_flags.size());
      ca.curve.push_back(pt);
    }

    ca.ap = average_precision(tp_flags, ca.gt_count);
    sum_full += ca.ap;
    ++out.classes_full;
    if (rare.count(hoi)) {
      sum_rare += ca.ap;
      ++out.classes_rare;
    } else {
      sum_nonrare += ca.ap;
      ++out.classes_nonrare;
    }
    out.per_class.push_back(std::move(ca));
  }

  out.map_full = out.classes_full ? sum_full / out.classes_full : 0.0;
  out.map_rare = out.classes_rare ? sum_rare / out.classes_rare : 0.0;
  out.map_nonrare = out.classes_nonrare ? sum_nonrare / out.classes_nonrare : 0.0;
  return out;
}

std::string report_json(const EvalResult& r) {
  nlohmann::json j;
  j["protocol"] = to_string(r.protocol);
  j["iou_threshold"] = r.iou_threshold;
  nlohmann::json per = nlohmann::json::array();
  for (const ClassAp& ca : r.per_class)
    per.push_back({{"hoi_id", ca.hoi_id}, {"ap", ca.ap}, {"gt_count", ca.gt_count}});
  j["per_class"] = std::move(per);
  j["mAP_full"] = r.map_full;
  j["mAP_rare"] = r.map_rare;
  j["mAP_nonrare"] = r.map_nonrare;
  j["classes_full"] = r.classes_full;
  j["classes_rare"] = r.classes_rare;
  j["classes_nonrare"] = r.classes_nonrare;
  return j.dump(2) + "\n";
}

void save_report(const EvalResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("report: cannot open " + path + " for writing");
  out << report_json(r);
}

void print_report(std::ostream& out, const EvalResult& r, const HOIVocabulary& vocab) {
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %-24s %8s %6s\n", "hoi", "interaction", "AP", "#gt");
  out << "protocol: " << to_string(r.protocol) << "  (IoU >= " << r.iou_threshold << ")\n" << line;
  for (const ClassAp& ca : r.per_class) {
    const Combo& combo = vocab.combo(ca.hoi_id);
    const std::string label = vocab.verb(combo.verb_id).name + " " + vocab.object(combo.object_id).name;
    std::snprintf(line, sizeof line, "%-6d %-24s %8.4f %6d\n", ca.hoi_id, label.c_str(), ca.ap,
                  ca.gt_count);
    out << line;
  }
  std::snprintf(line, sizeof line,
                "mAP full %.4f (%d classes)  rare %.4f (%d)  non-rare %.4f (%d)\n", r.map_full,
                r.classes_full, r.map_rare, r.classes_rare, r.map_nonrare, r.classes_nonrare);
  out << line;
}

void write_pr_csv(const EvalResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("pr csv: cannot open " + path + " for writing");
  out << "hoi_id,rank,score,tp,recall,precision\n";
  char line[160];
  for (const ClassAp& ca : r.per_class)
    for (std::size_t i = 0; i < ca.curve.size(); ++i) {
      const PrPoint& p = ca.curve[i];
      std::snprintf(line, sizeof line, "%d,%zu,%.17g,%d,%.17g,%.17g\n", ca.hoi_id, i + 1, p.score,
                    p.tp ? 1 : 0, p.recall, p.precision);
      out << line;
    }
}

}  // namespace whoi
