#include "whoi/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace whoi {

InferMode infer_mode_from_string(const std::string& s) {
  if (s == "full") return InferMode::full;
  if (s == "bank_similarity_baseline" || s == "bank-similarity")
    return InferMode::bank_similarity_baseline;
  throw std::invalid_argument("unknown inference mode \"" + s + "\"");
}

std::string to_string(InferMode m) {
  return m == InferMode::full ? "full" : "bank_similarity_baseline";
}

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const char* section, std::initializer_list<const char*> keys) {
  const std::set<std::string> known(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + section);
}

template <typename T>
void get_if(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace

RunConfig config_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  reject_unknown(j, "config", {"paths", "model", "train", "gen", "eval", "infer"});

  RunConfig cfg;
  if (j.contains("paths")) {
    const json& p = j["paths"];
    reject_unknown(p, "paths", {"vocab", "dataset", "checkpoint", "out_dir"});
    get_if(p, "vocab", cfg.paths.vocab);
    get_if(p, "dataset", cfg.paths.dataset);
    get_if(p, "checkpoint", cfg.paths.checkpoint);
    get_if(p, "out_dir", cfg.paths.out_dir);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m, "model",
                   {"feat_dim", "patch", "image_h", "image_w", "roi_grid", "ktn_mode", "use_ktn",
                    "use_src", "local_detached", "gamma"});
    get_if(m, "feat_dim", cfg.dims.feat_dim);
    get_if(m, "patch", cfg.dims.patch);
    get_if(m, "image_h", cfg.dims.image_h);
    get_if(m, "image_w", cfg.dims.image_w);
    get_if(m, "roi_grid", cfg.dims.roi_grid);
    if (m.contains("ktn_mode")) cfg.model.ktn_mode = ktn_mode_from_string(m.at("ktn_mode"));
    get_if(m, "use_ktn", cfg.model.use_ktn);
    get_if(m, "use_src", cfg.model.use_src);
    get_if(m, "local_detached", cfg.model.local_detached);
    get_if(m, "gamma", cfg.model.gamma);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t, "train",
                   {"lr_backbone", "lr_heads", "iterations", "batch_size", "src_warmup_frac",
                    "top_k", "seed", "weights"});
    get_if(t, "lr_backbone", cfg.train.lr_backbone);
    get_if(t, "lr_heads", cfg.train.lr_heads);
    get_if(t, "iterations", cfg.train.iterations);
    get_if(t, "batch_size", cfg.train.batch_size);
    get_if(t, "src_warmup_frac", cfg.train.src_warmup_frac);
    get_if(t, "top_k", cfg.train.top_k);
    get_if(t, "seed", cfg.train.seed);
    if (t.contains("weights")) {
      const json& w = t["weights"];
      reject_unknown(w, "train.weights", {"global", "pairwise", "relatedness", "regularize"});
      get_if(w, "global", cfg.train.weights.global);
      get_if(w, "pairwise", cfg.train.weights.pairwise);
      get_if(w, "relatedness", cfg.train.weights.relatedness);
      get_if(w, "regularize", cfg.train.weights.regularize);
    }
  }
  if (j.contains("gen")) {
    const json& g = j["gen"];
    reject_unknown(g, "gen",
                   {"seed", "image_count", "image_size", "patch", "num_verbs", "num_objects",
                    "num_hoi", "min_instances", "max_instances", "jitter", "distractors", "skew"});
    get_if(g, "seed", cfg.gen.seed);
    get_if(g, "image_count", cfg.gen.image_count);
    get_if(g, "image_size", cfg.gen.image_size);
    get_if(g, "patch", cfg.gen.patch);
    get_if(g, "num_verbs", cfg.gen.num_verbs);
    get_if(g, "num_objects", cfg.gen.num_objects);
    get_if(g, "num_hoi", cfg.gen.num_hoi);
    get_if(g, "min_instances", cfg.gen.min_instances);
    get_if(g, "max_instances", cfg.gen.max_instances);
    get_if(g, "jitter", cfg.gen.jitter);
    get_if(g, "distractors", cfg.gen.distractors);
    get_if(g, "skew", cfg.gen.skew);
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    reject_unknown(e, "eval", {"protocol", "iou_threshold", "train_data"});
    if (e.contains("protocol")) cfg.eval.protocol = eval_protocol_from_string(e.at("protocol"));
    get_if(e, "iou_threshold", cfg.eval.iou_threshold);
    get_if(e, "train_data", cfg.eval.train_data);
  }
  if (j.contains("infer")) {
    const json& f = j["infer"];
    reject_unknown(f, "infer", {"mode"});
    if (f.contains("mode")) cfg.infer.mode = infer_mode_from_string(f.at("mode"));
  }
  return cfg;
}

std::string config_to_json_string(const RunConfig& cfg) {
  json j;
  j["paths"] = {{"vocab", cfg.paths.vocab},
                {"dataset", cfg.paths.dataset},
                {"checkpoint", cfg.paths.checkpoint},
                {"out_dir", cfg.paths.out_dir}};
  j["model"] = {{"feat_dim", cfg.dims.feat_dim},
                {"patch", cfg.dims.patch},
                {"image_h", cfg.dims.image_h},
                {"image_w", cfg.dims.image_w},
                {"roi_grid", cfg.dims.roi_grid},
                {"ktn_mode", to_string(cfg.model.ktn_mode)},
                {"use_ktn", cfg.model.use_ktn},
                {"use_src", cfg.model.use_src},
                {"local_detached", cfg.model.local_detached},
                {"gamma", cfg.model.gamma}};
  j["train"] = {{"lr_backbone", cfg.train.lr_backbone},
                {"lr_heads", cfg.train.lr_heads},
                {"iterations", cfg.train.iterations},
                {"batch_size", cfg.train.batch_size},
                {"src_warmup_frac", cfg.train.src_warmup_frac},
                {"top_k", cfg.train.top_k},
                {"seed", cfg.train.seed},
                {"weights",
                 {{"global", cfg.train.weights.global},
                  {"pairwise", cfg.train.weights.pairwise},
                  {"relatedness", cfg.train.weights.relatedness},
                  {"regularize", cfg.train.weights.regularize}}}};
  j["gen"] = {{"seed", cfg.gen.seed},
              {"image_count", cfg.gen.image_count},
              {"image_size", cfg.gen.image_size},
              {"patch", cfg.gen.patch},
              {"num_verbs", cfg.gen.num_verbs},
              {"num_objects", cfg.gen.num_objects},
              {"num_hoi", cfg.gen.num_hoi},
              {"min_instances", cfg.gen.min_instances},
              {"max_instances", cfg.gen.max_instances},
              {"jitter", cfg.gen.jitter},
              {"distractors", cfg.gen.distractors},
              {"skew", cfg.gen.skew}};
  j["eval"] = {{"protocol", to_string(cfg.eval.protocol)},
               {"iou_threshold", cfg.eval.iou_threshold},
               {"train_data", cfg.eval.train_data}};
  j["infer"] = {{"mode", to_string(cfg.infer.mode)}};
  return j.dump(2) + "\n";
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json_string(text);
}

void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot open " + path + " for writing");
  out << config_to_json_string(cfg);
}

}  // namespace whoi
