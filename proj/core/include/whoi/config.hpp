#pragma once

// One JSON file describes a run end to end: file locations, model shape,
// training schedule, data generation and scoring options. Commands read it,
// apply their flag overrides, and nothing else configures them, so a run can
// be replayed from the config alone.

#include <string>

#include "whoi/data.hpp"
#include "whoi/eval.hpp"
#include "whoi/learning.hpp"
#include "whoi/model.hpp"

namespace whoi {

enum class InferMode { full, bank_similarity_baseline };

InferMode infer_mode_from_string(const std::string& s);  // accepts the dashed spelling too
std::string to_string(InferMode m);

struct PathsConfig {
  std::string vocab;
  std::string dataset;
  std::string checkpoint;
  std::string out_dir = ".";
};

struct EvalConfig {
  EvalProtocol protocol = EvalProtocol::correct;
  double iou_threshold = 0.5;
  std::string train_data;  // rare/non-rare counts come from here when set
};

struct InferConfig {
  InferMode mode = InferMode::full;
};

struct RunConfig {
  PathsConfig paths;
  ModelDims dims;
  ModelConfig model;
  TrainConfig train;
  GenSpec gen;
  EvalConfig eval;
  InferConfig infer;
};

// Strict parse: unknown keys anywhere are an error, so typos cannot silently
// fall back to defaults. Missing keys keep their defaults.
RunConfig config_from_json_string(const std::string& text);
std::string config_to_json_string(const RunConfig& cfg);

RunConfig load_config(const std::string& path);
void save_config(const RunConfig& cfg, const std::string& path);

}  // namespace whoi
