#pragma once

// Synthetic scenes: record types, the pixel-level generator, JSON-lines
// persistence, and the rare/non-rare class split.
//
// A scene is reproducible from its record alone: boxes, classes and verbs are
// stored explicitly and the pixels are re-rendered on demand from the
// per-image seed (mode "seed") or read from a raw float32 RGB file
// (mode "path").

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "whoi/geometry.hpp"
#include "whoi/image.hpp"
#include "whoi/vocab.hpp"

namespace whoi {

struct Proposal {
  enum class Kind { human, object };
  Box box;
  Kind kind = Kind::object;
  int object_class = -1;  // -1 for humans
  double score = 0.0;     // detector confidence in [0, 1]
};

struct GtInstance {
  Box human_box;
  Box object_box;
  int object_class = 0;
  int verb = 0;
};

struct PixelSource {
  enum class Mode { seed, path };
  Mode mode = Mode::seed;
  std::string value;  // decimal seed, or file path
};

struct SceneRecord {
  int image_id = 0;
  int width = 0;
  int height = 0;
  PixelSource pixels;
  std::vector<Proposal> proposals;
  std::set<int> image_labels;        // hoi ids present; the only training signal
  std::vector<GtInstance> gt_instances;  // evaluation only
};

struct GenSpec {
  std::uint64_t seed = 1;
  int image_count = 100;
  int image_size = 64;      // square images, must divide evenly into patches
  int patch = 8;            // encoder patch size the images are meant for
  int num_verbs = 6;
  int num_objects = 5;
  int num_hoi = 12;
  int min_instances = 3;
  int max_instances = 4;
  double jitter = 0.08;     // proposal perturbation, fraction of box size
  int distractors = 4;      // junk proposals per image
  double skew = 1.0;        // class frequency ~ (hoi_id + 1)^(-skew)
};

// Deterministic toy vocabulary for the requested sizes; combos are spread so
// every object class gets at least one verb. Requires num_hoi <= A * C.
HOIVocabulary make_toy_vocabulary(int num_verbs, int num_objects, int num_hoi);

// Renders humans as fixed-color rectangles, objects hue-coded by class, and a
// striped corridor between the two boxes whose angle encodes the verb. Every
// appearance cue needed to recognise an interaction is therefore in the
// pixels. Throws std::invalid_argument on malformed specs and
// std::runtime_error if placement keeps failing.
std::vector<SceneRecord> generate(const GenSpec& spec);

// Rebuild pixels for a record (any mode). Pure function of the record.
Image render_scene(const SceneRecord& rec, int num_verbs, int num_objects);

void save_dataset(const std::vector<SceneRecord>& scenes, const std::string& path);
// Throws std::runtime_error naming the 1-based line on malformed input.
std::vector<SceneRecord> load_dataset(const std::string& path);

// (rare, non-rare) hoi id sets: a class is rare when its GT instance count in
// `scenes` is below the vocabulary's rare threshold. Datasets stripped of GT
// instances fall back to counting image-label occurrences.
std::pair<std::set<int>, std::set<int>> rare_split(const std::vector<SceneRecord>& scenes,
                                                   const HOIVocabulary& vocab);

}  // namespace whoi
