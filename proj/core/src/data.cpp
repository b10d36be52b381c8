#include "whoi/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "whoi/rng.hpp"

namespace whoi {

namespace {

const char* kVerbNames[10] = {"hold", "ride",  "carry", "push", "cut",
                              "throw", "lift", "kick",  "wear", "open"};
const char* kVerbGerunds[10] = {"holding", "riding",  "carrying", "pushing", "cutting",
                                "throwing", "lifting", "kicking",  "wearing", "opening"};
const char* kObjectNames[10] = {"apple", "bicycle", "car",   "umbrella", "dog",
                                "chair", "ball",    "knife", "elephant", "oven"};

constexpr double kTwoPi = 6.283185307179586;
constexpr double kPi = 3.14159265358979323846;
constexpr double kStripePeriod = 4.0;
constexpr double kCorridorRadius = 4.5;

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(h);
  const double f = h - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

std::uint64_t scene_render_seed(std::uint64_t base_seed, int image_id) {
  return mix64(base_seed + 1000003ull * static_cast<std::uint64_t>(image_id + 1));
}

// Boxes are filled with their base color, brightness-modulated by the
// instance's stripe field. Hue stays class-readable while the stripe angle
// (the verb) and phase are visible inside the box itself, so pair features
// can check that both boxes belong to the same interaction.
void fill_rect(Image& img, const Box& b, const double rgb[3], double theta, double phase) {
  const int x1 = std::max(0, static_cast<int>(std::floor(b.x1)));
  const int y1 = std::max(0, static_cast<int>(std::floor(b.y1)));
  const int x2 = std::min(img.w, static_cast<int>(std::ceil(b.x2)));
  const int y2 = std::min(img.h, static_cast<int>(std::ceil(b.y2)));
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int y = y1; y < y2; ++y)
    for (int x = x1; x < x2; ++x) {
      const double wave =
          0.5 + 0.5 * std::cos(kTwoPi * ((x + 0.5) * ct + (y + 0.5) * st) / kStripePeriod + phase);
      const double gain = 0.45 + 0.55 * wave;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c] * gain;
    }
}

Box jitter_box(const Box& b, double j, double img_w, double img_h, RandomStream& rs) {
  const double dx = rs.uniform(-j, j) * b.width();
  const double dy = rs.uniform(-j, j) * b.height();
  const double sx = 1.0 + rs.uniform(-j, j);
  const double sy = 1.0 + rs.uniform(-j, j);
  const double w = b.width() * sx, h = b.height() * sy;
  Box out{b.cx() + dx - w / 2, b.cy() + dy - h / 2, b.cx() + dx + w / 2, b.cy() + dy + h / 2};
  out = out.clamped(img_w, img_h);
  if (!out.valid()) out = b.clamped(img_w, img_h);  // pathological jitter, keep the source box
  return out;
}

}  // namespace

HOIVocabulary make_toy_vocabulary(int num_verbs, int num_objects, int num_hoi) {
  if (num_verbs < 1 || num_objects < 1 || num_hoi < 1)
    throw std::invalid_argument("toy vocabulary: counts must be positive");
  if (num_hoi > num_verbs * num_objects)
    throw std::invalid_argument("toy vocabulary: num_hoi exceeds verb x object grid");

  std::vector<VerbEntry> verbs;
  for (int a = 0; a < num_verbs; ++a) {
    if (a < 10)
      verbs.push_back({a, kVerbNames[a], kVerbGerunds[a]});
    else
      verbs.push_back({a, "act" + std::to_string(a), "act" + std::to_string(a) + "ing"});
  }
  std::vector<ObjectEntry> objects;
  for (int c = 0; c < num_objects; ++c) {
    if (c < 10)
      objects.push_back({c, kObjectNames[c]});
    else
      objects.push_back({c, "thing" + std::to_string(c)});
  }

  // Walk a skewed diagonal so verbs and objects interleave, then sweep the
  // whole grid for any stragglers. Deterministic, covers every object early.
  std::vector<Combo> combos;
  std::set<std::pair<int, int>> seen;
  for (int j = 0; static_cast<int>(combos.size()) < num_hoi && j < 4 * num_verbs * num_objects; ++j) {
    const int a = j % num_verbs;
    const int c = (j / num_verbs + j) % num_objects;
    if (seen.emplace(a, c).second)
      combos.push_back({static_cast<int>(combos.size()), a, c, Role::object});
  }
  for (int a = 0; static_cast<int>(combos.size()) < num_hoi && a < num_verbs; ++a)
    for (int c = 0; static_cast<int>(combos.size()) < num_hoi && c < num_objects; ++c)
      if (seen.emplace(a, c).second)
        combos.push_back({static_cast<int>(combos.size()), a, c, Role::object});

  return HOIVocabulary(std::move(verbs), std::move(objects), std::move(combos));
}

std::vector<SceneRecord> generate(const GenSpec& spec) {
  if (spec.image_count < 0) throw std::invalid_argument("generate: image_count must be >= 0");
  if (spec.image_size < 32) throw std::invalid_argument("generate: image_size must be >= 32");
  if (spec.patch < 1 || spec.image_size % spec.patch != 0)
    throw std::invalid_argument("generate: image_size must be a multiple of patch");
  if (spec.min_instances < 0 || spec.max_instances < spec.min_instances)
    throw std::invalid_argument("generate: bad instance range");
  if (spec.jitter < 0 || spec.jitter > 0.45)
    throw std::invalid_argument("generate: jitter must lie in [0, 0.45]");
  if (spec.distractors < 0) throw std::invalid_argument("generate: distractors must be >= 0");
  if (spec.skew < 0) throw std::invalid_argument("generate: skew must be >= 0");

  const HOIVocabulary vocab = make_toy_vocabulary(spec.num_verbs, spec.num_objects, spec.num_hoi);

  // class frequencies ~ (hoi_id + 1)^(-skew), as a sampling CDF
  std::vector<double> cdf(spec.num_hoi);
  double acc = 0;
  for (int k = 0; k < spec.num_hoi; ++k) {
    acc += std::pow(static_cast<double>(k + 1), -spec.skew);
    cdf[k] = acc;
  }
  for (double& v : cdf) v /= acc;

  const double size = spec.image_size;
  const double min_box = 0.18 * size, max_box = 0.34 * size;

  std::vector<SceneRecord> scenes;
  scenes.reserve(spec.image_count);
  for (int i = 0; i < spec.image_count; ++i) {
    SceneRecord rec;
    rec.image_id = i;
    rec.width = spec.image_size;
    rec.height = spec.image_size;
    const std::uint64_t render_seed = scene_render_seed(spec.seed, i);
    rec.pixels.mode = PixelSource::Mode::seed;
    rec.pixels.value = std::to_string(render_seed);

    RandomStream rs(mix64(render_seed ^ 0x517cc1b727220a95ull));  // layout stream
    const int n_inst =
        spec.min_instances + rs.uniform_int(spec.max_instances - spec.min_instances + 1);

    std::vector<Box> placed;
    auto overlaps_placed = [&](const Box& b) {
      for (const Box& p : placed)
        if (iou(b, p) > 0.25) return true;
      return false;
    };
    auto random_box = [&](RandomStream& r) {
      const double w = r.uniform(min_box, max_box);
      const double h = r.uniform(min_box, max_box);
      const double x = r.uniform(0.0, size - w);
      const double y = r.uniform(0.0, size - h);
      return Box{x, y, x + w, y + h};
    };

    std::set<int> used_verbs;
    for (int inst = 0; inst < n_inst; ++inst) {
      // verbs are unique within a scene so a human from one interaction can
      // never form a visually consistent pair with another one's object
      int hoi = -1;
      for (int draw = 0; draw < 200; ++draw) {
        const double u = rs.uniform();
        int k = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        k = std::min(k, spec.num_hoi - 1);
        if (!used_verbs.count(vocab.combo(k).verb_id)) {
          hoi = k;
          break;
        }
      }
      if (hoi < 0) break;  // verbs exhausted (more instances than verbs)
      const Combo& combo = vocab.combo(hoi);
      used_verbs.insert(combo.verb_id);

      bool ok = false;
      for (int attempt = 0; attempt < 500 && !ok; ++attempt) {
        Box hb = random_box(rs);
        // the verb fixes where the object sits relative to the human (riding is
        // on top of, kicking is in front of, ...), but only up to a group of
        // two: the stripes in the corridor between the boxes carry the rest,
        // so cropped boxes alone cannot pin the verb down
        const int ngroups = (spec.num_verbs + 1) / 2;
        const double theta = kTwoPi * (combo.verb_id % ngroups) / ngroups + rs.uniform(-0.18, 0.18);
        const double dist = rs.uniform(0.26, 0.34) * size;
        const double ow = rs.uniform(min_box, max_box);
        const double oh = rs.uniform(min_box, max_box);
        const double ocx = hb.cx() + dist * std::cos(theta);
        const double ocy = hb.cy() + dist * std::sin(theta);
        Box ob{ocx - ow / 2, ocy - oh / 2, ocx + ow / 2, ocy + oh / 2};
        if (ob.x1 < 0.0 || ob.y1 < 0.0 || ob.x2 > size || ob.y2 > size) continue;
        // the two boxes must stay visually separate or neither reads as a blob
        const double gap_x = std::max(0.0, std::max(hb.x1, ob.x1) - std::min(hb.x2, ob.x2));
        const double gap_y = std::max(0.0, std::max(hb.y1, ob.y1) - std::min(hb.y2, ob.y2));
        if (iou(hb, ob) > 0.0 || std::max(gap_x, gap_y) < 2.0) continue;
        if (overlaps_placed(hb) || overlaps_placed(ob)) continue;
        placed.push_back(hb);
        placed.push_back(ob);
        rec.gt_instances.push_back({hb, ob, combo.object_id, combo.verb_id});
        rec.image_labels.insert(hoi);
        ok = true;
      }
      if (!ok) break;  // image is too crowded, settle for what fits
    }
    if (rec.gt_instances.empty())
      throw std::runtime_error("generate: could not place any instance in image " +
                               std::to_string(i));

    for (const GtInstance& gt : rec.gt_instances) {
      Proposal ph;
      ph.box = jitter_box(gt.human_box, spec.jitter, size, size, rs);
      ph.kind = Proposal::Kind::human;
      ph.object_class = -1;
      ph.score = rs.uniform(0.7, 1.0);
      rec.proposals.push_back(ph);
      Proposal po;
      po.box = jitter_box(gt.object_box, spec.jitter, size, size, rs);
      po.kind = Proposal::Kind::object;
      po.object_class = gt.object_class;
      po.score = rs.uniform(0.7, 1.0);
      rec.proposals.push_back(po);
    }

    for (int dtr = 0; dtr < spec.distractors; ++dtr) {
      Proposal p;
      p.box = random_box(rs);
      if (rs.uniform() < 0.5) {
        p.kind = Proposal::Kind::human;
        p.object_class = -1;
      } else {
        p.kind = Proposal::Kind::object;
        p.object_class = rs.uniform_int(spec.num_objects);
      }
      p.score = rs.uniform(0.1, 0.5);
      rec.proposals.push_back(p);
    }
    scenes.push_back(std::move(rec));
  }
  return scenes;
}

Image render_scene(const SceneRecord& rec, int num_verbs, int num_objects) {
  if (rec.width <= 0 || rec.height <= 0)
    throw std::invalid_argument("render_scene: bad image dimensions");

  if (rec.pixels.mode == PixelSource::Mode::path) {
    std::ifstream in(rec.pixels.value, std::ios::binary);
    if (!in) throw std::runtime_error("render_scene: cannot open " + rec.pixels.value);
    const std::size_t count = static_cast<std::size_t>(rec.width) * rec.height * 3;
    std::vector<float> raw(count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
      throw std::runtime_error("render_scene: " + rec.pixels.value + " is truncated");
    Image img(rec.height, rec.width);
    for (std::size_t i = 0; i < count; ++i) img.rgb[i] = raw[i];
    return img;
  }

  std::uint64_t seed = 0;
  try {
    seed = std::stoull(rec.pixels.value);
  } catch (const std::exception&) {
    throw std::runtime_error("render_scene: pixel seed \"" + rec.pixels.value + "\" is not a number");
  }
  RandomStream rs(mix64(seed));

  // stripe phases first so the draw sequence does not depend on image size
  std::vector<double> phases(rec.gt_instances.size());
  for (double& ph : phases) ph = rs.uniform(0.0, 6.283185307179586);

  Image img(rec.height, rec.width, 0.12);
  for (double& v : img.rgb) v += rs.uniform(-0.02, 0.02);

  // verb-coded corridor: stripes along the human-object axis, angle = verb
  for (std::size_t gi = 0; gi < rec.gt_instances.size(); ++gi) {
    const GtInstance& gt = rec.gt_instances[gi];
    const double theta = kPi * gt.verb / std::max(1, num_verbs);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double hx = gt.human_box.cx(), hy = gt.human_box.cy();
    const double ox = gt.object_box.cx(), oy = gt.object_box.cy();
    const double ex = ox - hx, ey = oy - hy;
    const double len2 = ex * ex + ey * ey;
    const Box u = union_box(gt.human_box, gt.object_box).clamped(rec.width, rec.height);
    const int x1 = static_cast<int>(std::floor(u.x1)), x2 = static_cast<int>(std::ceil(u.x2));
    const int y1 = static_cast<int>(std::floor(u.y1)), y2 = static_cast<int>(std::ceil(u.y2));
    for (int y = std::max(0, y1); y < std::min(rec.height, y2); ++y)
      for (int x = std::max(0, x1); x < std::min(rec.width, x2); ++x) {
        // distance from the pixel center to the center-center segment
        const double px = x + 0.5 - hx, py = y + 0.5 - hy;
        const double t = len2 > 0 ? std::clamp((px * ex + py * ey) / len2, 0.0, 1.0) : 0.0;
        const double dx = px - t * ex, dy = py - t * ey;
        if (dx * dx + dy * dy > kCorridorRadius * kCorridorRadius) continue;
        const double wave =
            0.5 + 0.42 * std::cos(kTwoPi * ((x + 0.5) * ct + (y + 0.5) * st) / kStripePeriod +
                                  phases[gi]);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.9 * wave;
      }
  }

  // box textures only reveal the verb group; the corridor above has the rest
  const int ngroups = (num_verbs + 1) / 2;
  for (std::size_t gi = 0; gi < rec.gt_instances.size(); ++gi) {
    const GtInstance& gt = rec.gt_instances[gi];
    const double theta = kPi * (gt.verb % ngroups) / ngroups;
    double rgb[3];
    hsv_to_rgb(static_cast<double>(gt.object_class) / std::max(1, num_objects), 0.75, 0.85, rgb);
    fill_rect(img, gt.object_box, rgb, theta, phases[gi]);
  }
  const double human_rgb[3] = {0.88, 0.60, 0.38};
  for (std::size_t gi = 0; gi < rec.gt_instances.size(); ++gi) {
    const GtInstance& gt = rec.gt_instances[gi];
    const double theta = kPi * (gt.verb % ngroups) / ngroups;
    fill_rect(img, rec.gt_instances[gi].human_box, human_rgb, theta, phases[gi]);
  }

  for (double& v : img.rgb) v = std::clamp(v, 0.0, 1.0);
  return img;
}

namespace {

nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 4)
    throw std::invalid_argument(std::string(what) + " must be [x1, y1, x2, y2]");
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw std::invalid_argument(std::string(what) + " is degenerate");
  return b;
}

}  // namespace

void save_dataset(const std::vector<SceneRecord>& scenes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dataset: cannot open " + path + " for writing");
  for (const SceneRecord& rec : scenes) {
    nlohmann::json j;
    j["image_id"] = rec.image_id;
    j["width"] = rec.width;
    j["height"] = rec.height;
    j["pixels"] = {{"mode", rec.pixels.mode == PixelSource::Mode::seed ? "seed" : "path"},
                   {"value", rec.pixels.value}};
    nlohmann::json props = nlohmann::json::array();
    for (const Proposal& p : rec.proposals)
      props.push_back({{"box", box_json(p.box)},
                       {"kind", p.kind == Proposal::Kind::human ? "human" : "object"},
                       {"class", p.object_class},
                       {"score", p.score}});
    j["proposals"] = std::move(props);
    j["image_labels"] = rec.image_labels;  // std::set serializes sorted
    nlohmann::json gts = nlohmann::json::array();
    for (const GtInstance& g : rec.gt_instances)
      gts.push_back({{"human_box", box_json(g.human_box)},
                     {"object_box", box_json(g.object_box)},
                     {"object_class", g.object_class},
                     {"verb", g.verb}});
    j["gt_instances"] = std::move(gts);
    out << j.dump() << "\n";
  }
}

std::vector<SceneRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset: cannot open " + path);
  std::vector<SceneRecord> scenes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      SceneRecord rec;
      rec.image_id = j.at("image_id").get<int>();
      rec.width = j.at("width").get<int>();
      rec.height = j.at("height").get<int>();
      if (rec.width <= 0 || rec.height <= 0) throw std::invalid_argument("non-positive image size");
      const auto& jp = j.at("pixels");
      const std::string mode = jp.at("mode").get<std::string>();
      if (mode != "seed" && mode != "path")
        throw std::invalid_argument("pixel mode must be \"seed\" or \"path\"");
      rec.pixels.mode = mode == "seed" ? PixelSource::Mode::seed : PixelSource::Mode::path;
      rec.pixels.value = jp.at("value").get<std::string>();
      for (const auto& p : j.at("proposals")) {
        Proposal prop;
        prop.box = box_from(p.at("box"), "proposal box");
        const std::string kind = p.at("kind").get<std::string>();
        if (kind != "human" && kind != "object")
          throw std::invalid_argument("proposal kind must be \"human\" or \"object\"");
        prop.kind = kind == "human" ? Proposal::Kind::human : Proposal::Kind::object;
        prop.object_class = p.at("class").get<int>();
        prop.score = p.at("score").get<double>();
        if (prop.score < 0.0 || prop.score > 1.0)
          throw std::invalid_argument("proposal score outside [0, 1]");
        if (prop.kind == Proposal::Kind::object && prop.object_class < 0)
          throw std::invalid_argument("object proposal needs a class id");
        rec.proposals.push_back(prop);
      }
      for (const auto& l : j.at("image_labels")) {
        const int hoi = l.get<int>();
        if (hoi < 0) throw std::invalid_argument("negative image label");
        rec.image_labels.insert(hoi);
      }
      for (const auto& g : j.at("gt_instances")) {
        GtInstance gt;
        gt.human_box = box_from(g.at("human_box"), "gt human box");
        gt.object_box = box_from(g.at("object_box"), "gt object box");
        gt.object_class = g.at("object_class").get<int>();
        gt.verb = g.at("verb").get<int>();
        if (gt.object_class < 0 || gt.verb < 0) throw std::invalid_argument("negative gt ids");
        rec.gt_instances.push_back(gt);
      }
      scenes.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return scenes;
}

std::pair<std::set<int>, std::set<int>> rare_split(const std::vector<SceneRecord>& scenes,
                                                   const HOIVocabulary& vocab) {
  std::vector<int> counts(vocab.num_hoi(), 0);
  bool any_instances = false;
  for (const SceneRecord& rec : scenes)
    for (const GtInstance& gt : rec.gt_instances) {
      any_instances = true;
      const auto idx = vocab.hoi_index(gt.verb, gt.object_class);
      if (!idx)
        throw std::invalid_argument("rare_split: instance (verb " + std::to_string(gt.verb) +
                                    ", object " + std::to_string(gt.object_class) +
                                    ") is not in the vocabulary");
      ++counts[*idx];
    }
  if (!any_instances)  // weak-only data: fall back to image-level occurrences
    for (const SceneRecord& rec : scenes)
      for (int hoi : rec.image_labels) {
        if (hoi >= vocab.num_hoi())
          throw std::invalid_argument("rare_split: label " + std::to_string(hoi) + " out of range");
        ++counts[hoi];
      }

  std::pair<std::set<int>, std::set<int>> out;
  for (int k = 0; k < vocab.num_hoi(); ++k)
    (counts[k] < vocab.rare_threshold() ? out.first : out.second).insert(k);
  return out;
}

}  // namespace whoi
