#include "whoi/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace whoi {

namespace {

long long pair_key(int verb_id, int object_id) {
  return (static_cast<long long>(verb_id) << 32) | static_cast<unsigned>(object_id);
}

bool starts_with_vowel(const std::string& name) {
  if (name.empty()) return false;
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(name[0])));
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

}  // namespace

HOIVocabulary::HOIVocabulary(std::vector<VerbEntry> verbs, std::vector<ObjectEntry> objects,
                             std::vector<Combo> combos, int rare_threshold)
    : verbs_(std::move(verbs)),
      objects_(std::move(objects)),
      combos_(std::move(combos)),
      rare_threshold_(rare_threshold) {
  if (verbs_.empty() || objects_.empty() || combos_.empty())
    throw std::invalid_argument("vocabulary: verbs, objects and combos must be non-empty");

  std::vector<bool> seen(verbs_.size(), false);
  for (const auto& v : verbs_) {
    if (v.id < 0 || v.id >= num_verbs() || seen[v.id])
      throw std::invalid_argument("vocabulary: verb ids must be a permutation of 0.." +
                                  std::to_string(num_verbs() - 1) + ", got " + std::to_string(v.id));
    if (v.name.empty() || v.gerund.empty())
      throw std::invalid_argument("vocabulary: verb " + std::to_string(v.id) + " has an empty name or gerund");
    seen[v.id] = true;
  }
  std::sort(verbs_.begin(), verbs_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  seen.assign(objects_.size(), false);
  for (const auto& o : objects_) {
    if (o.id < 0 || o.id >= num_objects() || seen[o.id])
      throw std::invalid_argument("vocabulary: object ids must be a permutation of 0.." +
                                  std::to_string(num_objects() - 1) + ", got " + std::to_string(o.id));
    if (o.name.empty())
      throw std::invalid_argument("vocabulary: object " + std::to_string(o.id) + " has an empty name");
    seen[o.id] = true;
  }
  std::sort(objects_.begin(), objects_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  seen.assign(combos_.size(), false);
  for (const auto& c : combos_) {
    if (c.hoi_id < 0 || c.hoi_id >= num_hoi() || seen[c.hoi_id])
      throw std::invalid_argument("vocabulary: hoi ids must be a permutation of 0.." +
                                  std::to_string(num_hoi() - 1) + ", got " + std::to_string(c.hoi_id));
    seen[c.hoi_id] = true;
    if (c.verb_id < 0 || c.verb_id >= num_verbs())
      throw std::invalid_argument("vocabulary: combo " + std::to_string(c.hoi_id) +
                                  " references unknown verb " + std::to_string(c.verb_id));
    if (c.object_id < 0 || c.object_id >= num_objects())
      throw std::invalid_argument("vocabulary: combo " + std::to_string(c.hoi_id) +
                                  " references unknown object " + std::to_string(c.object_id));
    if (!pair_to_hoi_.emplace(pair_key(c.verb_id, c.object_id), c.hoi_id).second)
      throw std::invalid_argument("vocabulary: duplicate combo (verb " + std::to_string(c.verb_id) +
                                  ", object " + std::to_string(c.object_id) + ")");
  }
  std::sort(combos_.begin(), combos_.end(), [](const auto& a, const auto& b) { return a.hoi_id < b.hoi_id; });
}

const VerbEntry& HOIVocabulary::verb(int id) const {
  if (id < 0 || id >= num_verbs()) throw std::invalid_argument("verb id out of range: " + std::to_string(id));
  return verbs_[id];
}

const ObjectEntry& HOIVocabulary::object(int id) const {
  if (id < 0 || id >= num_objects()) throw std::invalid_argument("object id out of range: " + std::to_string(id));
  return objects_[id];
}

const Combo& HOIVocabulary::combo(int hoi_id) const {
  if (hoi_id < 0 || hoi_id >= num_hoi()) throw std::invalid_argument("hoi id out of range: " + std::to_string(hoi_id));
  return combos_[hoi_id];
}

std::optional<int> HOIVocabulary::hoi_index(int verb_id, int object_id) const {
  if (verb_id < 0 || verb_id >= num_verbs())
    throw std::invalid_argument("verb id out of range: " + std::to_string(verb_id));
  if (object_id < 0 || object_id >= num_objects())
    throw std::invalid_argument("object id out of range: " + std::to_string(object_id));
  auto it = pair_to_hoi_.find(pair_key(verb_id, object_id));
  if (it == pair_to_hoi_.end()) return std::nullopt;
  return it->second;
}

std::string HOIVocabulary::make_prompt(int verb_id, int object_id, Role role) const {
  if (!hoi_index(verb_id, object_id))
    throw std::invalid_argument("make_prompt: (verb " + std::to_string(verb_id) + ", object " +
                                std::to_string(object_id) + ") is not in the vocabulary");
  const std::string& gerund = verb(verb_id).gerund;
  const std::string& noun = object(object_id).name;
  if (role == Role::instrument) return "a person " + gerund + " with " + noun;
  return "a person " + gerund + (starts_with_vowel(noun) ? " an " : " a ") + noun;
}

std::string HOIVocabulary::make_prompt(int hoi_id) const {
  const Combo& c = combo(hoi_id);
  return make_prompt(c.verb_id, c.object_id, c.role);
}

std::string HOIVocabulary::to_json_string() const {
  nlohmann::json j;
  j["verbs"] = nlohmann::json::array();
  for (const auto& v : verbs_)
    j["verbs"].push_back({{"id", v.id}, {"name", v.name}, {"gerund", v.gerund}});
  j["objects"] = nlohmann::json::array();
  for (const auto& o : objects_)
    j["objects"].push_back({{"id", o.id}, {"name", o.name}});
  j["combos"] = nlohmann::json::array();
  for (const auto& c : combos_)
    j["combos"].push_back({{"hoi_id", c.hoi_id},
                           {"verb_id", c.verb_id},
                           {"object_id", c.object_id},
                           {"role", c.role == Role::instrument ? "instrument" : "object"}});
  j["rare_threshold"] = rare_threshold_;
  return j.dump(2);
}

HOIVocabulary HOIVocabulary::from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("vocabulary: bad json: ") + e.what());
  }
  std::vector<VerbEntry> verbs;
  std::vector<ObjectEntry> objects;
  std::vector<Combo> combos;
  try {
    for (const auto& v : j.at("verbs"))
      verbs.push_back({v.at("id").get<int>(), v.at("name").get<std::string>(), v.at("gerund").get<std::string>()});
    for (const auto& o : j.at("objects"))
      objects.push_back({o.at("id").get<int>(), o.at("name").get<std::string>()});
    for (const auto& c : j.at("combos")) {
      const std::string role = c.at("role").get<std::string>();
      if (role != "object" && role != "instrument")
        throw std::invalid_argument("vocabulary: unknown role \"" + role + "\"");
      combos.push_back({c.at("hoi_id").get<int>(), c.at("verb_id").get<int>(), c.at("object_id").get<int>(),
                        role == "instrument" ? Role::instrument : Role::object});
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("vocabulary: missing or mistyped field: ") + e.what());
  }
  return HOIVocabulary(std::move(verbs), std::move(objects), std::move(combos), j.value("rare_threshold", 10));
}

void HOIVocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("vocabulary: cannot open " + path + " for writing");
  out << to_json_string() << "\n";
}

HOIVocabulary HOIVocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocabulary: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

}  // namespace whoi
