#pragma once

// Interaction vocabulary: verbs, object classes, and the valid
// (verb, object) combinations with their prompt role.

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace whoi {

struct VerbEntry {
  int id = 0;
  std::string name;    // base form, e.g. "ride"
  std::string gerund;  // stored explicitly, e.g. "riding"; no inflection rules
};

struct ObjectEntry {
  int id = 0;
  std::string name;
};

enum class Role { object, instrument };

struct Combo {
  int hoi_id = 0;
  int verb_id = 0;
  int object_id = 0;
  Role role = Role::object;
};

// Validated on construction: verb ids are exactly 0..A-1, object ids 0..C-1,
// hoi ids 0..N-1, combos reference valid ids and never repeat a
// (verb, object) pair. Throws std::invalid_argument with the offending entry.
class HOIVocabulary {
 public:
  HOIVocabulary(std::vector<VerbEntry> verbs, std::vector<ObjectEntry> objects,
                std::vector<Combo> combos, int rare_threshold = 10);

  int num_verbs() const { return static_cast<int>(verbs_.size()); }
  int num_objects() const { return static_cast<int>(objects_.size()); }
  int num_hoi() const { return static_cast<int>(combos_.size()); }
  int rare_threshold() const { return rare_threshold_; }

  const std::vector<VerbEntry>& verbs() const { return verbs_; }
  const std::vector<ObjectEntry>& objects() const { return objects_; }
  const std::vector<Combo>& combos() const { return combos_; }

  const VerbEntry& verb(int id) const;
  const ObjectEntry& object(int id) const;
  const Combo& combo(int hoi_id) const;

  // nullopt when the pair is not in the vocabulary; throws on out-of-range ids.
  std::optional<int> hoi_index(int verb_id, int object_id) const;

  // "a person riding a bicycle" / "a person cutting with knife".
  // The (verb, object) pair must be a registered combo.
  std::string make_prompt(int verb_id, int object_id, Role role) const;
  std::string make_prompt(int hoi_id) const;

  std::string to_json_string() const;
  static HOIVocabulary from_json_string(const std::string& text);
  void save(const std::string& path) const;
  static HOIVocabulary load(const std::string& path);

 private:
  std::vector<VerbEntry> verbs_;
  std::vector<ObjectEntry> objects_;
  std::vector<Combo> combos_;
  std::unordered_map<long long, int> pair_to_hoi_;
  int rare_threshold_ = 10;
};

}  // namespace whoi
