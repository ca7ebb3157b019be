#ifndef DSDN_CORPUS_HPP
#define DSDN_CORPUS_HPP

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dsdn {

inline const std::string kNoneValue = "none";

struct SlotDef {
  std::string name;                 // "domain-slot"
  std::vector<std::string> values;  // candidate value set, contains "none"
};

// Ordered slot set; slot index j is the position in `slots`.
struct Schema {
  std::vector<SlotDef> slots;

  int size() const { return static_cast<int>(slots.size()); }
  int slot_index(const std::string& name) const;  // -1 if absent
  const SlotDef& slot(int j) const { return slots.at(static_cast<std::size_t>(j)); }
  bool has_value(int j, const std::string& value) const;
  void validate() const;  // uniqueness, "none" membership

  // Content hash used for checkpoint compatibility checks.
  std::uint64_t hash() const;
};

using State = std::map<std::string, std::string>;  // slot name -> value

struct Turn {
  std::string user;
  std::string system;
  State state;  // cumulative gold state, total over the schema

  bool operator==(const Turn&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;

  bool operator==(const Dialogue&) const = default;
};

// Binary value-update events, labels(j, t) over 0-based slot/turn indices.
struct SopLabelMatrix {
  int n_slots = 0;
  int n_turns = 0;
  std::vector<std::uint8_t> data;  // row-major [slot][turn]

  SopLabelMatrix() = default;
  SopLabelMatrix(int slots, int turns)
      : n_slots(slots), n_turns(turns),
        data(static_cast<std::size_t>(slots) * static_cast<std::size_t>(turns), 0) {}

  std::uint8_t& at(int j, int t) {
    return data[static_cast<std::size_t>(j) * n_turns + t];
  }
  std::uint8_t at(int j, int t) const {
    return data[static_cast<std::size_t>(j) * n_turns + t];
  }
  bool operator==(const SopLabelMatrix&) const = default;
};

// A cell is 1 iff the slot's value differs from the previous turn; the
// virtual turn before the dialogue is all-"none".
SopLabelMatrix derive_sop_labels(const Dialogue& dialogue, const Schema& schema);

// Checks states are total over the schema and values in-ontology.
void validate_dialogue(const Dialogue& dialogue, const Schema& schema);

struct SyntheticOptions {
  int n_dialogues = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> coupdate_pairs;
  double coupdate_prob = 0.95;  // both members update given either does
};

std::vector<Dialogue> generate_synthetic_corpus(const Schema& schema,
                                                const SyntheticOptions& opts);

enum class UnknownValuePolicy { kReject, kMapToNone, kAddToOntology };

// JSON Lines, one dialogue per line; states are cumulative per turn.
std::vector<Dialogue> load_dialogues_jsonl(
    const std::string& path, Schema& schema,
    UnknownValuePolicy policy = UnknownValuePolicy::kReject);
void save_dialogues_jsonl(const std::string& path,
                          const std::vector<Dialogue>& dialogues);

Schema load_schema_json(const std::string& path);
void save_schema_json(const std::string& path, const Schema& schema);

// Fraction of turns where both slots of the pair update, among turns where
// at least one of them does. Returns 1.0 when no such turn exists.
double coupdate_rate(const std::vector<Dialogue>& dialogues, const Schema& schema,
                     const std::string& slot_a, const std::string& slot_b);

}  // namespace dsdn

#endif  // DSDN_CORPUS_HPP
