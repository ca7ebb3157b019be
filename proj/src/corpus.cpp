#include "dsdn/corpus.hpp"

#include <json.hpp>

#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "dsdn/errors.hpp"

namespace dsdn {

using nlohmann::json;

int Schema::slot_index(const std::string& name) const {
  for (int j = 0; j < size(); ++j)
    if (slots[static_cast<std::size_t>(j)].name == name) return j;
  return -1;
}

bool Schema::has_value(int j, const std::string& value) const {
  const auto& vals = slot(j).values;
  for (const auto& v : vals)
    if (v == value) return true;
  return false;
}

void Schema::validate() const {
  std::set<std::string> seen;
  for (const auto& s : slots) {
    if (!seen.insert(s.name).second)
      throw SchemaError("duplicate slot name: " + s.name);
    bool has_none = false;
    for (const auto& v : s.values) has_none = has_none || v == kNoneValue;
    if (!has_none)
      throw SchemaError("slot '" + s.name + "' lacks the 'none' value");
  }
}

std::uint64_t Schema::hash() const {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0x1f;
    h *= 1099511628211ull;
  };
  for (const auto& s : slots) {
    mix(s.name);
    for (const auto& v : s.values) mix(v);
  }
  return h;
}

void validate_dialogue(const Dialogue& dialogue, const Schema& schema) {
  if (dialogue.turns.empty())
    throw SchemaError("dialogue '" + dialogue.id + "' has no turns");
  for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
    const State& st = dialogue.turns[t].state;
    for (const auto& [name, value] : st) {
      int j = schema.slot_index(name);
      if (j < 0)
        throw SchemaError("dialogue '" + dialogue.id + "' turn " +
                          std::to_string(t + 1) + ": unknown slot '" + name + "'");
      if (!schema.has_value(j, value))
        throw SchemaError("dialogue '" + dialogue.id + "' turn " +
                          std::to_string(t + 1) + ": value '" + value +
                          "' not in ontology of slot '" + name + "'");
    }
    for (const auto& s : schema.slots)
      if (!st.count(s.name))
        throw SchemaError("dialogue '" + dialogue.id + "' turn " +
                          std::to_string(t + 1) + ": state missing slot '" +
                          s.name + "'");
  }
}

SopLabelMatrix derive_sop_labels(const Dialogue& dialogue, const Schema& schema) {
  validate_dialogue(dialogue, schema);
  const int J = schema.size();
  const int T = static_cast<int>(dialogue.turns.size());
  SopLabelMatrix labels(J, T);
  for (int j = 0; j < J; ++j) {
    const std::string& name = schema.slot(j).name;
    std::string prev = kNoneValue;
    for (int t = 0; t < T; ++t) {
      const std::string& cur =
          dialogue.turns[static_cast<std::size_t>(t)].state.at(name);
      labels.at(j, t) = cur != prev ? 1 : 0;
      prev = cur;
    }
  }
  return labels;
}

namespace {

const std::vector<std::string> kUserTemplates = {
    "i would like the {s} to be {v}",
    "please set {s} to {v}",
    "i am looking for {s} {v}",
    "can you make the {s} {v}",
    "{v} for the {s} please",
    "actually change {s} to {v}",
    "my preference for {s} is {v}",
    "let us go with {v} as the {s}",
    "i need {s} {v} this time",
    "set the {s} field to {v} thanks",
};

const std::vector<std::string> kSystemTemplates = {
    "okay the {s} is now {v}",
    "sure i noted {s} as {v}",
    "done {s} set to {v}",
    "alright {v} it is for {s}",
    "confirmed {s} {v}",
};

const std::vector<std::string> kUserFillers = {
    "hello there",
    "thank you so much",
    "that sounds good to me",
    "what else do you suggest",
};

const std::vector<std::string> kSystemFillers = {
    "how can i help you",
    "is there anything else",
    "glad to assist",
};

std::string fill(const std::string& tpl, const std::string& slot,
                 const std::string& value) {
  std::string out;
  for (std::size_t i = 0; i < tpl.size(); ++i) {
    if (tpl.compare(i, 3, "{s}") == 0) {
      out += slot;
      i += 2;
    } else if (tpl.compare(i, 3, "{v}") == 0) {
      out += value;
      i += 2;
    } else {
      out += tpl[i];
    }
  }
  return out;
}

template <typename Rng>
std::size_t pick(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

std::vector<Dialogue> generate_synthetic_corpus(const Schema& schema,
                                                const SyntheticOptions& opts) {
  schema.validate();
  if (opts.n_dialogues <= 0)
    throw ArgumentError("n_dialogues must be positive");
  const int J = schema.size();
  std::set<int> paired;
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [a, b] : opts.coupdate_pairs) {
    int ja = schema.slot_index(a), jb = schema.slot_index(b);
    if (ja < 0 || jb < 0)
      throw ArgumentError("co-update pair references unknown slot: " + a + "," + b);
    pairs.emplace_back(ja, jb);
    paired.insert(ja);
    paired.insert(jb);
  }
  std::vector<int> singles;
  for (int j = 0; j < J; ++j)
    if (!paired.count(j)) singles.push_back(j);

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Dialogue> out;
  out.reserve(static_cast<std::size_t>(opts.n_dialogues));
  for (int d = 0; d < opts.n_dialogues; ++d) {
    Dialogue dlg;
    dlg.id = "syn-" + std::to_string(opts.seed) + "-" + std::to_string(d);
    const int T = 1 + static_cast<int>(pick(rng, 8));
    State state;
    for (const auto& s : schema.slots) state[s.name] = kNoneValue;

    for (int t = 0; t < T; ++t) {
      std::vector<int> updated;
      const bool filler_turn = unit(rng) < 0.08 && t > 0;
      if (!filler_turn) {
        const int n_events = unit(rng) < 0.35 ? 2 : 1;
        for (int e = 0; e < n_events; ++e) {
          const std::size_t n_choices = pairs.size() + singles.size();
          if (n_choices == 0) break;
          const std::size_t c = pick(rng, n_choices);
          if (c < pairs.size()) {
            auto [ja, jb] = pairs[c];
            if (unit(rng) < opts.coupdate_prob) {
              updated.push_back(ja);
              updated.push_back(jb);
            } else {
              updated.push_back(unit(rng) < 0.5 ? ja : jb);
            }
          } else {
            updated.push_back(singles[c - pairs.size()]);
          }
        }
      }
      Turn turn;
      std::vector<std::string> user_parts, sys_parts;
      std::set<int> done;
      for (int j : updated) {
        if (done.count(j)) continue;
        done.insert(j);
        const SlotDef& sd = schema.slot(j);
        std::vector<std::string> fresh;
        for (const auto& v : sd.values)
          if (v != kNoneValue && v != state[sd.name]) fresh.push_back(v);
        if (fresh.empty()) continue;  // nothing new to say for this slot
        const std::string& v = fresh[pick(rng, fresh.size())];
        state[sd.name] = v;
        user_parts.push_back(
            fill(kUserTemplates[pick(rng, kUserTemplates.size())], sd.name, v));
        sys_parts.push_back(
            fill(kSystemTemplates[pick(rng, kSystemTemplates.size())], sd.name, v));
      }
      if (user_parts.empty()) {
        turn.user = kUserFillers[pick(rng, kUserFillers.size())];
        turn.system = kSystemFillers[pick(rng, kSystemFillers.size())];
      } else {
        std::string u, s;
        for (std::size_t k = 0; k < user_parts.size(); ++k) {
          if (k) u += " . ";
          u += user_parts[k];
        }
        // System echoes only the first event; keeps responses short.
        s = sys_parts.front();
        turn.user = u;
        turn.system = s;
      }
      turn.state = state;
      dlg.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(dlg));
  }
  return out;
}

namespace {

json dialogue_to_json(const Dialogue& d) {
  json turns = json::array();
  for (const auto& t : d.turns) {
    json st = json::object();
    for (const auto& [k, v] : t.state) st[k] = v;
    turns.push_back({{"user", t.user}, {"system", t.system}, {"state", st}});
  }
  return json{{"id", d.id}, {"turns", turns}};
}

Dialogue dialogue_from_json(const json& j, Schema& schema,
                            UnknownValuePolicy policy, std::size_t line_no) {
  auto where = [line_no]() { return " (line " + std::to_string(line_no) + ")"; };
  if (!j.contains("id"))
    throw SchemaError("dialogue missing required field 'id'" + where());
  if (!j.contains("turns"))
    throw SchemaError("dialogue missing required field 'turns'" + where());
  Dialogue d;
  d.id = j.at("id").get<std::string>();
  for (const auto& tj : j.at("turns")) {
    for (const char* field : {"user", "system", "state"})
      if (!tj.contains(field))
        throw SchemaError("turn missing required field '" + std::string(field) +
                          "' in dialogue '" + d.id + "'" + where());
    Turn t;
    t.user = tj.at("user").get<std::string>();
    t.system = tj.at("system").get<std::string>();
    for (const auto& [name, vj] : tj.at("state").items()) {
      std::string value = vj.get<std::string>();
      int s = schema.slot_index(name);
      if (s < 0)
        throw SchemaError("unknown slot '" + name + "' in dialogue '" + d.id +
                          "'" + where());
      if (!schema.has_value(s, value)) {
        switch (policy) {
          case UnknownValuePolicy::kReject:
            throw SchemaError("value '" + value + "' of slot '" + name +
                              "' not in ontology, dialogue '" + d.id + "'" +
                              where());
          case UnknownValuePolicy::kMapToNone:
            value = kNoneValue;
            break;
          case UnknownValuePolicy::kAddToOntology:
            schema.slots[static_cast<std::size_t>(s)].values.push_back(value);
            break;
        }
      }
      t.state[name] = value;
    }
    // Unmentioned slots carry "none".
    for (const auto& s : schema.slots)
      if (!t.state.count(s.name)) t.state[s.name] = kNoneValue;
    d.turns.push_back(std::move(t));
  }
  return d;
}

}  // namespace

std::vector<Dialogue> load_dialogues_jsonl(const std::string& path,
                                           Schema& schema,
                                           UnknownValuePolicy policy) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dialogue file: " + path);
  std::vector<Dialogue> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("malformed JSON at " + path + ":" +
                       std::to_string(line_no) + " offset " +
                       std::to_string(e.byte) + ": " + e.what());
    }
    out.push_back(dialogue_from_json(j, schema, policy, line_no));
  }
  return out;
}

void save_dialogues_jsonl(const std::string& path,
                          const std::vector<Dialogue>& dialogues) {
  std::ofstream outf(path);
  if (!outf) throw IoError("cannot write dialogue file: " + path);
  for (const auto& d : dialogues) outf << dialogue_to_json(d).dump() << '\n';
}

Schema load_schema_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed schema JSON at " + path + " offset " +
                     std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.contains("slots"))
    throw SchemaError("schema missing required field 'slots'");
  Schema schema;
  for (const auto& sj : j.at("slots")) {
    if (!sj.contains("name") || !sj.contains("values"))
      throw SchemaError("schema slot entry missing 'name' or 'values'");
    SlotDef def;
    def.name = sj.at("name").get<std::string>();
    for (const auto& v : sj.at("values"))
      def.values.push_back(v.get<std::string>());
    schema.slots.push_back(std::move(def));
  }
  schema.validate();
  return schema;
}

void save_schema_json(const std::string& path, const Schema& schema) {
  json slots = json::array();
  for (const auto& s : schema.slots)
    slots.push_back({{"name", s.name}, {"values", s.values}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write schema file: " + path);
  out << json{{"slots", slots}}.dump(2) << '\n';
}

double coupdate_rate(const std::vector<Dialogue>& dialogues, const Schema& schema,
                     const std::string& slot_a, const std::string& slot_b) {
  const int ja = schema.slot_index(slot_a), jb = schema.slot_index(slot_b);
  if (ja < 0 || jb < 0)
    throw ArgumentError("coupdate_rate: unknown slot '" +
                        (ja < 0 ? slot_a : slot_b) + "'");
  long either = 0, both = 0;
  for (const auto& d : dialogues) {
    SopLabelMatrix labels = derive_sop_labels(d, schema);
    for (int t = 0; t < labels.n_turns; ++t) {
      const bool a = labels.at(ja, t), b = labels.at(jb, t);
      either += (a || b) ? 1 : 0;
      both += (a && b) ? 1 : 0;
    }
  }
  return either == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(either);
}

}  // namespace dsdn
