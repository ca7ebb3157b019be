#include "dsdn/evaluation.hpp"

#include <json.hpp>

#include <cctype>
#include <sstream>

#include "dsdn/errors.hpp"

namespace dsdn {

using nlohmann::json;

std::string normalize_value(const std::string& value) {
  std::string out;
  bool in_space = true;
  for (unsigned char c : value) {
    if (std::isspace(c)) {
      if (!in_space) out += ' ';
      in_space = true;
    } else {
      out += static_cast<char>(std::tolower(c));
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

bool states_match(const State& a, const State& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end()) return false;
    if (normalize_value(v) != normalize_value(it->second)) return false;
  }
  return true;
}

namespace {

void check_alignment(const StateMap& predictions, const StateMap& golds) {
  std::string missing;
  for (const auto& [key, _] : golds)
    if (!predictions.count(key))
      missing += " " + key.first + ":" + std::to_string(key.second);
  for (const auto& [key, _] : predictions)
    if (!golds.count(key))
      missing += " " + key.first + ":" + std::to_string(key.second) + "(extra)";
  if (!missing.empty())
    throw AlignmentError("prediction/gold turn keys misaligned:" + missing);
}

}  // namespace

double joint_goal_accuracy(const StateMap& predictions, const StateMap& golds) {
  check_alignment(predictions, golds);
  if (golds.empty()) throw ArgumentError("joint_goal_accuracy: empty input");
  long hit = 0;
  for (const auto& [key, gold] : golds)
    if (states_match(predictions.at(key), gold)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(golds.size());
}

std::map<int, double> per_turn_breakdown(const StateMap& predictions,
                                         const StateMap& golds) {
  check_alignment(predictions, golds);
  std::map<int, long> total, hit;
  for (const auto& [key, gold] : golds) {
    ++total[key.second];
    if (states_match(predictions.at(key), gold)) ++hit[key.second];
  }
  std::map<int, double> out;
  for (const auto& [t, n] : total)
    out[t] = static_cast<double>(hit[t]) / static_cast<double>(n);
  return out;
}

std::map<int, long> per_turn_counts(const StateMap& golds) {
  std::map<int, long> out;
  for (const auto& [key, _] : golds) ++out[key.second];
  return out;
}

std::map<std::string, double> slot_accuracy(const StateMap& predictions,
                                            const StateMap& golds) {
  check_alignment(predictions, golds);
  std::map<std::string, long> total, hit;
  for (const auto& [key, gold] : golds) {
    const State& pred = predictions.at(key);
    for (const auto& [slot, value] : gold) {
      ++total[slot];
      auto it = pred.find(slot);
      if (it != pred.end() &&
          normalize_value(it->second) == normalize_value(value))
        ++hit[slot];
    }
  }
  std::map<std::string, double> out;
  for (const auto& [slot, n] : total)
    out[slot] = static_cast<double>(hit[slot]) / static_cast<double>(n);
  return out;
}

double sop_joint_ga(const SopMap& predictions, const SopMap& golds) {
  if (golds.empty()) throw ArgumentError("sop_joint_ga: empty input");
  long hit = 0;
  for (const auto& [key, gold] : golds) {
    auto it = predictions.find(key);
    if (it == predictions.end())
      throw AlignmentError("sop_joint_ga: missing prediction for " + key.first +
                           ":" + std::to_string(key.second));
    if (it->second.size() != gold.size())
      throw ArgumentError("sop_joint_ga: slot set mismatch at " + key.first);
    bool all = true;
    for (const auto& [slot, bit] : gold) {
      auto sit = it->second.find(slot);
      if (sit == it->second.end())
        throw ArgumentError("sop_joint_ga: missing slot '" + slot + "'");
      all = all && sit->second == bit;
    }
    if (all) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(golds.size());
}

std::string EvalReport::to_json() const {
  json per_turn = json::object(), slots = json::object(), cnt = json::object();
  for (const auto& [t, v] : per_turn_joint_ga) per_turn[std::to_string(t)] = v;
  for (const auto& [s, v] : slot_accuracy) slots[s] = v;
  for (const auto& [t, n] : counts) cnt[std::to_string(t)] = n;
  json j{{"joint_ga", joint_ga},
         {"per_turn_joint_ga", per_turn},
         {"slot_accuracy", slots},
         {"sop_joint_ga", sop_joint_ga},
         {"counts", cnt}};
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed report JSON: ") + e.what());
  }
  EvalReport r;
  r.joint_ga = j.at("joint_ga").get<double>();
  for (const auto& [k, v] : j.at("per_turn_joint_ga").items())
    r.per_turn_joint_ga[std::stoi(k)] = v.get<double>();
  for (const auto& [k, v] : j.at("slot_accuracy").items())
    r.slot_accuracy[k] = v.get<double>();
  r.sop_joint_ga = j.at("sop_joint_ga").get<double>();
  for (const auto& [k, v] : j.at("counts").items())
    r.counts[std::stoi(k)] = v.get<long>();
  return r;
}

std::string EvalReport::per_turn_csv() const {
  std::ostringstream out;
  out << "turn,joint_ga,count\n";
  for (const auto& [t, v] : per_turn_joint_ga) {
    long n = counts.count(t) ? counts.at(t) : 0;
    out << t << ',' << v << ',' << n << '\n';
  }
  return out.str();
}

EvalReport build_report(const StateMap& predictions, const StateMap& golds,
                        const SopMap* sop_predictions, const SopMap* sop_golds) {
  EvalReport r;
  r.joint_ga = joint_goal_accuracy(predictions, golds);
  r.per_turn_joint_ga = per_turn_breakdown(predictions, golds);
  r.slot_accuracy = slot_accuracy(predictions, golds);
  r.counts = per_turn_counts(golds);
  if (sop_predictions && sop_golds)
    r.sop_joint_ga = dsdn::sop_joint_ga(*sop_predictions, *sop_golds);
  return r;
}

StateMap gold_state_map(const std::vector<Dialogue>& dialogues) {
  StateMap out;
  for (const auto& d : dialogues)
    for (std::size_t t = 0; t < d.turns.size(); ++t)
      out[{d.id, static_cast<int>(t) + 1}] = d.turns[t].state;
  return out;
}

SopMap gold_sop_map(const std::vector<Dialogue>& dialogues, const Schema& schema) {
  SopMap out;
  for (const auto& d : dialogues) {
    SopLabelMatrix labels = derive_sop_labels(d, schema);
    for (int t = 0; t < labels.n_turns; ++t) {
      SopBits bits;
      for (int j = 0; j < labels.n_slots; ++j)
        bits[schema.slot(j).name] = labels.at(j, t);
      out[{d.id, t + 1}] = std::move(bits);
    }
  }
  return out;
}

}  // namespace dsdn
