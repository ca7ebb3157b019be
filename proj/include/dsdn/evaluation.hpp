#ifndef DSDN_EVALUATION_HPP
#define DSDN_EVALUATION_HPP

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dsdn/corpus.hpp"

namespace dsdn {

// (dialogue id, 1-based turn index)
using TurnKey = std::pair<std::string, int>;
using StateMap = std::map<TurnKey, State>;
using SopBits = std::map<std::string, int>;  // slot name -> 0|1
using SopMap = std::map<TurnKey, SopBits>;

// Exact string equality after lowercasing and whitespace collapse.
std::string normalize_value(const std::string& value);
bool states_match(const State& a, const State& b);

// Fraction of turns whose full state matches; keys must align exactly.
double joint_goal_accuracy(const StateMap& predictions, const StateMap& golds);

// Joint GA bucketed by absolute turn index; empty buckets omitted.
std::map<int, double> per_turn_breakdown(const StateMap& predictions,
                                         const StateMap& golds);
std::map<int, long> per_turn_counts(const StateMap& golds);

std::map<std::string, double> slot_accuracy(const StateMap& predictions,
                                            const StateMap& golds);

// Fraction of turns with every slot's SOP bit correct.
double sop_joint_ga(const SopMap& predictions, const SopMap& golds);

struct EvalReport {
  double joint_ga = 0.0;
  std::map<int, double> per_turn_joint_ga;
  std::map<std::string, double> slot_accuracy;
  double sop_joint_ga = -1.0;  // negative = not evaluated
  std::map<int, long> counts;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  std::string per_turn_csv() const;
  bool operator==(const EvalReport&) const = default;
};

EvalReport build_report(const StateMap& predictions, const StateMap& golds,
                        const SopMap* sop_predictions = nullptr,
                        const SopMap* sop_golds = nullptr);

StateMap gold_state_map(const std::vector<Dialogue>& dialogues);
SopMap gold_sop_map(const std::vector<Dialogue>& dialogues, const Schema& schema);

}  // namespace dsdn

#endif  // DSDN_EVALUATION_HPP
