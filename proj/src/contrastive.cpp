#include "dsdn/contrastive.hpp"

#include <algorithm>
#include <map>

#include "dsdn/errors.hpp"

namespace dsdn {

using ad::Var;

SampleSets select_samples(const SopLabelMatrix& labels, AnchorIndex anchor) {
  if (anchor.slot < 0 || anchor.slot >= labels.n_slots || anchor.turn < 0 ||
      anchor.turn >= labels.n_turns)
    throw ArgumentError("select_samples: anchor out of range");
  if (!labels.at(anchor.slot, anchor.turn))
    throw ArgumentError("select_samples: anchor cell has SOP label 0");
  SampleSets sets;
  for (int p = 0; p < labels.n_slots; ++p) {
    if (p == anchor.slot) continue;
    if (labels.at(p, anchor.turn))
      sets.positives.emplace_back(p, anchor.turn);
    else
      sets.negatives_turn.emplace_back(p, anchor.turn);
  }
  for (int t = 0; t < labels.n_turns; ++t)
    if (t != anchor.turn) sets.negatives_dialogue.emplace_back(anchor.slot, t);
  return sets;
}

Var nt_xent_loss(Var z, const SopLabelMatrix& labels, const NtXentOptions& opts) {
  if (opts.tau <= 0.0) throw ConfigError("nt_xent_loss: tau must be positive");
  const int J = labels.n_slots, T = labels.n_turns;
  if (z->rows() != static_cast<Eigen::Index>(J) * T)
    throw ArgumentError("nt_xent_loss: z row count != J*T");
  ad::Tape& tape = *z->tape;
  auto flat = [T](int j, int t) { return j * T + t; };

  struct AnchorPlan {
    int cell;
    std::vector<int> positives;
    std::vector<int> index_set;  // I(s_j^t), flat cell ids
  };
  std::vector<AnchorPlan> anchors;
  std::vector<int> participating;
  auto touch = [&participating](int cell) { participating.push_back(cell); };

  for (int j = 0; j < J; ++j) {
    for (int t = 0; t < T; ++t) {
      if (!labels.at(j, t)) continue;
      SampleSets sets = select_samples(labels, {j, t});
      if (sets.positives.empty()) continue;  // skipped, contributes 0
      AnchorPlan plan;
      plan.cell = flat(j, t);
      touch(plan.cell);
      for (auto [p, pt] : sets.positives) {
        plan.positives.push_back(flat(p, pt));
        plan.index_set.push_back(flat(p, pt));
      }
      for (auto [n, nt] : sets.negatives_turn) plan.index_set.push_back(flat(n, nt));
      if (opts.include_dialogue_negatives)
        for (auto [nj, nt] : sets.negatives_dialogue)
          plan.index_set.push_back(flat(nj, nt));
      for (int c : plan.index_set) touch(c);
      anchors.push_back(std::move(plan));
    }
  }
  if (anchors.empty()) return tape.scalar(0.0);

  std::sort(participating.begin(), participating.end());
  participating.erase(std::unique(participating.begin(), participating.end()),
                      participating.end());
  std::map<int, Eigen::Index> compact;
  for (std::size_t k = 0; k < participating.size(); ++k)
    compact[participating[k]] = static_cast<Eigen::Index>(k);

  for (int cell : participating)
    if (z->value.row(cell).norm() < 1e-12)
      throw NumericError("nt_xent_loss: zero-norm projection for cell " +
                         std::to_string(cell));

  std::vector<Var> rows;
  rows.reserve(participating.size());
  for (int cell : participating) rows.push_back(ad::rows(z, cell, 1));
  Var zn = ad::l2_normalize_rows(ad::concat_rows(rows));
  Var sim = ad::matmul(zn, ad::transpose(zn));

  const double inv_tau = 1.0 / opts.tau;
  Var total = tape.scalar(0.0);
  for (const auto& plan : anchors) {
    Var row = ad::rows(sim, compact.at(plan.cell), 1);
    std::vector<Eigen::Index> pos_ix, set_ix;
    for (int c : plan.positives) pos_ix.push_back(compact.at(c));
    for (int c : plan.index_set) set_ix.push_back(compact.at(c));
    Var lse = ad::logsumexp_row(ad::scale(ad::select_cols(row, set_ix), inv_tau));
    Var pos_mean =
        ad::scale(ad::sum(ad::select_cols(row, pos_ix)),
                  inv_tau / static_cast<double>(pos_ix.size()));
    total = ad::add(total, ad::sub(lse, pos_mean));
  }
  return ad::scale(total, 1.0 / (static_cast<double>(T) * J));
}

}  // namespace dsdn
