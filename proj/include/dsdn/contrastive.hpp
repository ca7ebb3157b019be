#ifndef DSDN_CONTRASTIVE_HPP
#define DSDN_CONTRASTIVE_HPP

#include <utility>
#include <vector>

#include "dsdn/autodiff.hpp"
#include "dsdn/corpus.hpp"

namespace dsdn {

// 0-based (slot, turn) cell whose SOP label is 1.
struct AnchorIndex {
  int slot = 0;
  int turn = 0;
};

// Positives: other slots updating at the anchor's turn. Turn-level
// negatives: non-updating slots at the same turn. Dialogue-level negatives:
// the anchor's slot at every other turn of the same dialogue.
struct SampleSets {
  std::vector<std::pair<int, int>> positives;
  std::vector<std::pair<int, int>> negatives_turn;
  std::vector<std::pair<int, int>> negatives_dialogue;
};

SampleSets select_samples(const SopLabelMatrix& labels, AnchorIndex anchor);

struct NtXentOptions {
  double tau = 0.01;
  bool include_dialogue_negatives = true;  // false = the "minus" variant
};

// NT-Xent over projected cell vectors. `z` has one row per (slot, turn)
// cell, flat index slot * n_turns + turn. Anchors are label-1 cells with a
// nonempty positive set; all other cells contribute zero. The result carries
// the 1/(T*J) normalization.
ad::Var nt_xent_loss(ad::Var z, const SopLabelMatrix& labels,
                     const NtXentOptions& opts);

}  // namespace dsdn

#endif  // DSDN_CONTRASTIVE_HPP
