#ifndef DSDN_TESTS_TOY_MODEL_HPP
#define DSDN_TESTS_TOY_MODEL_HPP

// Small model/corpus builders shared by the model, trainer, and acceptance
// tests.

#include <cstdint>

#include "dsdn/corpus.hpp"
#include "dsdn/model.hpp"
#include "dsdn/trainer.hpp"
#include "test_util.hpp"

namespace testutil {

inline dsdn::ModelConfig tiny_config(int d_out = 8, int n_heads = 2,
                                     int n_enc_layers = 1, int n_turn_layers = 1,
                                     std::uint64_t seed = 1) {
  dsdn::ModelConfig cfg;
  cfg.d_out = d_out;
  cfg.n_heads = n_heads;
  cfg.n_enc_layers = n_enc_layers;
  cfg.n_turn_layers = n_turn_layers;
  cfg.d1 = d_out;
  cfg.d2 = d_out;
  cfg.max_len = 64;
  cfg.max_turns = 16;
  cfg.seed = seed;
  return cfg;
}

// Synthetic corpus plus a vocabulary covering it.
struct ToyWorld {
  dsdn::Schema schema;
  std::vector<dsdn::Dialogue> corpus;
  dsdn::Vocabulary vocab;
};

inline ToyWorld toy_world(int n_slots, int n_values, int n_dialogues,
                          std::uint64_t seed,
                          std::vector<std::pair<std::string, std::string>>
                              coupdate_pairs = {}) {
  ToyWorld w;
  w.schema = toy_schema(n_slots, n_values);
  dsdn::SyntheticOptions opts;
  opts.n_dialogues = n_dialogues;
  opts.seed = seed;
  opts.coupdate_pairs = std::move(coupdate_pairs);
  w.corpus = dsdn::generate_synthetic_corpus(w.schema, opts);
  w.vocab = dsdn::build_vocabulary(w.corpus);
  return w;
}

}  // namespace testutil

#endif  // DSDN_TESTS_TOY_MODEL_HPP
