#ifndef DSDN_MODEL_HPP
#define DSDN_MODEL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsdn/autodiff.hpp"
#include "dsdn/contrastive.hpp"
#include "dsdn/corpus.hpp"
#include "dsdn/nn.hpp"
#include "dsdn/tokenizer.hpp"

namespace dsdn {

struct ModelConfig {
  int d_out = 64;
  int n_heads = 4;
  int n_enc_layers = 2;   // base encoders (context/teacher/student/fixed)
  int n_turn_layers = 6;  // turn-sequence transformer
  int d_ff = 0;           // 0 -> 4 * d_out
  int d1 = 0;             // projection output dim, 0 -> 4 * d_out
  int d2 = 0;             // projection hidden dim, 0 -> 4 * d_out
  int max_len = 128;
  int max_turns = 64;
  std::uint64_t seed = 1;

  int dff() const { return d_ff > 0 ? d_ff : 4 * d_out; }
  int dim1() const { return d1 > 0 ? d1 : 4 * d_out; }
  int dim2() const { return d2 > 0 ? d2 : 4 * d_out; }
  void validate() const;
};

struct ForwardOptions {
  double tau = 0.01;
  bool distillation_on = true;
  bool stop_teacher_grad = false;
  bool dialogue_negatives = true;  // false = contrastive "minus" variant
  bool need_teacher = true;        // teacher path (training / SOP eval only)
  bool need_cl = true;             // projection + NT-Xent
  bool ce_sop_on_student = false;  // cross-entropy ablation of the CL loss
};

// Per-dialogue scalar loss terms, each already 1/(T*J)-normalized.
struct DialogueForward {
  ad::Var value = nullptr;
  ad::Var sop = nullptr;      // teacher BCE (null when teacher path off)
  ad::Var distill = nullptr;  // MSE teacher vs student
  ad::Var cl = nullptr;       // NT-Xent or the CE ablation
  Mat sop_probs;              // J x T teacher probabilities
  Mat z_values;               // (J*T) x d1 projected vectors
  Mat student_features;       // (J*T) x d_out, r_stu per cell
  Mat teacher_features;       // (J*T) x d_out
  std::vector<State> argmax_states;  // per turn
};

// Elementwise max fusion of turn-level and dialogue-level features; gradient
// ties route to the first argument.
ad::Var fuse(ad::Var r, ad::Var d);
// c = f + r_stu
ad::Var integrate(ad::Var f, ad::Var r_stu);
// z = W3 ReLU(W4 c) for a row vector c.
ad::Var project_contrastive(ad::Var c, Tensor& w3, Tensor& w4);
// o = LayerNorm(W5 c)
ad::Var project_value(ad::Var c, Tensor& w5, Tensor& gain, Tensor& bias);
// softmax of negative L2 distances to the candidate embeddings, 1 x K.
ad::Var value_distribution(ad::Var o, const Mat& candidates);
// -log p of the gold candidate, numerically via the log-sum-exp form.
ad::Var value_nll(ad::Var o, const Mat& candidates, Eigen::Index gold);

// Standalone loss formulas.
ad::Var sop_loss(ad::Var p_sop /* J x T, in (0,1) */, const SopLabelMatrix& labels);
ad::Var distill_loss(const std::vector<ad::Var>& r_tea,
                     const std::vector<ad::Var>& r_stu);
ad::Var dsd_loss(ad::Var l_sop, ad::Var l_distill, double alpha);

class DsdnModel {
 public:
  DsdnModel(Schema schema, Vocabulary vocab, const ModelConfig& config);

  const Schema& schema() const { return schema_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params_const() const { return params_; }

  // Token sequence builders (deterministic, tokenizer-level).
  TokenSequence context_tokens(const std::string& user,
                               const std::string& system);
  TokenSequence teacher_tokens(const State& prev_state,
                               std::vector<int>* slot_positions) const;
  TokenSequence student_tokens(std::vector<int>* slot_positions) const;

  // Fixed-encoder outputs, cached per schema (the encoder is frozen).
  const Mat& slot_vector(int j) const { return slot_vecs_.at(static_cast<std::size_t>(j)); }
  const Mat& candidate_vectors(int j) const { return value_vecs_.at(static_cast<std::size_t>(j)); }
  Mat encode_fixed(const TokenSequence& seq) const;  // [CLS] row only

  ad::Var encode_context(ad::Tape& tape, const TokenSequence& seq);

  // Full training/eval forward over one dialogue.
  DialogueForward forward(ad::Tape& tape, const Dialogue& dialogue,
                          const SopLabelMatrix& labels,
                          const ForwardOptions& opts);

  // Student-path prediction for the dialogue prefix ending at `turn`
  // (0-based); consumes no gold states.
  State predict_state(const Dialogue& dialogue, int turn);
  std::vector<State> predict_dialogue(const Dialogue& dialogue);

  // Names every tensor of the Dialogue State Distillation module.
  std::vector<std::string> distillation_param_names() const;
  void freeze_distillation();

  // Recompute the fixed-encoder caches (after loading a checkpoint).
  void refresh_fixed_cache();

  long truncation_count() const { return truncations_; }

  static const std::vector<std::string>& module_prefixes();

 private:
  struct TurnStudentFeatures {
    std::vector<ad::Var> r_turn;  // turn-level slot attention output, per slot
    std::vector<ad::Var> r_stu;   // student attention output, per slot
  };
  TurnStudentFeatures student_turn_features(ad::Tape& tape, const Turn& turn,
                                            const std::vector<ad::Var>& h_stu,
                                            ad::Var& ctx_out);
  std::vector<ad::Var> student_slot_states(ad::Tape& tape);  // h^stu_j

  ad::Var dialogue_level_feature(ad::Tape& tape, int slot,
                                 const std::vector<ad::Var>& r_prefix);

  Schema schema_;
  Vocabulary vocab_;
  ModelConfig config_;
  ParamStore params_;

  BaseEncoderParams ctx_enc_, fixed_enc_, tea_enc_, stu_enc_;
  MhaParams attn_turn_, attn_dlg_, attn_tea_, attn_stu_;
  TransformerParams turnseq_;
  Tensor* turnseq_pos_ = nullptr;
  Tensor *sop_w1_ = nullptr, *sop_w2_ = nullptr;
  Tensor *proj_w3_ = nullptr, *proj_w4_ = nullptr;
  Tensor *value_w5_ = nullptr, *value_ln_g_ = nullptr, *value_ln_b_ = nullptr;
  Tensor *cesop_w1_ = nullptr, *cesop_w2_ = nullptr;

  std::vector<Mat> slot_vecs_;   // J entries, 1 x d_out
  std::vector<Mat> value_vecs_;  // J entries, |V(s_j)| x d_out
  long truncations_ = 0;

  friend class Checkpoint;
};

}  // namespace dsdn

#endif  // DSDN_MODEL_HPP
