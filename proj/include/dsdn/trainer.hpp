#ifndef DSDN_TRAINER_HPP
#define DSDN_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsdn/checkpoint.hpp"
#include "dsdn/corpus.hpp"
#include "dsdn/model.hpp"

namespace dsdn {

enum class ClMode { kNone, kCrossEntropy, kContrastiveMinus, kContrastive };

std::string cl_mode_name(ClMode mode);
ClMode cl_mode_from_name(const std::string& name);

struct TrainConfig {
  double alpha = 0.8;
  double tau = 0.01;
  double phase1_lr = 1e-4;
  double phase2_lr = 1e-5;
  double warmup_proportion = 0.1;
  int phase1_max_epochs = 100;
  int phase1_patience = 15;
  int phase2_epochs = 15;
  int phase1_batch = 8;   // dialogues per batch
  int phase2_batch = 16;
  std::uint64_t seed = 1;
  bool distillation_on = true;
  ClMode cl_mode = ClMode::kContrastive;
  bool stop_teacher_grad = false;
  double grad_clip = 1.0;
  // model dimensions
  int d_out = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_turn_layers = 6;
  int d1 = 0;  // 0 -> 4 * d_out
  int d2 = 0;
  int max_len = 128;

  void validate() const;
  ModelConfig model_config() const;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);  // unknown keys error
  static TrainConfig from_file(const std::string& path);
};

// Adaptive moment estimation over the trainable tensors of a ParamStore.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor*> tensors, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  // Applies one update from the accumulated gradients; `lr_scale` carries
  // the warmup factor. Gradients are clipped at global norm `grad_clip`
  // (<= 0 disables clipping), then cleared.
  void step(double lr_scale, double grad_clip);

  long steps() const { return steps_; }

 private:
  std::vector<Tensor*> tensors_;
  std::vector<Mat> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
};

struct EpochLog {
  int phase = 0;
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_joint_ga = 0.0;

  std::string to_json() const;
};

using LogSink = std::function<void(const EpochLog&)>;

// Phase 1: L_value + L_dsd, early stopping on dev loss; the model is left at
// the best-dev parameters and the returned meta describes that checkpoint.
CheckpointMeta train_phase1(DsdnModel& model, const std::vector<Dialogue>& train,
                            const std::vector<Dialogue>& dev,
                            const TrainConfig& config, const LogSink& log = {});

// Phase 2: distillation module frozen, L_value + L_cl for a fixed number of
// epochs; the model is left at the best-dev-Joint-GA parameters.
CheckpointMeta train_phase2(DsdnModel& model, const std::vector<Dialogue>& train,
                            const std::vector<Dialogue>& dev,
                            const TrainConfig& config, const LogSink& log = {});

double dev_joint_ga(DsdnModel& model, const std::vector<Dialogue>& dev);

struct AblationRow {
  std::string variant;
  std::vector<double> dev_joint_ga_per_seed;
  double dev_joint_ga_mean = 0.0;
  // Reference deltas reported on MultiWOZ 2.0 / 2.1, for direction only.
  double reference_delta_20 = 0.0;
  double reference_delta_21 = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string to_json() const;
};

AblationReport run_ablation(const Schema& schema, const Vocabulary& vocab,
                            const std::vector<Dialogue>& train,
                            const std::vector<Dialogue>& dev,
                            const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds);

Vocabulary build_vocabulary(const std::vector<Dialogue>& dialogues);

}  // namespace dsdn

#endif  // DSDN_TRAINER_HPP
