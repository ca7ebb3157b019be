#include "dsdn/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "dsdn/errors.hpp"
#include "dsdn/evaluation.hpp"

namespace dsdn {

using ad::Var;
using nlohmann::json;

std::string cl_mode_name(ClMode mode) {
  switch (mode) {
    case ClMode::kNone: return "none";
    case ClMode::kCrossEntropy: return "cross_entropy";
    case ClMode::kContrastiveMinus: return "contrastive_minus";
    case ClMode::kContrastive: return "contrastive";
  }
  return "contrastive";
}

ClMode cl_mode_from_name(const std::string& name) {
  if (name == "none") return ClMode::kNone;
  if (name == "cross_entropy") return ClMode::kCrossEntropy;
  if (name == "contrastive_minus") return ClMode::kContrastiveMinus;
  if (name == "contrastive") return ClMode::kContrastive;
  throw ConfigError("unknown cl_mode: " + name);
}

void TrainConfig::validate() const {
  if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("alpha must lie in (0,1)");
  if (tau <= 0.0) throw ConfigError("tau must be positive");
  if (phase1_lr <= 0.0 || phase2_lr <= 0.0)
    throw ConfigError("learning rates must be positive");
  if (warmup_proportion < 0.0 || warmup_proportion >= 1.0)
    throw ConfigError("warmup_proportion must lie in [0,1)");
  if (phase1_max_epochs < 1 || phase2_epochs < 0)
    throw ConfigError("epoch counts invalid");
  if (phase1_patience < 1) throw ConfigError("phase1_patience must be >= 1");
  if (phase1_batch < 1 || phase2_batch < 1)
    throw ConfigError("batch sizes must be >= 1");
  model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc;
  mc.d_out = d_out;
  mc.n_heads = n_heads;
  mc.n_enc_layers = n_enc_layers;
  mc.n_turn_layers = n_turn_layers;
  mc.d1 = d1;
  mc.d2 = d2;
  mc.max_len = max_len;
  mc.seed = seed;
  return mc;
}

std::string TrainConfig::to_json() const {
  json j{{"alpha", alpha},
         {"tau", tau},
         {"phase1_lr", phase1_lr},
         {"phase2_lr", phase2_lr},
         {"warmup_proportion", warmup_proportion},
         {"phase1_max_epochs", phase1_max_epochs},
         {"phase1_patience", phase1_patience},
         {"phase2_epochs", phase2_epochs},
         {"phase1_batch", phase1_batch},
         {"phase2_batch", phase2_batch},
         {"seed", seed},
         {"distillation_on", distillation_on},
         {"cl_mode", cl_mode_name(cl_mode)},
         {"stop_teacher_grad", stop_teacher_grad},
         {"grad_clip", grad_clip},
         {"d_out", d_out},
         {"n_heads", n_heads},
         {"n_enc_layers", n_enc_layers},
         {"n_turn_layers", n_turn_layers},
         {"d1", d1},
         {"d2", d2},
         {"max_len", max_len}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed config JSON: ") + e.what());
  }
  TrainConfig c;
  const std::map<std::string, std::function<void(const json&)>> setters = {
      {"alpha", [&](const json& v) { c.alpha = v.get<double>(); }},
      {"tau", [&](const json& v) { c.tau = v.get<double>(); }},
      {"phase1_lr", [&](const json& v) { c.phase1_lr = v.get<double>(); }},
      {"phase2_lr", [&](const json& v) { c.phase2_lr = v.get<double>(); }},
      {"warmup_proportion",
       [&](const json& v) { c.warmup_proportion = v.get<double>(); }},
      {"phase1_max_epochs",
       [&](const json& v) { c.phase1_max_epochs = v.get<int>(); }},
      {"phase1_patience",
       [&](const json& v) { c.phase1_patience = v.get<int>(); }},
      {"phase2_epochs", [&](const json& v) { c.phase2_epochs = v.get<int>(); }},
      {"phase1_batch", [&](const json& v) { c.phase1_batch = v.get<int>(); }},
      {"phase2_batch", [&](const json& v) { c.phase2_batch = v.get<int>(); }},
      {"seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"distillation_on",
       [&](const json& v) { c.distillation_on = v.get<bool>(); }},
      {"cl_mode",
       [&](const json& v) { c.cl_mode = cl_mode_from_name(v.get<std::string>()); }},
      {"stop_teacher_grad",
       [&](const json& v) { c.stop_teacher_grad = v.get<bool>(); }},
      {"grad_clip", [&](const json& v) { c.grad_clip = v.get<double>(); }},
      {"d_out", [&](const json& v) { c.d_out = v.get<int>(); }},
      {"n_heads", [&](const json& v) { c.n_heads = v.get<int>(); }},
      {"n_enc_layers", [&](const json& v) { c.n_enc_layers = v.get<int>(); }},
      {"n_turn_layers", [&](const json& v) { c.n_turn_layers = v.get<int>(); }},
      {"d1", [&](const json& v) { c.d1 = v.get<int>(); }},
      {"d2", [&](const json& v) { c.d2 = v.get<int>(); }},
      {"max_len", [&](const json& v) { c.max_len = v.get<int>(); }},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("unknown config key: " + key);
    it->second(value);
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json(text);
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor*> tensors, double lr,
                             double beta1, double beta2, double eps)
    : tensors_(std::move(tensors)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  for (Tensor* t : tensors_) {
    m_.push_back(Mat::Zero(t->value.rows(), t->value.cols()));
    v_.push_back(Mat::Zero(t->value.rows(), t->value.cols()));
  }
}

void AdamOptimizer::step(double lr_scale, double grad_clip) {
  if (grad_clip > 0.0) {
    double sq = 0.0;
    for (Tensor* t : tensors_)
      if (t->trainable) sq += t->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > grad_clip) {
      const double s = grad_clip / norm;
      for (Tensor* t : tensors_)
        if (t->trainable) t->grad *= s;
    }
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  const double lr = lr_ * lr_scale;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    Tensor* t = tensors_[i];
    if (!t->trainable) {
      t->grad.setZero();
      continue;
    }
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * t->grad;
    v_[i] = beta2_ * v_[i].array().matrix() +
            (1.0 - beta2_) * t->grad.array().square().matrix();
    t->value.array() -= lr * (m_[i].array() / bc1) /
                        ((v_[i].array() / bc2).sqrt() + eps_);
    t->grad.setZero();
  }
}

std::string EpochLog::to_json() const {
  return json{{"phase", phase},
              {"epoch", epoch},
              {"train_loss", train_loss},
              {"dev_loss", dev_loss},
              {"dev_joint_ga", dev_joint_ga}}
      .dump();
}

namespace {

struct PreparedDialogue {
  const Dialogue* dialogue;
  SopLabelMatrix labels;
};

std::vector<PreparedDialogue> prepare(const std::vector<Dialogue>& dialogues,
                                      const Schema& schema) {
  std::vector<PreparedDialogue> out;
  out.reserve(dialogues.size());
  for (const auto& d : dialogues)
    out.push_back({&d, derive_sop_labels(d, schema)});
  return out;
}

ForwardOptions phase1_options(const TrainConfig& cfg) {
  ForwardOptions opts;
  opts.tau = cfg.tau;
  opts.distillation_on = cfg.distillation_on;
  opts.stop_teacher_grad = cfg.stop_teacher_grad;
  opts.need_teacher = cfg.distillation_on;
  opts.need_cl = false;
  return opts;
}

ForwardOptions phase2_options(const TrainConfig& cfg) {
  ForwardOptions opts;
  opts.tau = cfg.tau;
  opts.distillation_on = cfg.distillation_on;
  opts.need_teacher = false;
  opts.need_cl = cfg.cl_mode == ClMode::kContrastive ||
                 cfg.cl_mode == ClMode::kContrastiveMinus;
  opts.dialogue_negatives = cfg.cl_mode != ClMode::kContrastiveMinus;
  opts.ce_sop_on_student = cfg.cl_mode == ClMode::kCrossEntropy;
  return opts;
}

Var phase_loss(ad::Tape& tape, const DialogueForward& fwd,
               const TrainConfig& cfg, int phase) {
  Var loss = fwd.value;
  if (phase == 1) {
    if (cfg.distillation_on && fwd.sop && fwd.distill)
      loss = ad::add(loss, dsd_loss(fwd.sop, fwd.distill, cfg.alpha));
  } else {
    if (fwd.cl) loss = ad::add(loss, fwd.cl);
  }
  (void)tape;
  return loss;
}

struct DevStats {
  double loss = 0.0;
  double joint_ga = 0.0;
};

DevStats dev_eval(DsdnModel& model, const std::vector<PreparedDialogue>& dev,
                  const TrainConfig& cfg, int phase) {
  if (dev.empty()) throw ArgumentError("empty dev corpus");
  ForwardOptions opts = phase == 1 ? phase1_options(cfg) : phase2_options(cfg);
  double total = 0.0;
  long turns = 0, hits = 0;
  for (const auto& pd : dev) {
    ad::Tape tape(false);
    DialogueForward fwd = model.forward(tape, *pd.dialogue, pd.labels, opts);
    total += phase_loss(tape, fwd, cfg, phase)->value(0, 0);
    for (std::size_t t = 0; t < fwd.argmax_states.size(); ++t) {
      ++turns;
      if (states_match(fwd.argmax_states[t], pd.dialogue->turns[t].state))
        ++hits;
    }
  }
  DevStats s;
  s.loss = total / static_cast<double>(dev.size());
  s.joint_ga = static_cast<double>(hits) / static_cast<double>(turns);
  return s;
}

std::vector<Mat> snapshot(const ParamStore& params) {
  std::vector<Mat> out;
  for (const auto& t : params.tensors()) out.push_back(t->value);
  return out;
}

void restore(ParamStore& params, const std::vector<Mat>& snap) {
  const auto& tensors = params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i)
    tensors[i]->value = snap[i];
}

double run_epoch(DsdnModel& model, std::vector<PreparedDialogue>& train,
                 AdamOptimizer& adam, const TrainConfig& cfg, int phase,
                 long total_steps, std::mt19937_64& shuffle_rng) {
  std::shuffle(train.begin(), train.end(), shuffle_rng);
  const int batch = phase == 1 ? cfg.phase1_batch : cfg.phase2_batch;
  const ForwardOptions opts =
      phase == 1 ? phase1_options(cfg) : phase2_options(cfg);
  const long warmup_steps = std::max<long>(
      1, static_cast<long>(cfg.warmup_proportion * static_cast<double>(total_steps)));
  double epoch_loss = 0.0;
  long n_dialogues = 0;
  for (std::size_t at = 0; at < train.size(); at += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(train.size(), at + static_cast<std::size_t>(batch));
    const double inv = 1.0 / static_cast<double>(end - at);
    for (std::size_t i = at; i < end; ++i) {
      ad::Tape tape(true);
      DialogueForward fwd =
          model.forward(tape, *train[i].dialogue, train[i].labels, opts);
      Var loss = phase_loss(tape, fwd, cfg, phase);
      epoch_loss += loss->value(0, 0);
      ++n_dialogues;
      tape.backward(ad::scale(loss, inv));
    }
    const double warm = cfg.warmup_proportion > 0.0
                            ? std::min(1.0, static_cast<double>(adam.steps() + 1) /
                                                static_cast<double>(warmup_steps))
                            : 1.0;
    adam.step(warm, cfg.grad_clip);
  }
  return epoch_loss / static_cast<double>(n_dialogues);
}

}  // namespace

CheckpointMeta train_phase1(DsdnModel& model, const std::vector<Dialogue>& train,
                            const std::vector<Dialogue>& dev,
                            const TrainConfig& config, const LogSink& log) {
  config.validate();
  if (train.empty()) throw ArgumentError("train_phase1: empty train corpus");
  if (dev.empty()) throw ArgumentError("train_phase1: empty dev corpus");
  auto train_prep = prepare(train, model.schema());
  auto dev_prep = prepare(dev, model.schema());

  AdamOptimizer adam(model.params().mutable_tensors(), config.phase1_lr);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  const long steps_per_epoch =
      (static_cast<long>(train.size()) + config.phase1_batch - 1) /
      config.phase1_batch;
  const long total_steps = steps_per_epoch * config.phase1_max_epochs;

  CheckpointMeta best;
  best.phase = 1;
  best.schema_hash = model.schema().hash();
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<Mat> best_snap = snapshot(model.params_const());
  int since_best = 0;

  for (int epoch = 1; epoch <= config.phase1_max_epochs; ++epoch) {
    const double train_loss =
        run_epoch(model, train_prep, adam, config, 1, total_steps, shuffle_rng);
    const DevStats dev_stats = dev_eval(model, dev_prep, config, 1);
    if (log)
      log({1, epoch, train_loss, dev_stats.loss, dev_stats.joint_ga});
    if (dev_stats.loss < best_loss) {
      best_loss = dev_stats.loss;
      best_snap = snapshot(model.params_const());
      best.epoch = epoch;
      best.dev_loss = dev_stats.loss;
      best.dev_joint_ga = dev_stats.joint_ga;
      since_best = 0;
    } else if (++since_best >= config.phase1_patience) {
      break;
    }
  }
  restore(model.params(), best_snap);
  for (const auto& t : model.params_const().tensors())
    if (!t->trainable) best.frozen.push_back(t->name);
  return best;
}

CheckpointMeta train_phase2(DsdnModel& model, const std::vector<Dialogue>& train,
                            const std::vector<Dialogue>& dev,
                            const TrainConfig& config, const LogSink& log) {
  config.validate();
  if (train.empty()) throw ArgumentError("train_phase2: empty train corpus");
  if (dev.empty()) throw ArgumentError("train_phase2: empty dev corpus");
  if (config.distillation_on) model.freeze_distillation();

  auto train_prep = prepare(train, model.schema());
  auto dev_prep = prepare(dev, model.schema());

  AdamOptimizer adam(model.params().mutable_tensors(), config.phase2_lr);
  std::mt19937_64 shuffle_rng(config.seed ^ 0xc2b2ae3d27d4eb4full);
  const long steps_per_epoch =
      (static_cast<long>(train.size()) + config.phase2_batch - 1) /
      config.phase2_batch;
  const long total_steps =
      std::max<long>(1, steps_per_epoch * config.phase2_epochs);

  CheckpointMeta best;
  best.phase = 2;
  best.schema_hash = model.schema().hash();
  {
    const DevStats initial = dev_eval(model, dev_prep, config, 2);
    best.dev_loss = initial.loss;
    best.dev_joint_ga = initial.joint_ga;
  }
  std::vector<Mat> best_snap = snapshot(model.params_const());

  for (int epoch = 1; epoch <= config.phase2_epochs; ++epoch) {
    const double train_loss =
        run_epoch(model, train_prep, adam, config, 2, total_steps, shuffle_rng);
    const DevStats dev_stats = dev_eval(model, dev_prep, config, 2);
    if (log)
      log({2, epoch, train_loss, dev_stats.loss, dev_stats.joint_ga});
    // >= so ties favor the later epoch: equal accuracy with more phase-2
    // optimization (value + contrastive) beats the untrained baseline.
    if (dev_stats.joint_ga >= best.dev_joint_ga) {
      best_snap = snapshot(model.params_const());
      best.epoch = epoch;
      best.dev_loss = dev_stats.loss;
      best.dev_joint_ga = dev_stats.joint_ga;
    }
  }
  restore(model.params(), best_snap);
  for (const auto& t : model.params_const().tensors())
    if (!t->trainable) best.frozen.push_back(t->name);
  return best;
}

double dev_joint_ga(DsdnModel& model, const std::vector<Dialogue>& dev) {
  long turns = 0, hits = 0;
  for (const auto& d : dev) {
    std::vector<State> pred = model.predict_dialogue(d);
    for (std::size_t t = 0; t < pred.size(); ++t) {
      ++turns;
      if (states_match(pred[t], d.turns[t].state)) ++hits;
    }
  }
  if (turns == 0) throw ArgumentError("dev_joint_ga: empty corpus");
  return static_cast<double>(hits) / static_cast<double>(turns);
}

std::string AblationReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows)
    rows_j.push_back({{"variant", r.variant},
                      {"dev_joint_ga_per_seed", r.dev_joint_ga_per_seed},
                      {"dev_joint_ga_mean", r.dev_joint_ga_mean},
                      {"reference_delta_multiwoz20", r.reference_delta_20},
                      {"reference_delta_multiwoz21", r.reference_delta_21}});
  return json{{"rows", rows_j}}.dump(2);
}

AblationReport run_ablation(const Schema& schema, const Vocabulary& vocab,
                            const std::vector<Dialogue>& train,
                            const std::vector<Dialogue>& dev,
                            const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ArgumentError("run_ablation: no seeds");
  struct VariantDef {
    std::string name;
    bool distillation;
    ClMode cl;
    double ref20, ref21;
  };
  const std::vector<VariantDef> variants = {
      {"full", true, ClMode::kContrastive, 0.0, 0.0},
      {"no_distillation", false, ClMode::kContrastive, -1.77, -1.97},
      {"no_contrastive", true, ClMode::kNone, -1.05, -0.66},
      {"neither", false, ClMode::kNone, -3.37, -3.15},
  };
  AblationReport report;
  for (const auto& v : variants) {
    AblationRow row;
    row.variant = v.name;
    row.reference_delta_20 = v.ref20;
    row.reference_delta_21 = v.ref21;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.distillation_on = v.distillation;
      cfg.cl_mode = v.cl;
      DsdnModel model(schema, vocab, cfg.model_config());
      train_phase1(model, train, dev, cfg);
      CheckpointMeta meta = train_phase2(model, train, dev, cfg);
      row.dev_joint_ga_per_seed.push_back(meta.dev_joint_ga);
    }
    row.dev_joint_ga_mean =
        std::accumulate(row.dev_joint_ga_per_seed.begin(),
                        row.dev_joint_ga_per_seed.end(), 0.0) /
        static_cast<double>(row.dev_joint_ga_per_seed.size());
    report.rows.push_back(std::move(row));
  }
  return report;
}

Vocabulary build_vocabulary(const std::vector<Dialogue>& dialogues) {
  Vocabulary vocab;
  for (const auto& d : dialogues)
    for (const auto& t : d.turns) {
      vocab.add_text(t.user);
      vocab.add_text(t.system);
    }
  return vocab;
}

}  // namespace dsdn
