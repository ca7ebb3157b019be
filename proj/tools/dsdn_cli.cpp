// Command-line front end: corpus generation, two-phase training, prediction,
// evaluation, and the ablation grid.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dsdn/checkpoint.hpp"
#include "dsdn/corpus.hpp"
#include "dsdn/errors.hpp"
#include "dsdn/evaluation.hpp"
#include "dsdn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dsdn;

namespace {

bool verbose_logging() {
  const char* level = std::getenv("DSDN_LOG");
  return !(level && std::string(level) == "quiet");
}

std::vector<std::pair<std::string, std::string>> parse_coupdate(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    const auto comma = item.find(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 == item.size())
      throw ArgumentError("bad --coupdate entry '" + item +
                          "', expected \"slot-a,slot-b\"");
    pairs.emplace_back(item.substr(0, comma), item.substr(comma + 1));
  }
  return pairs;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write file: " + path);
  out << text;
}

int cmd_generate(const std::string& schema_path, const std::string& out_path,
                 int n, std::uint64_t seed, const std::string& coupdate) {
  if (n <= 0) throw ArgumentError("--n must be a positive dialogue count");
  Schema schema = load_schema_json(schema_path);
  SyntheticOptions opts;
  opts.n_dialogues = n;
  opts.seed = seed;
  opts.coupdate_pairs = parse_coupdate(coupdate);
  for (const auto& [a, b] : opts.coupdate_pairs)
    if (schema.slot_index(a) < 0 || schema.slot_index(b) < 0)
      throw ArgumentError("--coupdate references unknown slot: " + a + "," + b);

  std::vector<Dialogue> corpus = generate_synthetic_corpus(schema, opts);
  save_dialogues_jsonl(out_path, corpus);

  json rates = json::object();
  for (const auto& [a, b] : opts.coupdate_pairs)
    rates[a + "|" + b] = coupdate_rate(corpus, schema, a, b);
  long turns = 0;
  for (const auto& d : corpus) turns += static_cast<long>(d.turns.size());
  json manifest{{"seed", seed},
                {"n_dialogues", n},
                {"n_turns", turns},
                {"schema_hash", schema.hash()},
                {"coupdate_rates", rates}};
  write_text(out_path + ".manifest.json", manifest.dump(2) + "\n");
  return 0;
}

LogSink epoch_logger(std::ofstream& log_file) {
  return [&log_file](const EpochLog& l) {
    log_file << l.to_json() << '\n';
    log_file.flush();
    if (verbose_logging()) std::cerr << l.to_json() << '\n';
  };
}

int cmd_train(const std::string& config_path, const std::string& schema_path,
              const std::string& train_path, const std::string& dev_path,
              const std::string& out_dir, const std::string& cl_mode_flag,
              bool no_distillation) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{}
                                        : TrainConfig::from_file(config_path);
  if (!cl_mode_flag.empty()) cfg.cl_mode = cl_mode_from_name(cl_mode_flag);
  if (no_distillation) cfg.distillation_on = false;
  cfg.validate();

  Schema schema = load_schema_json(schema_path);
  std::vector<Dialogue> train = load_dialogues_jsonl(train_path, schema);
  std::vector<Dialogue> dev = load_dialogues_jsonl(dev_path, schema);
  if (train.empty()) throw ArgumentError("empty training corpus: " + train_path);
  if (dev.empty()) throw ArgumentError("empty dev corpus: " + dev_path);

  fs::create_directories(out_dir);
  std::ofstream log_file(out_dir + "/train_log.jsonl");
  if (!log_file) throw IoError("cannot write training log in " + out_dir);
  LogSink sink = epoch_logger(log_file);

  std::vector<Dialogue> all = train;
  all.insert(all.end(), dev.begin(), dev.end());
  Vocabulary vocab = build_vocabulary(all);
  DsdnModel model(schema, vocab, cfg.model_config());

  CheckpointMeta p1 = train_phase1(model, train, dev, cfg, sink);
  save_checkpoint(out_dir + "/phase1.ckpt", model, p1);
  CheckpointMeta p2 = train_phase2(model, train, dev, cfg, sink);
  save_checkpoint(out_dir + "/phase2.ckpt", model, p2);

  json summary{{"phase1_epoch", p1.epoch},
               {"phase1_dev_loss", p1.dev_loss},
               {"phase2_epoch", p2.epoch},
               {"phase2_dev_joint_ga", p2.dev_joint_ga}};
  std::cout << summary.dump(2) << '\n';
  return 0;
}

void check_schema_compat(const DsdnModel& model, const std::string& schema_path) {
  if (schema_path.empty()) return;
  Schema schema = load_schema_json(schema_path);
  if (schema.hash() != model.schema().hash())
    throw CheckpointError("schema hash mismatch: checkpoint was trained on a "
                          "different ontology than " + schema_path);
}

int cmd_predict(const std::string& ckpt_path, const std::string& data_path,
                const std::string& out_path, const std::string& schema_path) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  check_schema_compat(*ckpt.model, schema_path);
  Schema schema = ckpt.model->schema();
  std::vector<Dialogue> data = load_dialogues_jsonl(data_path, schema);

  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write predictions: " + out_path);
  ForwardOptions opts;
  opts.need_cl = false;
  for (const auto& d : data) {
    std::vector<State> states = ckpt.model->predict_dialogue(d);
    // SOP bits come from the teacher head over the gold previous states in
    // the input file; value predictions above consume no gold states.
    SopLabelMatrix labels = derive_sop_labels(d, schema);
    ad::Tape tape(false);
    DialogueForward fwd = ckpt.model->forward(tape, d, labels, opts);
    for (std::size_t t = 0; t < states.size(); ++t) {
      json st = json::object(), sop = json::object();
      for (const auto& [k, v] : states[t]) st[k] = v;
      for (int j = 0; j < schema.size(); ++j)
        sop[schema.slot(j).name] =
            fwd.sop_probs.rows() > 0 &&
                    fwd.sop_probs(j, static_cast<Eigen::Index>(t)) >= 0.5
                ? 1
                : 0;
      out << json{{"id", d.id},
                  {"turn", static_cast<int>(t) + 1},
                  {"state", st},
                  {"sop", sop}}
                 .dump()
          << '\n';
    }
  }
  return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& data_path,
                 const std::string& out_path, const std::string& schema_path,
                 const std::string& report_format) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  check_schema_compat(*ckpt.model, schema_path);
  Schema schema = ckpt.model->schema();
  std::vector<Dialogue> data = load_dialogues_jsonl(data_path, schema);
  if (data.empty()) throw ArgumentError("empty evaluation corpus: " + data_path);

  StateMap preds;
  SopMap sop_preds;
  ForwardOptions opts;
  opts.need_cl = false;
  for (const auto& d : data) {
    std::vector<State> states = ckpt.model->predict_dialogue(d);
    SopLabelMatrix labels = derive_sop_labels(d, schema);
    ad::Tape tape(false);
    DialogueForward fwd = ckpt.model->forward(tape, d, labels, opts);
    for (std::size_t t = 0; t < states.size(); ++t) {
      const TurnKey key{d.id, static_cast<int>(t) + 1};
      preds[key] = states[t];
      SopBits bits;
      for (int j = 0; j < schema.size(); ++j)
        bits[schema.slot(j).name] =
            fwd.sop_probs(j, static_cast<Eigen::Index>(t)) >= 0.5 ? 1 : 0;
      sop_preds[key] = std::move(bits);
    }
  }
  StateMap golds = gold_state_map(data);
  SopMap sop_golds = gold_sop_map(data, schema);
  EvalReport report = build_report(preds, golds, &sop_preds, &sop_golds);
  write_text(out_path, report.to_json() + "\n");
  if (report_format == "csv") {
    write_text(out_path + ".csv", report.per_turn_csv());
    std::cout << report.per_turn_csv();
  } else {
    std::cout << report.to_json() << '\n';
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& schema_path,
               const std::string& train_path, const std::string& dev_path,
               const std::string& seeds_flag, const std::string& out_path) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{}
                                        : TrainConfig::from_file(config_path);
  Schema schema = load_schema_json(schema_path);
  std::vector<Dialogue> train = load_dialogues_jsonl(train_path, schema);
  std::vector<Dialogue> dev = load_dialogues_jsonl(dev_path, schema);

  std::vector<std::uint64_t> seeds;
  std::stringstream ss(seeds_flag);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) seeds.push_back(std::stoull(item));
  if (seeds.empty()) throw ArgumentError("--seeds lists no seeds");

  std::vector<Dialogue> all = train;
  all.insert(all.end(), dev.begin(), dev.end());
  Vocabulary vocab = build_vocabulary(all);
  AblationReport report = run_ablation(schema, vocab, train, dev, cfg, seeds);
  write_text(out_path, report.to_json() + "\n");
  std::cout << report.to_json() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dialogue state tracking with teacher-student distillation "
               "and inter-slot contrastive learning"};
  app.require_subcommand(1);

  std::string schema_path, out_path, coupdate, config_path, train_path,
      dev_path, ckpt_path, data_path, cl_mode_flag, seeds_flag = "1,2,3",
      report_format = "json";
  int n = 0;
  std::uint64_t seed = 1;
  bool no_distillation = false;

  auto* gen = app.add_subcommand("generate-corpus",
                                 "write a synthetic dialogue corpus");
  gen->add_option("--schema", schema_path)->required();
  gen->add_option("--out", out_path)->required();
  gen->add_option("--n", n)->required();
  gen->add_option("--seed", seed);
  gen->add_option("--coupdate", coupdate,
                  "co-updating slot pairs, e.g. \"a-x,a-y;b-z,b-w\"");

  auto* train = app.add_subcommand("train", "two-phase training run");
  train->add_option("--config", config_path);
  train->add_option("--schema", schema_path)->required();
  train->add_option("--train", train_path)->required();
  train->add_option("--dev", dev_path)->required();
  train->add_option("--out", out_path)->required();
  train->add_option("--cl-mode", cl_mode_flag,
                    "none|cross_entropy|contrastive_minus|contrastive");
  train->add_flag("--no-distillation", no_distillation);

  auto* predict = app.add_subcommand("predict", "dump per-turn predictions");
  predict->add_option("--checkpoint", ckpt_path)->required();
  predict->add_option("--data", data_path)->required();
  predict->add_option("--out", out_path)->required();
  predict->add_option("--schema", schema_path);

  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint");
  evaluate->add_option("--checkpoint", ckpt_path)->required();
  evaluate->add_option("--data", data_path)->required();
  evaluate->add_option("--out", out_path)->required();
  evaluate->add_option("--schema", schema_path);
  evaluate->add_option("--report", report_format, "json|csv");

  auto* ablate = app.add_subcommand("ablate", "train the four-variant grid");
  ablate->add_option("--config", config_path);
  ablate->add_option("--schema", schema_path)->required();
  ablate->add_option("--train", train_path)->required();
  ablate->add_option("--dev", dev_path)->required();
  ablate->add_option("--seeds", seeds_flag);
  ablate->add_option("--out", out_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_generate(schema_path, out_path, n, seed, coupdate);
    if (train->parsed())
      return cmd_train(config_path, schema_path, train_path, dev_path,
                       out_path, cl_mode_flag, no_distillation);
    if (predict->parsed())
      return cmd_predict(ckpt_path, data_path, out_path, schema_path);
    if (evaluate->parsed())
      return cmd_evaluate(ckpt_path, data_path, out_path, schema_path,
                          report_format);
    if (ablate->parsed())
      return cmd_ablate(config_path, schema_path, train_path, dev_path,
                        seeds_flag, out_path);
  } catch (const Error& e) {
    std::cerr << json{{"error", e.category_name()}, {"message", e.what()}}.dump()
              << '\n';
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump()
              << '\n';
    return 1;
  }
  return 1;
}
