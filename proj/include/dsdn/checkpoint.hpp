#ifndef DSDN_CHECKPOINT_HPP
#define DSDN_CHECKPOINT_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dsdn/model.hpp"

namespace dsdn {

struct CheckpointMeta {
  int phase = 1;
  int epoch = 0;
  double dev_loss = 0.0;
  double dev_joint_ga = 0.0;
  std::uint64_t schema_hash = 0;
  std::vector<std::string> frozen;  // non-trainable tensor names
};

// Single-file archive: JSON header (schema, vocabulary, model config, meta)
// followed by name -> shape + row-major float64 payloads. Writes are atomic
// (temp file + rename).
void save_checkpoint(const std::string& path, const DsdnModel& model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  std::unique_ptr<DsdnModel> model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace dsdn

#endif  // DSDN_CHECKPOINT_HPP
