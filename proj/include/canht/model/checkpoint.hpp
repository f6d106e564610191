#pragma once

#include <optional>
#include <string>

#include "canht/net/network.hpp"
#include "canht/prep/preprocess.hpp"
#include "canht/train/adam.hpp"

namespace canht::model {

struct TrainMeta {
  std::int64_t iteration = 0;       // iterations completed
  std::int64_t best_iteration = -1;
  double best_val_loss = std::numeric_limits<double>::quiet_NaN();
};

// Everything needed to resume or deploy: architecture config, every tensor
// (including batchnorm running statistics), the frozen normalization
// statistics with their band subset, training progress, and optionally the
// optimizer moments for exact resumption.
struct Checkpoint {
  net::Network<float> model;
  prep::BandSubset subset;
  prep::NormStats stats;
  TrainMeta meta;
  std::optional<train::AdamState<float>> adam;
};

// Binary container: magic "CHKP", version, JSON directory, then raw payloads
// (float32 for model tensors, float64 for optimizer moments). Round-trips are
// bit-exact. Malformed files throw parse_error; a directory that disagrees
// with the architecture config throws data_error.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace canht::model
