#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "canht/model/checkpoint.hpp"
#include "canht/net/network.hpp"
#include "canht/prep/preprocess.hpp"
#include "canht/raster/cube.hpp"
#include "canht/train/adam.hpp"
#include "canht/train/sampler.hpp"

namespace canht::train {

struct TrainConfig {
  double base_lr = 1e-4;
  int batch_size = 36;
  double weight_decay = 0.0;  // lambda in the loss penalty
  std::int64_t max_iterations = 10000;
  int val_every = 500;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;   // right-hand column share held out
  int val_patch_count = 2000;  // fixed validation set size

  void validate() const;  // throws config_error
};

struct CurveRow {
  std::int64_t iteration = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool has_val = false;
};

// Column-disjoint train/validation regions: training windows live strictly
// left of split_col, validation windows strictly right of (or at) it. The
// masks flag admissible patch *centers*, placed so whole 15x15 windows stay
// inside their region.
struct SplitMasks {
  Plane<std::uint8_t> train_centers;
  Plane<std::uint8_t> val_centers;
  int split_col = 0;
};

SplitMasks make_column_split(int h, int w, double val_fraction);

struct TrainOutcome {
  net::Network<float> last;          // parameters after the final iteration
  net::Network<float> best;          // lowest-validation-loss parameters
  bool best_updated = false;         // whether `best` improved during this run
  AdamState<float> adam;             // optimizer state after the final iteration
  model::TrainMeta meta;
  std::vector<CurveRow> curves;
};

// Runs `cfg.max_iterations - start_iteration` updates (none if already
// complete). Validation runs every val_every iterations and at the final
// iteration, on a fixed patch set drawn once from the held-out columns.
// Samplers are re-seeded from (cfg.seed, start_iteration) so resumed runs are
// deterministic functions of their checkpoint. `on_progress`, when given, is
// called after every iteration with the curve row just produced.
TrainOutcome run_training(
    net::Network<float> model, const std::vector<raster::RasterCube>& cubes,
    const raster::HeightMap& heights, const prep::NormStats& stats,
    const prep::BandSubset& subset, const TrainConfig& cfg,
    std::int64_t start_iteration = 0, AdamState<float>* resume_adam = nullptr,
    const model::TrainMeta* resume_meta = nullptr,
    const std::function<void(const CurveRow&)>& on_progress = nullptr);

}  // namespace canht::train
