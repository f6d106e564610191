#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "canht/raster/cube.hpp"

namespace canht::eval {

// All metrics pool the pixels where BOTH prediction and reference are valid,
// accumulate in double, and throw data_error when that intersection is empty.

double mae(const raster::HeightMap& pred, const raster::HeightMap& ref);
double rmse(const raster::HeightMap& pred, const raster::HeightMap& ref);

// MAE within left-closed reference-height bins [k*w, (k+1)*w). Only bins with
// at least one pixel are returned, in ascending order.
struct BinStat {
  double lo = 0.0, hi = 0.0;
  double mae = 0.0;
  std::int64_t count = 0;
};

std::vector<BinStat> binned_mae(const raster::HeightMap& pred,
                                const raster::HeightMap& ref,
                                double bin_width = 10.0);

// Copy of `ref` with pixels at or above max_height invalidated, plus how many
// were removed.
struct FilterResult {
  raster::HeightMap filtered;
  std::int64_t removed = 0;
};

FilterResult filter_reference(const raster::HeightMap& ref,
                              double max_height = 40.0);

// Joint histogram over (reference bin, prediction bin) with left-closed bins
// of `bin_width` metres. Sparse: only non-empty cells, keyed by bin indices.
using ConfusionHist = std::map<std::pair<int, int>, std::int64_t>;

ConfusionHist confusion_hist(const raster::HeightMap& pred,
                             const raster::HeightMap& ref, double bin_width = 1.0);

// Fraction of valid pixels strictly below k*step for k = 1..K, where K is the
// smallest count whose last threshold covers the maximum value.
std::vector<std::pair<double, double>> cumulative_distribution(
    const raster::HeightMap& map, double step = 1.0);

struct EvalReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::int64_t n_pixels = 0;
  std::vector<BinStat> bins;
  ConfusionHist confusion;
  std::vector<std::pair<double, double>> cumulative;  // of the prediction
};

EvalReport evaluate(const raster::HeightMap& pred, const raster::HeightMap& ref,
                    double bin_width = 10.0, double confusion_bin = 1.0,
                    double cumulative_step = 1.0);

}  // namespace canht::eval
