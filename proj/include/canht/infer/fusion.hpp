#pragma once

#include <string>
#include <vector>

#include "canht/core/plane.hpp"
#include "canht/raster/cube.hpp"

namespace canht::infer {

// One date's prediction with the per-pixel context needed for fusion.
struct DatePrediction {
  raster::HeightMap pred;
  Plane<float> cloud_prob;
  Plane<std::uint8_t> landcover;
  std::string acquisition_date;  // YYYY-MM-DD
};

struct PredictionStack {
  std::vector<DatePrediction> dates;

  // All grids equal-sized, dates unique; throws data_error otherwise.
  void validate() const;
};

// Per-pixel median over the dates where the prediction is valid; an even
// count takes the mean of the two central values. Pixels valid nowhere stay
// invalid (NaN).
raster::HeightMap fuse_median(const PredictionStack& stack);

// Per-pixel pick of the date with the lowest cloud probability among dates
// with a valid prediction; ties go to the earliest date.
raster::HeightMap fuse_min_cloud(const PredictionStack& stack);

// Per-date MAE against a reference, plus their mean and sample standard
// deviation (n-1): the date-to-date stability of single-date maps. Requires
// at least two dates.
struct DateSpread {
  std::vector<double> per_date_mae;
  double mean = 0.0;
  double sd = 0.0;
};

DateSpread per_date_spread(const PredictionStack& stack,
                           const raster::HeightMap& ref);

// Same statistic over bare per-date maps (chronology = list order).
DateSpread per_date_spread(const std::vector<raster::HeightMap>& preds,
                           const raster::HeightMap& ref);

}  // namespace canht::infer
