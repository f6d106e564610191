#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "canht/core/plane.hpp"
#include "canht/raster/cube.hpp"

namespace canht::raster {

// Published response model: clear-sky reflectance of band b at a pixel is
//   base + mean_coef * (local 3x3 mean height / height_ref)
//        + std_coef  * (local 3x3 height stddev / stddev_ref)
//        + per-date offset + pixel noise, clamped to [0, 1].
// The coefficients are part of the generator contract so that analytic
// baselines can invert the model.
struct BandResponse {
  const char* id;
  double base;
  double mean_coef;
  double std_coef;
};

extern const std::array<BandResponse, 13> kBandResponses;

// Reflectance assigned to water pixels (before noise), per band.
extern const std::array<double, 13> kWaterReflectance;

struct HeightFieldParams {
  double correlation_length_px = 5.0;
  double max_height_m = 40.0;
};

struct TextureRule {
  double noise_sigma = 0.01;
  double date_offset_sigma = 0.005;
  double height_ref_m = 50.0;
  double stddev_ref_m = 10.0;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 256;
  int width = 256;
  int n_dates = 3;
  double cloud_coverage_fraction = 0.1;
  double water_fraction = 0.0;
  double snow_fraction = 0.0;
  HeightFieldParams height_field;
  TextureRule texture_rule;

  void validate() const;  // throws config_error
};

struct Scene {
  std::vector<RasterCube> cubes;  // one per date, chronological
  HeightMap heights;
};

// Deterministic: equal specs give byte-identical scenes. Cloud corruption
// blends reflectance toward a grey haze with strength growing in
// cloud_prob above the cloudy threshold; water pixels take kWaterReflectance,
// zero height, and invalid ground truth.
Scene generate_scene(const SceneSpec& spec);

// The per-date, per-band reflectance offsets the generator drew for `spec`,
// reproduced from the seed alone (no scene needed).
std::vector<std::array<double, 13>> scene_date_offsets(const SceneSpec& spec);

// 3x3 neighborhood statistics with shrinking windows at the borders
// (population standard deviation).
Plane<float> local_mean3(const Plane<float>& p);
Plane<float> local_std3(const Plane<float>& p);

}  // namespace canht::raster
