#pragma once

#include <string>
#include <vector>

#include "canht/core/plane.hpp"
#include "canht/nn/tensor.hpp"
#include "canht/raster/cube.hpp"

namespace canht::prep {

// Named input-channel selections used throughout training, inference and the
// ablation study.
struct BandSubset {
  std::string name;
  std::vector<std::string> bands;

  // Resolves ALL, RGB, N, RGBN, woRGBN (case-sensitive). Throws config_error
  // for anything else.
  static BandSubset resolve(const std::string& name);
  static const std::vector<std::string>& known_names();
};

// Per-band normalization statistics (population standard deviation),
// estimated once from training data and frozen thereafter.
struct NormStats {
  std::vector<std::string> band_ids;
  std::vector<double> mean;
  std::vector<double> stddev;

  int index_of(const std::string& id) const;  // -1 if absent
};

// Means/stddevs per band over every pixel of every cube (optionally
// restricted to rows of `pixel_mask` that are non-zero). Cloudy pixels
// (cloud_prob > 10) are excluded so haze does not skew the statistics.
// Throws data_error if a requested band is missing or no pixels qualify.
NormStats compute_norm_stats(const std::vector<raster::RasterCube>& cubes,
                             const BandSubset& subset,
                             const Plane<std::uint8_t>* pixel_mask = nullptr);

// Stacks the subset's bands (in subset order) into a (1, C, H, W) tensor.
nn::Tensor4<float> select_bands(const raster::RasterCube& cube,
                                const BandSubset& subset);

// In-place (x - mean) / stddev per channel; channel order must match stats.
void normalize(nn::Tensor4<float>& bands, const NormStats& stats);

// Integer-factor bilinear upsampling with half-pixel alignment:
// src coordinate = (dst + 0.5) / factor - 0.5, clamped to the source grid.
Plane<float> upsample_bilinear(const Plane<float>& src, int factor);

// 1 where cloud_prob > 10 (strict), else 0. Throws data_error if any value
// falls outside [0, 100].
Plane<std::uint8_t> cloud_mask(const Plane<float>& cloud_prob);

inline constexpr double kCloudyThreshold = 10.0;

}  // namespace canht::prep
