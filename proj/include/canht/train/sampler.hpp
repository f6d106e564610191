#pragma once

#include <cstdint>
#include <vector>

#include "canht/core/plane.hpp"
#include "canht/core/rng.hpp"
#include "canht/nn/tensor.hpp"
#include "canht/prep/preprocess.hpp"
#include "canht/raster/cube.hpp"

namespace canht::train {

// A minibatch of fixed-size patches: normalized band stacks, height targets,
// and a per-pixel target validity mask. Every patch center has a valid
// target by construction.
struct PatchBatch {
  nn::Tensor4<float> inputs;               // (n, C, 15, 15)
  nn::Tensor4<float> targets;              // (n, 1, 15, 15)
  nn::Tensor4<std::uint8_t> target_valid;  // (n, 1, 15, 15)
};

// Uniform sampler over eligible (date, center) triples. A center (cy, cx) on
// date d is eligible when:
//   - the 15x15 window fits entirely inside the image
//     (7 <= cy <= H-8, 7 <= cx <= W-8),
//   - the ground-truth height at the center is valid,
//   - the optional center mask admits (cy, cx),
//   - strictly less than 10% of the window's pixels are cloudy
//     (cloudy = cloud_prob > 10; the 10% test is exact integer arithmetic:
//     reject iff 10 * cloudy_count >= window_pixels).
class PatchSampler {
 public:
  static constexpr int kPatchSize = 15;

  PatchSampler(const std::vector<raster::RasterCube>& cubes,
               const raster::HeightMap& heights, const prep::NormStats& stats,
               const prep::BandSubset& subset,
               const Plane<std::uint8_t>* center_mask = nullptr);

  std::int64_t eligible_count() const { return static_cast<std::int64_t>(eligible_.size()); }

  // Draws n patches independently and uniformly (with replacement).
  PatchBatch sample(int n, Rng& rng) const;

 private:
  struct Center {
    std::int32_t date, y, x;
  };

  std::vector<nn::Tensor4<float>> normalized_;  // one (1,C,H,W) per date
  const raster::HeightMap* heights_;
  std::vector<Center> eligible_;
  int h_ = 0, w_ = 0, channels_ = 0;
};

// Convenience wrapper: builds a sampler over the full scene and draws one
// batch.
PatchBatch sample_patches(const std::vector<raster::RasterCube>& cubes,
                          const raster::HeightMap& heights,
                          const prep::NormStats& stats,
                          const prep::BandSubset& subset, int n, Rng& rng);

}  // namespace canht::train
