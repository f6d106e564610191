#include "canht/train/sampler.hpp"

#include <cmath>
#include <limits>

#include "canht/core/error.hpp"

namespace canht::train {

namespace {

// Inclusive-window cloudy-pixel counts via a summed-area table.
Plane<std::int32_t> integral_counts(const Plane<std::uint8_t>& mask) {
  Plane<std::int32_t> sat(mask.h + 1, mask.w + 1, 0);
  for (int y = 0; y < mask.h; ++y) {
    std::int32_t rowsum = 0;
    for (int x = 0; x < mask.w; ++x) {
      rowsum += mask.at(y, x);
      sat.at(y + 1, x + 1) = sat.at(y, x + 1) + rowsum;
    }
  }
  return sat;
}

std::int32_t window_count(const Plane<std::int32_t>& sat, int y0, int x0, int y1,
                          int x1) {
  // half-open [y0, y1) x [x0, x1)
  return sat.at(y1, x1) - sat.at(y0, x1) - sat.at(y1, x0) + sat.at(y0, x0);
}

}  // namespace

PatchSampler::PatchSampler(const std::vector<raster::RasterCube>& cubes,
                           const raster::HeightMap& heights,
                           const prep::NormStats& stats,
                           const prep::BandSubset& subset,
                           const Plane<std::uint8_t>* center_mask)
    : heights_(&heights) {
  if (cubes.empty()) throw data_error("patch sampler needs at least one cube");
  h_ = cubes.front().h;
  w_ = cubes.front().w;
  channels_ = static_cast<int>(subset.bands.size());
  if (heights.h() != h_ || heights.w() != w_)
    throw data_error("height map dimensions do not match the cubes");
  if (center_mask && (center_mask->h != h_ || center_mask->w != w_))
    throw data_error("center mask dimensions do not match the cubes");
  if (h_ < kPatchSize || w_ < kPatchSize)
    throw data_error("scene smaller than the patch size");

  constexpr int kHalf = kPatchSize / 2;  // 7
  constexpr std::int32_t kWindowPixels = kPatchSize * kPatchSize;

  for (std::size_t d = 0; d < cubes.size(); ++d) {
    const raster::RasterCube& cube = cubes[d];
    if (cube.h != h_ || cube.w != w_)
      throw data_error("cubes have mismatched dimensions across dates");
    nn::Tensor4<float> t = prep::select_bands(cube, subset);
    prep::normalize(t, stats);
    normalized_.push_back(std::move(t));

    const Plane<std::uint8_t> cloudy = prep::cloud_mask(cube.cloud_prob);
    const Plane<std::int32_t> sat = integral_counts(cloudy);

    for (int cy = kHalf; cy <= h_ - kHalf - 1; ++cy) {
      for (int cx = kHalf; cx <= w_ - kHalf - 1; ++cx) {
        if (!heights.valid.at(cy, cx)) continue;
        if (center_mask && !center_mask->at(cy, cx)) continue;
        const std::int32_t cloudy_count =
            window_count(sat, cy - kHalf, cx - kHalf, cy + kHalf + 1, cx + kHalf + 1);
        if (10 * cloudy_count >= kWindowPixels) continue;  // >= 10% cloudy
        eligible_.push_back({static_cast<std::int32_t>(d),
                             static_cast<std::int32_t>(cy),
                             static_cast<std::int32_t>(cx)});
      }
    }
  }
}

PatchBatch PatchSampler::sample(int n, Rng& rng) const {
  if (n < 1) throw config_error("batch size must be positive");
  if (eligible_.empty())
    throw data_error("no eligible patch centers (clouds or invalid ground truth)");
  constexpr int kHalf = kPatchSize / 2;
  PatchBatch batch;
  batch.inputs = nn::Tensor4<float>(n, channels_, kPatchSize, kPatchSize);
  batch.targets = nn::Tensor4<float>(n, 1, kPatchSize, kPatchSize);
  batch.target_valid = nn::Tensor4<std::uint8_t>(n, 1, kPatchSize, kPatchSize);

  for (int s = 0; s < n; ++s) {
    const Center c = eligible_[static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(eligible_.size())))];
    const nn::Tensor4<float>& full = normalized_[static_cast<std::size_t>(c.date)];
    for (int ch = 0; ch < channels_; ++ch) {
      const float* src = full.chan(0, ch);
      float* dst = batch.inputs.chan(s, ch);
      for (int py = 0; py < kPatchSize; ++py) {
        const int sy = c.y - kHalf + py;
        const float* srow = src + static_cast<std::int64_t>(sy) * w_ + (c.x - kHalf);
        float* drow = dst + static_cast<std::int64_t>(py) * kPatchSize;
        for (int px = 0; px < kPatchSize; ++px) drow[px] = srow[px];
      }
    }
    float* tdst = batch.targets.chan(s, 0);
    std::uint8_t* vdst = batch.target_valid.chan(s, 0);
    for (int py = 0; py < kPatchSize; ++py) {
      const int sy = c.y - kHalf + py;
      for (int px = 0; px < kPatchSize; ++px) {
        const int sx = c.x - kHalf + px;
        const float hv = heights_->heights.at(sy, sx);
        const bool ok = heights_->valid.at(sy, sx) != 0 && std::isfinite(hv);
        tdst[py * kPatchSize + px] = ok ? hv : std::numeric_limits<float>::quiet_NaN();
        vdst[py * kPatchSize + px] = ok ? 1 : 0;
      }
    }
  }
  return batch;
}

PatchBatch sample_patches(const std::vector<raster::RasterCube>& cubes,
                          const raster::HeightMap& heights,
                          const prep::NormStats& stats,
                          const prep::BandSubset& subset, int n, Rng& rng) {
  PatchSampler sampler(cubes, heights, stats, subset);
  return sampler.sample(n, rng);
}

}  // namespace canht::train
