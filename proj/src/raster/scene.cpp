#include "canht/raster/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "canht/core/error.hpp"
#include "canht/core/rng.hpp"

namespace canht::raster {

// Vaguely optical-satellite-like: dense vegetation darkens the visible bands
// and brightens the near-infrared, with B08 carrying the strongest height
// signal. Distinct (mean_coef, std_coef) pairs keep the response matrix well
// conditioned for least-squares inversion.
const std::array<BandResponse, 13> kBandResponses = {{
    {"B01", 0.12, -0.02, 0.01},
    {"B02", 0.10, -0.04, 0.02},
    {"B03", 0.12, -0.05, 0.03},
    {"B04", 0.11, -0.07, 0.03},
    {"B05", 0.16, 0.05, 0.04},
    {"B06", 0.22, 0.15, 0.05},
    {"B07", 0.25, 0.20, 0.06},
    {"B08", 0.28, 0.35, 0.10},
    {"B8A", 0.30, 0.25, 0.08},
    {"B09", 0.35, 0.05, 0.02},
    {"B10", 0.05, 0.01, 0.01},
    {"B11", 0.25, -0.12, 0.06},
    {"B12", 0.20, -0.10, 0.05},
}};

// Dark everywhere, darkest in the near-infrared.
const std::array<double, 13> kWaterReflectance = {
    0.08, 0.07, 0.06, 0.05, 0.04, 0.035, 0.03,
    0.025, 0.025, 0.02, 0.01, 0.015, 0.012};

void SceneSpec::validate() const {
  if (height < 32 || width < 32)
    throw config_error("scene must be at least 32x32 pixels");
  if (static_cast<std::int64_t>(height) * width > (std::int64_t(1) << 26))
    throw config_error("scene dimensions exceed the supported size");
  if (n_dates < 1 || n_dates > 16)
    throw config_error("n_dates must be in [1, 16]");
  if (!(cloud_coverage_fraction >= 0.0 && cloud_coverage_fraction < 1.0))
    throw config_error("cloud_coverage_fraction must be in [0, 1)");
  if (!(water_fraction >= 0.0 && water_fraction < 1.0))
    throw config_error("water_fraction must be in [0, 1)");
  if (!(snow_fraction >= 0.0 && snow_fraction < 1.0))
    throw config_error("snow_fraction must be in [0, 1)");
  if (!(height_field.correlation_length_px >= 1.0))
    throw config_error("correlation_length_px must be at least 1");
  if (!(height_field.max_height_m >= 0.0 && height_field.max_height_m <= 200.0))
    throw config_error("max_height_m must be in [0, 200]");
  if (!(texture_rule.noise_sigma >= 0.0) || !(texture_rule.date_offset_sigma >= 0.0))
    throw config_error("noise sigmas must be non-negative");
  if (!(texture_rule.height_ref_m > 0.0) || !(texture_rule.stddev_ref_m > 0.0))
    throw config_error("texture reference scales must be positive");
}

namespace {

// Box blur with shrinking windows at the borders; several passes approximate
// a Gaussian. Separable, O(N) per pass via running sums.
void box_blur(Plane<double>& p, int radius, int passes) {
  if (radius < 1) return;
  Plane<double> tmp(p.h, p.w);
  for (int pass = 0; pass < passes; ++pass) {
    // horizontal
    for (int y = 0; y < p.h; ++y) {
      const double* src = p.row(y);
      double* dst = tmp.row(y);
      double run = 0.0;
      int lo = 0, hi = -1;  // inclusive window [lo, hi]
      for (int x = 0; x < p.w; ++x) {
        const int nlo = std::max(0, x - radius);
        const int nhi = std::min(p.w - 1, x + radius);
        while (hi < nhi) run += src[++hi];
        while (lo < nlo) run -= src[lo++];
        dst[x] = run / (nhi - nlo + 1);
      }
    }
    // vertical
    for (int x = 0; x < p.w; ++x) {
      double run = 0.0;
      int lo = 0, hi = -1;
      for (int y = 0; y < p.h; ++y) {
        const int nlo = std::max(0, y - radius);
        const int nhi = std::min(p.h - 1, y + radius);
        while (hi < nhi) run += tmp.at(++hi, x);
        while (lo < nlo) run -= tmp.at(lo++, x);
        p.at(y, x) = run / (nhi - nlo + 1);
      }
    }
  }
}

// White noise, blurred to the requested correlation length, standardized to
// zero mean / unit variance over the plane.
Plane<double> smooth_field(int h, int w, double corr_len, Rng& rng) {
  Plane<double> f(h, w);
  for (double& v : f.v) v = rng.normal();
  const int radius = std::max(1, static_cast<int>(std::lround(corr_len / 2.0)));
  box_blur(f, radius, 3);
  double mean = 0.0;
  for (double v : f.v) mean += v;
  mean /= static_cast<double>(f.size());
  double var = 0.0;
  for (double v : f.v) var += (v - mean) * (v - mean);
  var /= static_cast<double>(f.size());
  const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
  for (double& v : f.v) v = (v - mean) * inv;
  return f;
}

// Mask covering ~fraction of the plane: the highest-valued pixels of a fresh
// smooth field.
Plane<std::uint8_t> fraction_mask(int h, int w, double fraction, double corr_len,
                                  Rng& rng) {
  Plane<std::uint8_t> mask(h, w, 0);
  if (fraction <= 0.0) return mask;
  Plane<double> f = smooth_field(h, w, corr_len, rng);
  std::vector<double> sorted(f.v);
  std::sort(sorted.begin(), sorted.end());
  const std::size_t idx = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(sorted.size() - 1),
                       std::floor((1.0 - fraction) * static_cast<double>(sorted.size()))));
  const double thresh = sorted[idx];
  for (std::int64_t i = 0; i < f.size(); ++i)
    mask.v[static_cast<std::size_t>(i)] = f.v[static_cast<std::size_t>(i)] > thresh ? 1 : 0;
  return mask;
}

std::string date_string(int index) {
  // Twelve-day revisit starting 2017-06-01; n_dates <= 16 keeps us in-year.
  const int serial = index * 12;
  const int month = std::min(6 + serial / 30, 12);
  const int day = std::min(1 + serial % 30, 28);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "2017-%02d-%02d", month, day);
  return std::string(buf);
}

}  // namespace

std::vector<std::array<double, 13>> scene_date_offsets(const SceneSpec& spec) {
  std::vector<std::array<double, 13>> offsets;
  offsets.reserve(static_cast<std::size_t>(spec.n_dates));
  for (int d = 0; d < spec.n_dates; ++d) {
    Rng rng(derive_seed(spec.seed, "date_offset", static_cast<std::uint64_t>(d)));
    std::array<double, 13> o{};
    for (double& v : o) v = rng.normal(0.0, spec.texture_rule.date_offset_sigma);
    offsets.push_back(o);
  }
  return offsets;
}

Plane<float> local_mean3(const Plane<float>& p) {
  Plane<float> out(p.h, p.w);
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < p.w; ++x) {
      double s = 0.0;
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        const int sy = y + dy;
        if (sy < 0 || sy >= p.h) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = x + dx;
          if (sx < 0 || sx >= p.w) continue;
          s += static_cast<double>(p.at(sy, sx));
          ++n;
        }
      }
      out.at(y, x) = static_cast<float>(s / n);
    }
  }
  return out;
}

Plane<float> local_std3(const Plane<float>& p) {
  Plane<float> out(p.h, p.w);
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < p.w; ++x) {
      double s = 0.0, s2 = 0.0;
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        const int sy = y + dy;
        if (sy < 0 || sy >= p.h) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = x + dx;
          if (sx < 0 || sx >= p.w) continue;
          const double v = static_cast<double>(p.at(sy, sx));
          s += v;
          s2 += v * v;
          ++n;
        }
      }
      const double mean = s / n;
      double var = s2 / n - mean * mean;
      if (var < 0.0) var = 0.0;
      out.at(y, x) = static_cast<float>(std::sqrt(var));
    }
  }
  return out;
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const int h = spec.height, w = spec.width;

  // Terrain: smooth latent field mapped affinely into [0, max_height].
  Rng height_rng(derive_seed(spec.seed, "height"));
  Plane<double> latent =
      smooth_field(h, w, spec.height_field.correlation_length_px, height_rng);
  const double max_h = spec.height_field.max_height_m;
  Plane<float> heights(h, w);
  for (std::int64_t i = 0; i < heights.size(); ++i) {
    const double v = max_h * (0.45 + 0.30 * latent.v[static_cast<std::size_t>(i)]);
    heights.v[static_cast<std::size_t>(i)] =
        static_cast<float>(std::clamp(v, 0.0, max_h));
  }

  Rng water_rng(derive_seed(spec.seed, "water"));
  const Plane<std::uint8_t> water =
      fraction_mask(h, w, spec.water_fraction, 8.0, water_rng);
  Rng snow_rng(derive_seed(spec.seed, "snow"));
  const Plane<std::uint8_t> snow =
      fraction_mask(h, w, spec.snow_fraction, 8.0, snow_rng);

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (water.at(y, x)) heights.at(y, x) = 0.0f;

  const Plane<float> mean3 = local_mean3(heights);
  const Plane<float> std3 = local_std3(heights);

  const std::vector<std::array<double, 13>> offsets = scene_date_offsets(spec);

  Scene scene;
  scene.heights.heights = heights;
  scene.heights.valid = Plane<std::uint8_t>(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (water.at(y, x)) scene.heights.valid.at(y, x) = 0;

  for (int d = 0; d < spec.n_dates; ++d) {
    RasterCube cube;
    cube.h = h;
    cube.w = w;
    cube.gsd_m = 10.0;
    cube.acquisition_date = date_string(d);
    cube.band_ids.assign(kBandLabels.begin(), kBandLabels.end());
    cube.landcover = Plane<std::uint8_t>(h, w, static_cast<std::uint8_t>(Landcover::vegetation));
    cube.valid = Plane<std::uint8_t>(h, w, 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (water.at(y, x))
          cube.landcover.at(y, x) = static_cast<std::uint8_t>(Landcover::water);
        else if (snow.at(y, x))
          cube.landcover.at(y, x) = static_cast<std::uint8_t>(Landcover::snow);
      }
    }

    // Cloud probability: smooth field, percentile-thresholded so that the
    // cloudy share (prob > 10) approximates the requested coverage.
    Rng cloud_rng(derive_seed(spec.seed, "clouds", static_cast<std::uint64_t>(d)));
    Plane<double> cfield = smooth_field(h, w, 12.0, cloud_rng);
    cube.cloud_prob = Plane<float>(h, w, 0.0f);
    {
      std::vector<double> sorted(cfield.v);
      std::sort(sorted.begin(), sorted.end());
      const std::size_t n = sorted.size();
      const std::size_t idx = static_cast<std::size_t>(std::min<double>(
          static_cast<double>(n - 1),
          std::floor((1.0 - spec.cloud_coverage_fraction) * static_cast<double>(n))));
      const double t = sorted[idx];
      const double lo = sorted.front(), hi = sorted.back();
      for (std::int64_t i = 0; i < cfield.size(); ++i) {
        const double g = cfield.v[static_cast<std::size_t>(i)];
        double prob;
        if (g <= t) {
          prob = t > lo ? 10.0 * (g - lo) / (t - lo) : 0.0;
        } else {
          prob = hi > t ? 10.0 + 90.0 * (g - t) / (hi - t) : 100.0;
        }
        cube.cloud_prob.v[static_cast<std::size_t>(i)] =
            static_cast<float>(std::clamp(prob, 0.0, 100.0));
      }
    }

    Rng noise_rng(derive_seed(spec.seed, "noise", static_cast<std::uint64_t>(d)));
    cube.bands.assign(13, Plane<float>(h, w));
    for (int b = 0; b < 13; ++b) {
      const BandResponse& resp = kBandResponses[static_cast<std::size_t>(b)];
      Plane<float>& plane = cube.bands[static_cast<std::size_t>(b)];
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double r;
          if (water.at(y, x)) {
            r = kWaterReflectance[static_cast<std::size_t>(b)];
          } else {
            r = resp.base +
                resp.mean_coef * (static_cast<double>(mean3.at(y, x)) /
                                  spec.texture_rule.height_ref_m) +
                resp.std_coef * (static_cast<double>(std3.at(y, x)) /
                                 spec.texture_rule.stddev_ref_m);
            if (snow.at(y, x) && b >= 1 && b <= 4) r += 0.5;  // bright visible snow
          }
          r += offsets[static_cast<std::size_t>(d)][static_cast<std::size_t>(b)];
          r += noise_rng.normal(0.0, spec.texture_rule.noise_sigma);
          const double prob = static_cast<double>(cube.cloud_prob.at(y, x));
          if (prob > 10.0) {
            const double alpha = 0.9 * std::clamp((prob - 10.0) / 90.0, 0.0, 1.0);
            r = (1.0 - alpha) * r + alpha * 0.55;
          }
          plane.at(y, x) = static_cast<float>(std::clamp(r, 0.0, 1.0));
        }
      }
    }
    scene.cubes.push_back(std::move(cube));
  }
  return scene;
}

}  // namespace canht::raster
