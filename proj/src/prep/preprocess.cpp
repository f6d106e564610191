#include "canht/prep/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "canht/core/error.hpp"

namespace canht::prep {

namespace {

const std::vector<std::string> kAll = {"B01", "B02", "B03", "B04", "B05",
                                       "B06", "B07", "B08", "B8A", "B09",
                                       "B10", "B11", "B12"};

}  // namespace

BandSubset BandSubset::resolve(const std::string& name) {
  if (name == "ALL") return {name, kAll};
  if (name == "RGB") return {name, {"B02", "B03", "B04"}};
  if (name == "N") return {name, {"B08"}};
  if (name == "RGBN") return {name, {"B02", "B03", "B04", "B08"}};
  if (name == "woRGBN")
    return {name, {"B01", "B05", "B06", "B07", "B8A", "B09", "B10", "B11", "B12"}};
  throw config_error("unknown band subset '" + name +
                     "' (expected ALL, RGB, N, RGBN or woRGBN)");
}

const std::vector<std::string>& BandSubset::known_names() {
  static const std::vector<std::string> names = {"ALL", "RGB", "N", "RGBN", "woRGBN"};
  return names;
}

int NormStats::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < band_ids.size(); ++i)
    if (band_ids[i] == id) return static_cast<int>(i);
  return -1;
}

NormStats compute_norm_stats(const std::vector<raster::RasterCube>& cubes,
                             const BandSubset& subset,
                             const Plane<std::uint8_t>* pixel_mask) {
  if (cubes.empty()) throw data_error("normalization statistics need at least one cube");
  NormStats stats;
  stats.band_ids = subset.bands;
  stats.mean.assign(subset.bands.size(), 0.0);
  stats.stddev.assign(subset.bands.size(), 0.0);

  for (std::size_t b = 0; b < subset.bands.size(); ++b) {
    double s = 0.0, s2 = 0.0;
    std::int64_t n = 0;
    for (const raster::RasterCube& cube : cubes) {
      const int bi = cube.band_index(subset.bands[b]);
      if (bi < 0)
        throw data_error("cube from " + cube.acquisition_date + " is missing band " +
                         subset.bands[b]);
      if (pixel_mask && !pixel_mask->same_shape(cube.cloud_prob))
        throw data_error("pixel mask dimensions do not match the cube");
      const Plane<float>& plane = cube.bands[static_cast<std::size_t>(bi)];
      for (int y = 0; y < cube.h; ++y) {
        for (int x = 0; x < cube.w; ++x) {
          if (pixel_mask && !pixel_mask->at(y, x)) continue;
          if (cube.cloud_prob.at(y, x) > kCloudyThreshold) continue;
          if (!cube.valid.at(y, x)) continue;
          const double v = static_cast<double>(plane.at(y, x));
          s += v;
          s2 += v * v;
          ++n;
        }
      }
    }
    if (n == 0)
      throw data_error("no usable pixels to estimate statistics for band " + subset.bands[b]);
    const double mean = s / static_cast<double>(n);
    double var = s2 / static_cast<double>(n) - mean * mean;
    if (var < 0.0) var = 0.0;
    stats.mean[b] = mean;
    stats.stddev[b] = std::sqrt(var);
    if (!(stats.stddev[b] > 0.0))
      throw data_error("band " + subset.bands[b] + " is constant; cannot normalize");
  }
  return stats;
}

nn::Tensor4<float> select_bands(const raster::RasterCube& cube,
                                const BandSubset& subset) {
  nn::Tensor4<float> out(1, static_cast<int>(subset.bands.size()), cube.h, cube.w);
  for (std::size_t b = 0; b < subset.bands.size(); ++b) {
    const int bi = cube.band_index(subset.bands[b]);
    if (bi < 0)
      throw data_error("cube from " + cube.acquisition_date + " is missing band " +
                       subset.bands[b]);
    const Plane<float>& plane = cube.bands[static_cast<std::size_t>(bi)];
    std::copy(plane.v.begin(), plane.v.end(), out.chan(0, static_cast<int>(b)));
  }
  return out;
}

void normalize(nn::Tensor4<float>& bands, const NormStats& stats) {
  if (bands.c != static_cast<int>(stats.band_ids.size()))
    throw data_error("normalization statistics cover " +
                     std::to_string(stats.band_ids.size()) + " bands, tensor has " +
                     std::to_string(bands.c));
  for (int in = 0; in < bands.n; ++in) {
    for (int c = 0; c < bands.c; ++c) {
      const float mean = static_cast<float>(stats.mean[static_cast<std::size_t>(c)]);
      const float inv =
          static_cast<float>(1.0 / stats.stddev[static_cast<std::size_t>(c)]);
      float* p = bands.chan(in, c);
      for (std::int64_t i = 0; i < bands.plane(); ++i) p[i] = (p[i] - mean) * inv;
    }
  }
}

Plane<float> upsample_bilinear(const Plane<float>& src, int factor) {
  if (factor < 1) throw config_error("upsampling factor must be at least 1");
  if (src.h < 1 || src.w < 1) throw data_error("cannot upsample an empty plane");
  if (factor == 1) return src;
  Plane<float> dst(src.h * factor, src.w * factor);
  for (int y = 0; y < dst.h; ++y) {
    const double sy = (y + 0.5) / factor - 0.5;
    const double cy = std::clamp(sy, 0.0, static_cast<double>(src.h - 1));
    const int y0 = static_cast<int>(std::floor(cy));
    const int y1 = std::min(y0 + 1, src.h - 1);
    const double fy = cy - y0;
    for (int x = 0; x < dst.w; ++x) {
      const double sx = (x + 0.5) / factor - 0.5;
      const double cx = std::clamp(sx, 0.0, static_cast<double>(src.w - 1));
      const int x0 = static_cast<int>(std::floor(cx));
      const int x1 = std::min(x0 + 1, src.w - 1);
      const double fx = cx - x0;
      const double v00 = src.at(y0, x0), v01 = src.at(y0, x1);
      const double v10 = src.at(y1, x0), v11 = src.at(y1, x1);
      const double top = v00 + (v01 - v00) * fx;
      const double bot = v10 + (v11 - v10) * fx;
      dst.at(y, x) = static_cast<float>(top + (bot - top) * fy);
    }
  }
  return dst;
}

Plane<std::uint8_t> cloud_mask(const Plane<float>& cloud_prob) {
  Plane<std::uint8_t> mask(cloud_prob.h, cloud_prob.w, 0);
  for (std::int64_t i = 0; i < cloud_prob.size(); ++i) {
    const float v = cloud_prob.v[static_cast<std::size_t>(i)];
    if (!(v >= 0.0f && v <= 100.0f))
      throw data_error("cloud probability outside [0, 100]");
    mask.v[static_cast<std::size_t>(i)] = v > kCloudyThreshold ? 1 : 0;
  }
  return mask;
}

}  // namespace canht::prep
