#include "canht/infer/predict.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "canht/core/error.hpp"

namespace canht::infer {

TileGrid make_tile_grid(int h, int w, int tile_size, int overlap) {
  if (tile_size < 1) throw config_error("tile_size must be positive");
  if (overlap < 0 || overlap >= tile_size)
    throw config_error("overlap must be in [0, tile_size)");
  if (h < 1 || w < 1) throw data_error("cannot tile an empty scene");

  TileGrid grid;
  grid.tile_size = tile_size;
  grid.overlap = overlap;

  auto starts = [&](int extent) {
    std::vector<int> s;
    if (extent <= tile_size) {
      s.push_back(0);
      return s;
    }
    const int step = tile_size - overlap;
    for (int pos = 0;; pos += step) {
      if (pos + tile_size >= extent) {
        s.push_back(extent - tile_size);  // final tile flush with the border
        break;
      }
      s.push_back(pos);
    }
    return s;
  };

  const std::vector<int> ys = starts(h);
  const std::vector<int> xs = starts(w);
  for (int y : ys)
    for (int x : xs)
      grid.tiles.push_back({y, x, std::min(tile_size, h), std::min(tile_size, w)});
  return grid;
}

raster::HeightMap predict_scene(net::Network<float>& model,
                                const raster::RasterCube& cube,
                                const prep::NormStats& stats,
                                const prep::BandSubset& subset,
                                const TileGrid& grid, const MaskPolicy& policy) {
  if (static_cast<int>(subset.bands.size()) != model.cfg.in_channels)
    throw data_error("band subset width does not match the model input channels");
  nn::Tensor4<float> scene = prep::select_bands(cube, subset);
  prep::normalize(scene, stats);
  const int h = cube.h, w = cube.w;

  raster::HeightMap out;
  out.heights = Plane<float>(h, w, 0.0f);
  out.valid = Plane<std::uint8_t>(h, w, 0);
  // Depth of the tile each pixel was taken from; -1 = unwritten.
  Plane<std::int32_t> depth(h, w, -1);
  const std::int32_t kInf = std::numeric_limits<std::int32_t>::max();

  for (std::size_t t = 0; t < grid.tiles.size(); ++t) {
    const Rect tile = grid.tiles[t];
    if (tile.y0 < 0 || tile.x0 < 0 || tile.y0 + tile.h > h || tile.x0 + tile.w > w)
      throw data_error("tile rectangle outside the scene");

    nn::Tensor4<float> input(1, scene.c, tile.h, tile.w);
    for (int c = 0; c < scene.c; ++c) {
      const float* src = scene.chan(0, c);
      float* dst = input.chan(0, c);
      for (int y = 0; y < tile.h; ++y) {
        const float* srow = src + static_cast<std::int64_t>(tile.y0 + y) * w + tile.x0;
        std::copy(srow, srow + tile.w, dst + static_cast<std::int64_t>(y) * tile.w);
      }
    }

    nn::Tensor4<float> pred;
    try {
      pred = net::forward(model, input, /*training=*/false);
    } catch (const numeric_error& e) {
      throw numeric_error("tile at (" + std::to_string(tile.y0) + ", " +
                          std::to_string(tile.x0) + ") size " + std::to_string(tile.h) +
                          "x" + std::to_string(tile.w) + ": " + e.what());
    }

    for (int y = 0; y < tile.h; ++y) {
      const int gy = tile.y0 + y;
      // Distance to the nearest tile edge, unless that edge coincides with
      // the image border (then it does not bound the interior).
      const std::int32_t top = (tile.y0 == 0) ? kInf : static_cast<std::int32_t>(y);
      const std::int32_t bottom =
          (tile.y0 + tile.h == h) ? kInf : static_cast<std::int32_t>(tile.h - 1 - y);
      const std::int32_t dy = std::min(top, bottom);
      const float* prow = pred.chan(0, 0) + static_cast<std::int64_t>(y) * tile.w;
      for (int x = 0; x < tile.w; ++x) {
        const int gx = tile.x0 + x;
        const std::int32_t left = (tile.x0 == 0) ? kInf : static_cast<std::int32_t>(x);
        const std::int32_t right = (tile.x0 + tile.w == w)
                                       ? kInf
                                       : static_cast<std::int32_t>(tile.w - 1 - x);
        const std::int32_t d = std::min(dy, std::min(left, right));
        if (d > depth.at(gy, gx)) {  // strict: ties keep the earlier tile
          depth.at(gy, gx) = d;
          out.heights.at(gy, gx) = prow[x];
          out.valid.at(gy, gx) = 1;
        }
      }
    }
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (depth.at(y, x) < 0)
        throw data_error("tiling left pixels uncovered");
      bool masked = cube.cloud_prob.at(y, x) > prep::kCloudyThreshold;
      const std::uint8_t lc = cube.landcover.at(y, x);
      if (lc == static_cast<std::uint8_t>(raster::Landcover::water)) masked = true;
      if (policy.mask_snow && lc == static_cast<std::uint8_t>(raster::Landcover::snow))
        masked = true;
      if (!cube.valid.at(y, x)) masked = true;
      if (masked) {
        out.heights.at(y, x) = std::numeric_limits<float>::quiet_NaN();
        out.valid.at(y, x) = 0;
      }
    }
  }
  return out;
}

void write_pgm(const raster::HeightMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open " + path + " for writing");
  out << "P5\n" << map.w() << " " << map.h() << "\n255\n";
  for (int y = 0; y < map.h(); ++y) {
    for (int x = 0; x < map.w(); ++x) {
      unsigned char px = 0;
      if (map.valid.at(y, x)) {
        const double v = std::clamp(static_cast<double>(map.heights.at(y, x)), 0.0, 60.0);
        px = static_cast<unsigned char>(std::lround(v / 60.0 * 255.0));
      }
      out.put(static_cast<char>(px));
    }
  }
  if (!out) throw data_error("short write to " + path);
}

}  // namespace canht::infer
