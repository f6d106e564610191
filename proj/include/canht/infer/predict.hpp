#pragma once

#include <string>
#include <vector>

#include "canht/net/network.hpp"
#include "canht/prep/preprocess.hpp"
#include "canht/raster/cube.hpp"

namespace canht::infer {

struct Rect {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};

// Overlapping tiling of an H x W scene. Tiles advance by tile_size - overlap
// and the final tile of each axis is shifted back flush with the border, so
// the whole scene is covered by tiles of exactly tile_size (or the full image
// extent when the image is smaller than a tile).
struct TileGrid {
  int tile_size = 128;
  int overlap = 8;
  std::vector<Rect> tiles;
};

TileGrid make_tile_grid(int h, int w, int tile_size = 128, int overlap = 8);

struct MaskPolicy {
  bool mask_snow = false;  // clouds and water are always masked
};

// Runs the network over each tile (inference mode, running statistics) and
// recomposes overlaps by per-pixel interior depth: the pixel is taken from
// the tile in which it lies deepest (distance to the nearest tile edge, with
// edges flush against the image border counting as infinitely deep). Ties
// keep the earliest tile in grid order. Afterwards cloudy (cloud_prob > 10)
// and water pixels - and snow, when the policy says so - are set invalid
// with NaN heights. A failure inside a tile is reported with the tile's
// rectangle.
raster::HeightMap predict_scene(net::Network<float>& model,
                                const raster::RasterCube& cube,
                                const prep::NormStats& stats,
                                const prep::BandSubset& subset,
                                const TileGrid& grid,
                                const MaskPolicy& policy = {});

// 8-bit greyscale preview: heights 0..60 m mapped linearly to 0..255
// (clamped), invalid pixels black.
void write_pgm(const raster::HeightMap& map, const std::string& path);

}  // namespace canht::infer
