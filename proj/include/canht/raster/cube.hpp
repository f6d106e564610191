#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "canht/core/plane.hpp"

namespace canht::raster {

// The 13 optical band labels, in canonical storage order.
inline constexpr std::array<const char*, 13> kBandLabels = {
    "B01", "B02", "B03", "B04", "B05", "B06", "B07",
    "B08", "B8A", "B09", "B10", "B11", "B12"};

enum class Landcover : std::uint8_t {
  vegetation = 0,
  water = 1,
  snow = 2,
  other = 3,
};

// One acquisition: co-registered reflectance bands plus per-pixel cloud
// probability (percent), landcover class, and a usable-data flag. All planes
// share one grid.
struct RasterCube {
  int h = 0, w = 0;
  std::vector<std::string> band_ids;   // parallel to bands
  std::vector<Plane<float>> bands;     // reflectance, finite, one per band id
  Plane<float> cloud_prob;             // [0, 100]
  Plane<std::uint8_t> landcover;       // Landcover codes
  Plane<std::uint8_t> valid;           // 0/1
  double gsd_m = 10.0;
  std::string acquisition_date;        // YYYY-MM-DD

  int band_index(const std::string& id) const;
  // Throws data_error on any structural violation (see read/write contract).
  void validate() const;
};

// Reference canopy heights: metres, NaN allowed only where valid == 0.
struct HeightMap {
  Plane<float> heights;
  Plane<std::uint8_t> valid;

  int h() const { return heights.h; }
  int w() const { return heights.w; }
};

// Binary container (.rcube): fixed little-endian header, float32/uint8
// payload planes, plus a JSON sidecar at <path>.json carrying gsd,
// acquisition date and band ids. Round-trips are byte-exact, including NaN
// payloads. Malformed input throws parse_error with the failing byte offset.
void write_cube(const RasterCube& cube, const std::string& path);
RasterCube read_cube(const std::string& path);

void write_heights(const HeightMap& map, const std::string& path,
                   double gsd_m = 10.0);
HeightMap read_heights(const std::string& path);

}  // namespace canht::raster
