#include "canht/raster/cube.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "canht/core/error.hpp"

namespace canht::raster {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'R', 'C', 'U', 'B'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kKindReflectance = 0;
constexpr std::uint8_t kKindHeights = 1;
constexpr std::uint8_t kDtypeF32 = 0;

bool known_band(const std::string& id) {
  for (const char* b : kBandLabels)
    if (id == b) return true;
  return false;
}

bool plausible_date(const std::string& d) {
  if (d.size() != 10 || d[4] != '-' || d[7] != '-') return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
    if (d[i] < '0' || d[i] > '9') return false;
  return true;
}

// --- little-endian buffer writer/reader -----------------------------------

struct Writer {
  std::vector<char> buf;

  void bytes(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf.insert(buf.end(), c, c + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) {
    const std::uint8_t b[2] = {static_cast<std::uint8_t>(v & 0xff),
                               static_cast<std::uint8_t>(v >> 8)};
    bytes(b, 2);
  }
  void u32(std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v & 0xff),
                               static_cast<std::uint8_t>((v >> 8) & 0xff),
                               static_cast<std::uint8_t>((v >> 16) & 0xff),
                               static_cast<std::uint8_t>((v >> 24) & 0xff)};
    bytes(b, 4);
  }
  void f32_plane(const Plane<float>& p) {
    bytes(p.data(), static_cast<std::size_t>(p.size()) * sizeof(float));
  }
  void u8_plane(const Plane<std::uint8_t>& p) {
    bytes(p.data(), static_cast<std::size_t>(p.size()));
  }
};

struct Reader {
  const std::vector<char>& buf;
  std::size_t pos = 0;

  explicit Reader(const std::vector<char>& b) : buf(b) {}

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw parse_error(buf.size(), std::string("file truncated while reading ") + what +
                                        " (need " + std::to_string(pos + n) +
                                        " bytes, have " + std::to_string(buf.size()) + ")");
  }
  void bytes(void* p, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
  }
  std::uint16_t u16(const char* what) {
    std::uint8_t b[2];
    bytes(b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    std::uint8_t b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }
  void f32_plane(Plane<float>& p, const char* what) {
    bytes(p.data(), static_cast<std::size_t>(p.size()) * sizeof(float), what);
  }
  void u8_plane(Plane<std::uint8_t>& p, const char* what) {
    bytes(p.data(), static_cast<std::size_t>(p.size()), what);
  }
};

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw data_error("cannot open " + path);
  const std::streamsize len = in.tellg();
  in.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(len));
  if (len > 0 && !in.read(buf.data(), len)) throw data_error("cannot read " + path);
  return buf;
}

void dump(const std::string& path, const std::vector<char>& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw data_error("short write to " + path);
}

void check_dims(int h, int w, int n_bands) {
  if (h < 1 || w < 1) throw data_error("raster dimensions must be at least 1x1");
  if (static_cast<std::int64_t>(h) * w > (std::int64_t(1) << 31))
    throw data_error("raster dimensions overflow the supported size");
  if (n_bands < 1 || n_bands > 13)
    throw data_error("band count must be in [1, 13], got " + std::to_string(n_bands));
}

json read_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("missing sidecar " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw data_error("invalid sidecar " + path + ": " + e.what());
  }
  return j;
}

void write_sidecar(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw data_error("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

}  // namespace

int RasterCube::band_index(const std::string& id) const {
  for (std::size_t i = 0; i < band_ids.size(); ++i)
    if (band_ids[i] == id) return static_cast<int>(i);
  return -1;
}

void RasterCube::validate() const {
  check_dims(h, w, static_cast<int>(bands.size()));
  if (band_ids.size() != bands.size())
    throw data_error("band id list and band plane count differ");
  std::set<std::string> seen;
  for (const std::string& id : band_ids) {
    if (!known_band(id)) throw data_error("unknown band id '" + id + "'");
    if (!seen.insert(id).second) throw data_error("duplicate band id '" + id + "'");
  }
  for (std::size_t b = 0; b < bands.size(); ++b) {
    if (bands[b].h != h || bands[b].w != w)
      throw data_error("band " + band_ids[b] + " has mismatched dimensions");
    for (float v : bands[b].v)
      if (!std::isfinite(v))
        throw data_error("band " + band_ids[b] + " contains non-finite reflectance");
  }
  if (cloud_prob.h != h || cloud_prob.w != w)
    throw data_error("cloud probability plane has mismatched dimensions");
  for (float v : cloud_prob.v)
    if (!(v >= 0.0f && v <= 100.0f))
      throw data_error("cloud probability outside [0, 100]");
  if (landcover.h != h || landcover.w != w)
    throw data_error("landcover plane has mismatched dimensions");
  for (std::uint8_t v : landcover.v)
    if (v > 3) throw data_error("landcover code outside the known classes");
  if (valid.h != h || valid.w != w)
    throw data_error("valid plane has mismatched dimensions");
  for (std::uint8_t v : valid.v)
    if (v > 1) throw data_error("valid flag must be 0 or 1");
  if (!plausible_date(acquisition_date))
    throw data_error("acquisition date must be YYYY-MM-DD, got '" + acquisition_date + "'");
  if (!(gsd_m > 0.0)) throw data_error("ground sampling distance must be positive");
}

void write_cube(const RasterCube& cube, const std::string& path) {
  cube.validate();
  Writer w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u8(kKindReflectance);
  w.u16(static_cast<std::uint16_t>(cube.bands.size()));
  w.u32(static_cast<std::uint32_t>(cube.h));
  w.u32(static_cast<std::uint32_t>(cube.w));
  w.u8(kDtypeF32);
  w.u8(0);
  w.u8(0);
  w.u8(0);
  for (const Plane<float>& b : cube.bands) w.f32_plane(b);
  w.f32_plane(cube.cloud_prob);
  w.u8_plane(cube.landcover);
  w.u8_plane(cube.valid);
  dump(path, w.buf);

  json side;
  side["kind"] = "reflectance";
  side["gsd_m"] = cube.gsd_m;
  side["acquisition_date"] = cube.acquisition_date;
  side["band_ids"] = cube.band_ids;
  write_sidecar(path + ".json", side);
}

RasterCube read_cube(const std::string& path) {
  const std::vector<char> buf = slurp(path);
  Reader r(buf);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw parse_error(0, "bad magic, not a raster cube file");
  const std::uint16_t version = r.u16("version");
  if (version != kVersion)
    throw parse_error(4, "unsupported container version " + std::to_string(version));
  const std::uint8_t kind = r.u8("kind");
  if (kind != kKindReflectance)
    throw parse_error(6, "expected a reflectance cube, found kind " + std::to_string(kind));
  const int n_bands = r.u16("band count");
  const int h = static_cast<int>(r.u32("height"));
  const int w = static_cast<int>(r.u32("width"));
  check_dims(h, w, n_bands);
  const std::uint8_t dtype = r.u8("dtype");
  if (dtype != kDtypeF32)
    throw parse_error(r.pos - 1, "unsupported dtype " + std::to_string(dtype));
  r.u8("reserved");
  r.u8("reserved");
  r.u8("reserved");

  RasterCube cube;
  cube.h = h;
  cube.w = w;
  cube.bands.assign(static_cast<std::size_t>(n_bands), Plane<float>(h, w));
  for (int b = 0; b < n_bands; ++b) r.f32_plane(cube.bands[static_cast<std::size_t>(b)], "band plane");
  cube.cloud_prob = Plane<float>(h, w);
  r.f32_plane(cube.cloud_prob, "cloud probability plane");
  cube.landcover = Plane<std::uint8_t>(h, w);
  r.u8_plane(cube.landcover, "landcover plane");
  cube.valid = Plane<std::uint8_t>(h, w);
  r.u8_plane(cube.valid, "valid plane");
  if (r.pos != buf.size())
    throw parse_error(r.pos, "trailing bytes after payload");

  const json side = read_sidecar(path + ".json");
  try {
    if (side.at("kind").get<std::string>() != "reflectance")
      throw data_error("sidecar kind mismatch for " + path);
    cube.gsd_m = side.at("gsd_m").get<double>();
    cube.acquisition_date = side.at("acquisition_date").get<std::string>();
    cube.band_ids = side.at("band_ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw data_error("invalid sidecar for " + path + ": " + e.what());
  }
  if (static_cast<int>(cube.band_ids.size()) != n_bands)
    throw data_error("sidecar lists " + std::to_string(cube.band_ids.size()) +
                     " band ids but the cube holds " + std::to_string(n_bands));
  cube.validate();
  return cube;
}

void write_heights(const HeightMap& map, const std::string& path, double gsd_m) {
  if (map.heights.h < 1 || map.heights.w < 1)
    throw data_error("height map dimensions must be at least 1x1");
  if (map.valid.h != map.heights.h || map.valid.w != map.heights.w)
    throw data_error("height map valid plane has mismatched dimensions");
  for (std::uint8_t v : map.valid.v)
    if (v > 1) throw data_error("valid flag must be 0 or 1");
  for (int y = 0; y < map.heights.h; ++y)
    for (int x = 0; x < map.heights.w; ++x)
      if (map.valid.at(y, x) && !std::isfinite(map.heights.at(y, x)))
        throw data_error("height map has non-finite height marked valid");

  Writer w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u8(kKindHeights);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(map.heights.h));
  w.u32(static_cast<std::uint32_t>(map.heights.w));
  w.u8(kDtypeF32);
  w.u8(0);
  w.u8(0);
  w.u8(0);
  w.f32_plane(map.heights);
  w.u8_plane(map.valid);
  dump(path, w.buf);

  json side;
  side["kind"] = "heights";
  side["gsd_m"] = gsd_m;
  write_sidecar(path + ".json", side);
}

HeightMap read_heights(const std::string& path) {
  const std::vector<char> buf = slurp(path);
  Reader r(buf);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw parse_error(0, "bad magic, not a raster cube file");
  const std::uint16_t version = r.u16("version");
  if (version != kVersion)
    throw parse_error(4, "unsupported container version " + std::to_string(version));
  const std::uint8_t kind = r.u8("kind");
  if (kind != kKindHeights)
    throw parse_error(6, "expected a height map, found kind " + std::to_string(kind));
  const int n_bands = r.u16("band count");
  if (n_bands != 1) throw parse_error(7, "height map must hold exactly one plane");
  const int h = static_cast<int>(r.u32("height"));
  const int w = static_cast<int>(r.u32("width"));
  check_dims(h, w, 1);
  const std::uint8_t dtype = r.u8("dtype");
  if (dtype != kDtypeF32)
    throw parse_error(r.pos - 1, "unsupported dtype " + std::to_string(dtype));
  r.u8("reserved");
  r.u8("reserved");
  r.u8("reserved");

  HeightMap map;
  map.heights = Plane<float>(h, w);
  r.f32_plane(map.heights, "height plane");
  map.valid = Plane<std::uint8_t>(h, w);
  r.u8_plane(map.valid, "valid plane");
  if (r.pos != buf.size())
    throw parse_error(r.pos, "trailing bytes after payload");

  const json side = read_sidecar(path + ".json");
  try {
    if (side.at("kind").get<std::string>() != "heights")
      throw data_error("sidecar kind mismatch for " + path);
  } catch (const json::exception& e) {
    throw data_error("invalid sidecar for " + path + ": " + e.what());
  }
  for (std::uint8_t v : map.valid.v)
    if (v > 1) throw data_error("valid flag must be 0 or 1");
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (map.valid.at(y, x) && !std::isfinite(map.heights.at(y, x)))
        throw data_error("height map has non-finite height marked valid");
  return map;
}

}  // namespace canht::raster
