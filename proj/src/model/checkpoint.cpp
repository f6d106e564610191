#include "canht/model/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "canht/core/error.hpp"

namespace canht::model {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'C', 'H', 'K', 'P'};
constexpr std::uint16_t kVersion = 1;

json config_to_json(const net::ModelConfig& cfg) {
  json j;
  j["in_channels"] = cfg.in_channels;
  j["trunk_width"] = cfg.trunk_width;
  j["n_blocks"] = cfg.n_blocks;
  j["entry_depths"] = {cfg.entry_depths[0], cfg.entry_depths[1]};
  j["kernel_mode"] = net::kernel_mode_name(cfg.kernel_mode);
  j["init_seed"] = cfg.init_seed;
  return j;
}

net::ModelConfig config_from_json(const json& j) {
  net::ModelConfig cfg;
  try {
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.trunk_width = j.at("trunk_width").get<int>();
    cfg.n_blocks = j.at("n_blocks").get<int>();
    const auto depths = j.at("entry_depths").get<std::vector<int>>();
    if (depths.size() != 2) throw data_error("entry_depths must hold two values");
    cfg.entry_depths = {depths[0], depths[1]};
    cfg.kernel_mode = net::kernel_mode_from_name(j.at("kernel_mode").get<std::string>());
    cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw data_error(std::string("checkpoint config invalid: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  // The directory lists tensors in param_refs order; offsets are into the
  // payload region that follows the JSON.
  net::Network<float>& model = const_cast<net::Network<float>&>(ckpt.model);
  std::vector<net::ParamRef<float>> refs = net::param_refs(model);

  json dir = json::array();
  std::uint64_t offset = 0;
  for (const net::ParamRef<float>& ref : refs) {
    json t;
    t["name"] = ref.name;
    t["shape"] = {ref.tensor->n, ref.tensor->c, ref.tensor->h, ref.tensor->w};
    t["trainable"] = ref.trainable;
    t["dtype"] = "f32";
    t["offset"] = offset;
    offset += static_cast<std::uint64_t>(ref.tensor->size()) * 4;
    dir.push_back(t);
  }

  json header;
  header["config"] = config_to_json(model.cfg);
  header["bands"] = {{"name", ckpt.subset.name}, {"ids", ckpt.subset.bands}};
  header["norm_stats"] = {{"band_ids", ckpt.stats.band_ids},
                          {"mean", ckpt.stats.mean},
                          {"stddev", ckpt.stats.stddev}};
  header["train_meta"] = {
      {"iteration", ckpt.meta.iteration},
      {"best_iteration", ckpt.meta.best_iteration},
      {"best_val_loss", std::isfinite(ckpt.meta.best_val_loss)
                            ? json(ckpt.meta.best_val_loss)
                            : json(nullptr)}};
  header["tensors"] = dir;
  if (ckpt.adam.has_value()) {
    const train::AdamState<float>& st = *ckpt.adam;
    std::size_t n_trainable = 0;
    for (const net::ParamRef<float>& ref : refs)
      if (ref.trainable) ++n_trainable;
    if (st.m.size() != n_trainable || st.v.size() != n_trainable)
      throw data_error("optimizer state does not match the model layout");
    header["adam"] = {{"t", st.t}, {"m_offset", offset}};
    for (const auto& m : st.m) offset += m.size() * 8;
    header["adam"]["v_offset"] = offset;
    for (const auto& v : st.v) offset += v.size() * 8;
  }
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  const std::uint16_t version = kVersion;
  std::uint8_t vbuf[2] = {static_cast<std::uint8_t>(version & 0xff),
                          static_cast<std::uint8_t>(version >> 8)};
  out.write(reinterpret_cast<const char*>(vbuf), 2);
  std::uint64_t hlen = header_str.size();
  std::uint8_t hbuf[8];
  for (int i = 0; i < 8; ++i) hbuf[i] = static_cast<std::uint8_t>((hlen >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(hbuf), 8);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const net::ParamRef<float>& ref : refs) {
    out.write(reinterpret_cast<const char*>(ref.tensor->data()),
              static_cast<std::streamsize>(ref.tensor->size() * 4));
  }
  if (ckpt.adam.has_value()) {
    for (const auto& m : ckpt.adam->m)
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(m.size() * 8));
    for (const auto& v : ckpt.adam->v)
      out.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(v.size() * 8));
  }
  if (!out) throw data_error("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw data_error("cannot open " + path);
  const std::uint64_t file_len = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);

  auto need = [&](std::uint64_t pos, std::uint64_t n, const char* what) {
    if (pos + n > file_len)
      throw parse_error(file_len, std::string("file truncated while reading ") + what);
  };

  char magic[4];
  need(0, 4, "magic");
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw parse_error(0, "bad magic, not a checkpoint file");
  need(4, 2, "version");
  std::uint8_t vbuf[2];
  in.read(reinterpret_cast<char*>(vbuf), 2);
  const std::uint16_t version = static_cast<std::uint16_t>(vbuf[0] | (vbuf[1] << 8));
  if (version != kVersion)
    throw parse_error(4, "unsupported checkpoint version " + std::to_string(version));
  need(6, 8, "header length");
  std::uint8_t hbuf[8];
  in.read(reinterpret_cast<char*>(hbuf), 8);
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(hbuf[i]) << (8 * i);
  need(14, hlen, "header");
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw parse_error(14, std::string("header is not valid JSON: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.model = net::build<float>(config_from_json(header.at("config")));
  try {
    ckpt.subset.name = header.at("bands").at("name").get<std::string>();
    ckpt.subset.bands = header.at("bands").at("ids").get<std::vector<std::string>>();
    ckpt.stats.band_ids =
        header.at("norm_stats").at("band_ids").get<std::vector<std::string>>();
    ckpt.stats.mean = header.at("norm_stats").at("mean").get<std::vector<double>>();
    ckpt.stats.stddev = header.at("norm_stats").at("stddev").get<std::vector<double>>();
    ckpt.meta.iteration = header.at("train_meta").at("iteration").get<std::int64_t>();
    ckpt.meta.best_iteration =
        header.at("train_meta").at("best_iteration").get<std::int64_t>();
    const json& bvl = header.at("train_meta").at("best_val_loss");
    ckpt.meta.best_val_loss = bvl.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                            : bvl.get<double>();
  } catch (const json::exception& e) {
    throw data_error(std::string("checkpoint header invalid: ") + e.what());
  }
  if (ckpt.stats.band_ids.size() != ckpt.stats.mean.size() ||
      ckpt.stats.band_ids.size() != ckpt.stats.stddev.size())
    throw data_error("checkpoint normalization statistics are inconsistent");
  if (static_cast<int>(ckpt.subset.bands.size()) != ckpt.model.cfg.in_channels)
    throw data_error("checkpoint band subset does not match the model input width");

  const std::uint64_t payload_base = 14 + hlen;
  std::vector<net::ParamRef<float>> refs = net::param_refs(ckpt.model);
  const json& dir = header.at("tensors");
  if (!dir.is_array() || dir.size() != refs.size())
    throw data_error("checkpoint tensor directory does not match the architecture");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const json& t = dir[i];
    std::string name;
    std::vector<int> shape;
    std::uint64_t offset = 0;
    try {
      name = t.at("name").get<std::string>();
      shape = t.at("shape").get<std::vector<int>>();
      offset = t.at("offset").get<std::uint64_t>();
      if (t.at("dtype").get<std::string>() != "f32")
        throw data_error("checkpoint tensor " + name + " has unsupported dtype");
    } catch (const json::exception& e) {
      throw data_error(std::string("checkpoint tensor entry invalid: ") + e.what());
    }
    if (name != refs[i].name)
      throw data_error("checkpoint tensor order mismatch: expected " + refs[i].name +
                       ", found " + name);
    nn::Tensor4<float>& dst = *refs[i].tensor;
    if (shape.size() != 4 || shape[0] != dst.n || shape[1] != dst.c ||
        shape[2] != dst.h || shape[3] != dst.w)
      throw data_error("checkpoint tensor " + name + " shape mismatch");
    const std::uint64_t nbytes = static_cast<std::uint64_t>(dst.size()) * 4;
    need(payload_base + offset, nbytes, name.c_str());
    in.seekg(static_cast<std::streamoff>(payload_base + offset));
    in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(nbytes));
    if (!in) throw parse_error(payload_base + offset, "cannot read tensor " + name);
  }

  if (header.contains("adam")) {
    train::AdamState<float> st;
    std::uint64_t m_off = 0, v_off = 0;
    try {
      st.t = header.at("adam").at("t").get<std::int64_t>();
      m_off = header.at("adam").at("m_offset").get<std::uint64_t>();
      v_off = header.at("adam").at("v_offset").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw data_error(std::string("checkpoint optimizer entry invalid: ") + e.what());
    }
    st.init(refs);
    st.t = header.at("adam").at("t").get<std::int64_t>();
    std::uint64_t pos = m_off;
    for (auto& m : st.m) {
      const std::uint64_t nbytes = m.size() * 8;
      need(payload_base + pos, nbytes, "optimizer moments");
      in.seekg(static_cast<std::streamoff>(payload_base + pos));
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(nbytes));
      pos += nbytes;
    }
    pos = v_off;
    for (auto& v : st.v) {
      const std::uint64_t nbytes = v.size() * 8;
      need(payload_base + pos, nbytes, "optimizer moments");
      in.seekg(static_cast<std::streamoff>(payload_base + pos));
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(nbytes));
      pos += nbytes;
    }
    if (!in) throw parse_error(payload_base + pos, "cannot read optimizer moments");
    ckpt.adam = std::move(st);
  }
  return ckpt;
}

}  // namespace canht::model
