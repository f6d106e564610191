#include "canht/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "canht/core/error.hpp"
#include "canht/core/hash.hpp"
#include "canht/core/rng.hpp"
#include "canht/eval/report.hpp"
#include "canht/infer/fusion.hpp"
#include "canht/infer/predict.hpp"
#include "canht/model/checkpoint.hpp"
#include "canht/raster/scene.hpp"
#include "canht/train/loss.hpp"
#include "canht/train/trainer.hpp"

namespace canht::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config plumbing -------------------------------------------------------

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw config_error("config file " + path + " is not valid JSON: " + e.what());
  }
}

// Strict schema: every present key must be known.
void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& context) {
  if (!j.is_object()) throw config_error(context + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key))
      throw config_error("unknown key '" + key + "' in " + context);
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback,
         const std::string& context) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw config_error("bad value for '" + key + "' in " + context + ": " + e.what());
  }
}

// ---- run manifest -----------------------------------------------------------

class Manifest {
 public:
  Manifest(std::string command, std::string out_dir)
      : command_(std::move(command)),
        out_dir_(std::move(out_dir)),
        t0_(std::chrono::steady_clock::now()) {}

  void set_seed(std::uint64_t seed) {
    seed_ = seed;
    has_seed_ = true;
  }
  void add_input(const std::string& path) {
    inputs_[path] = hash_hex(fnv1a64_file(path));
  }
  void add_output(const std::string& path) { outputs_.push_back(path); }

  void write() {
    json j;
    j["command"] = command_;
    j["version"] = kToolVersion;
    if (has_seed_) j["seed"] = seed_;
    json in = json::object();
    for (const auto& [path, hash] : inputs_) in[path] = hash;
    j["inputs"] = in;
    json out = json::object();
    std::sort(outputs_.begin(), outputs_.end());
    for (const std::string& path : outputs_) out[path] = hash_hex(fnv1a64_file(path));
    j["outputs"] = out;
    for (const auto& [key, value] : extra_.items()) j[key] = value;
    const auto dt = std::chrono::steady_clock::now() - t0_;
    j["wall_clock_s"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(dt).count() / 1000.0;
    std::ofstream f(fs::path(out_dir_) / "manifest.json", std::ios::trunc);
    if (!f) throw data_error("cannot write manifest in " + out_dir_);
    f << j.dump(2) << "\n";
  }

  json& extra() { return extra_; }

 private:
  std::string command_;
  std::string out_dir_;
  std::chrono::steady_clock::time_point t0_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
  std::uint64_t seed_ = 0;
  bool has_seed_ = false;
  json extra_;
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw data_error("cannot create directory " + dir + ": " + ec.message());
}

// ---- scene directory layout --------------------------------------------------

struct SceneFiles {
  std::vector<std::string> cube_paths;  // sorted
  std::string heights_path;             // may be empty
};

SceneFiles scan_scene_dir(const std::string& dir, bool need_heights) {
  if (!fs::is_directory(dir)) throw data_error("not a directory: " + dir);
  SceneFiles files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.starts_with("date_") && name.ends_with(".rcube"))
      files.cube_paths.push_back(entry.path().string());
    else if (name == "heights.rcube")
      files.heights_path = entry.path().string();
  }
  std::sort(files.cube_paths.begin(), files.cube_paths.end());
  if (files.cube_paths.empty())
    throw data_error("no date_*.rcube files found in " + dir);
  if (need_heights && files.heights_path.empty())
    throw data_error("no heights.rcube found in " + dir);
  return files;
}

std::vector<raster::RasterCube> load_cubes(const SceneFiles& files,
                                           Manifest* manifest) {
  std::vector<raster::RasterCube> cubes;
  for (const std::string& path : files.cube_paths) {
    cubes.push_back(raster::read_cube(path));
    if (manifest) {
      manifest->add_input(path);
      manifest->add_input(path + ".json");
    }
  }
  return cubes;
}

// ---- config parsing: scene spec ---------------------------------------------

raster::SceneSpec parse_scene_spec(const json& j) {
  require_keys(j,
               {"seed", "height", "width", "n_dates", "cloud_coverage_fraction",
                "water_fraction", "snow_fraction", "height_field", "texture_rule"},
               "scene spec");
  raster::SceneSpec spec;
  spec.seed = get_or<std::uint64_t>(j, "seed", 0, "scene spec");
  spec.height = get_or<int>(j, "height", 256, "scene spec");
  spec.width = get_or<int>(j, "width", 256, "scene spec");
  spec.n_dates = get_or<int>(j, "n_dates", 3, "scene spec");
  spec.cloud_coverage_fraction =
      get_or<double>(j, "cloud_coverage_fraction", 0.1, "scene spec");
  spec.water_fraction = get_or<double>(j, "water_fraction", 0.0, "scene spec");
  spec.snow_fraction = get_or<double>(j, "snow_fraction", 0.0, "scene spec");
  if (j.contains("height_field")) {
    const json& hf = j.at("height_field");
    require_keys(hf, {"correlation_length_px", "max_height_m"}, "height_field");
    spec.height_field.correlation_length_px =
        get_or<double>(hf, "correlation_length_px", 5.0, "height_field");
    spec.height_field.max_height_m =
        get_or<double>(hf, "max_height_m", 40.0, "height_field");
  }
  if (j.contains("texture_rule")) {
    const json& tr = j.at("texture_rule");
    require_keys(tr, {"noise_sigma", "date_offset_sigma", "height_ref_m", "stddev_ref_m"},
                 "texture_rule");
    spec.texture_rule.noise_sigma = get_or<double>(tr, "noise_sigma", 0.01, "texture_rule");
    spec.texture_rule.date_offset_sigma =
        get_or<double>(tr, "date_offset_sigma", 0.005, "texture_rule");
    spec.texture_rule.height_ref_m =
        get_or<double>(tr, "height_ref_m", 50.0, "texture_rule");
    spec.texture_rule.stddev_ref_m =
        get_or<double>(tr, "stddev_ref_m", 10.0, "texture_rule");
  }
  spec.validate();
  return spec;
}

// ---- config parsing: training -------------------------------------------------

struct TrainSetup {
  std::uint64_t seed = 0;
  std::string bands = "ALL";
  net::ModelConfig model;
  train::TrainConfig train;
};

net::ModelConfig parse_model_config(const json& j, int in_channels,
                                    std::uint64_t seed) {
  require_keys(j, {"trunk_width", "n_blocks", "entry_depths", "kernel_mode"},
               "model config");
  net::ModelConfig cfg;
  cfg.in_channels = in_channels;
  cfg.trunk_width = get_or<int>(j, "trunk_width", 728, "model config");
  cfg.n_blocks = get_or<int>(j, "n_blocks", 18, "model config");
  if (j.contains("entry_depths")) {
    const auto depths = j.at("entry_depths").get<std::vector<int>>();
    if (depths.size() != 2)
      throw config_error("entry_depths must hold exactly two values");
    cfg.entry_depths = {depths[0], depths[1]};
  }
  cfg.kernel_mode = net::kernel_mode_from_name(
      get_or<std::string>(j, "kernel_mode", "3x3", "model config"));
  cfg.init_seed = seed;
  cfg.validate();
  return cfg;
}

train::TrainConfig parse_train_config(const json& j, std::uint64_t seed) {
  require_keys(j,
               {"base_lr", "batch_size", "weight_decay", "max_iterations", "val_every",
                "adam_beta1", "adam_beta2", "adam_epsilon", "val_fraction",
                "val_patches"},
               "train config");
  train::TrainConfig cfg;
  cfg.base_lr = get_or<double>(j, "base_lr", 1e-4, "train config");
  cfg.batch_size = get_or<int>(j, "batch_size", 36, "train config");
  cfg.weight_decay = get_or<double>(j, "weight_decay", 0.0, "train config");
  cfg.max_iterations = get_or<std::int64_t>(j, "max_iterations", 10000, "train config");
  cfg.val_every = get_or<int>(j, "val_every", 500, "train config");
  cfg.adam_beta1 = get_or<double>(j, "adam_beta1", 0.9, "train config");
  cfg.adam_beta2 = get_or<double>(j, "adam_beta2", 0.999, "train config");
  cfg.adam_eps = get_or<double>(j, "adam_epsilon", 1e-8, "train config");
  cfg.val_fraction = get_or<double>(j, "val_fraction", 0.2, "train config");
  cfg.val_patch_count = get_or<int>(j, "val_patches", 2000, "train config");
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

TrainSetup parse_train_setup(const json& j, const std::string& context,
                             bool allow_variants) {
  std::set<std::string> allowed = {"seed", "bands", "model", "train"};
  if (allow_variants) {
    allowed.insert("variants");
  }
  require_keys(j, allowed, context);
  TrainSetup setup;
  setup.seed = get_or<std::uint64_t>(j, "seed", 0, context);
  setup.bands = get_or<std::string>(j, "bands", "ALL", context);
  const prep::BandSubset subset = prep::BandSubset::resolve(setup.bands);
  setup.model = parse_model_config(j.contains("model") ? j.at("model") : json::object(),
                                   static_cast<int>(subset.bands.size()),
                                   derive_seed(setup.seed, "init"));
  setup.train = parse_train_config(j.contains("train") ? j.at("train") : json::object(),
                                   setup.seed);
  return setup;
}

// ---- shared prediction helper -------------------------------------------------

infer::PredictionStack predict_all_dates(net::Network<float>& model,
                                         const std::vector<raster::RasterCube>& cubes,
                                         const prep::NormStats& stats,
                                         const prep::BandSubset& subset,
                                         int tile_size, int overlap,
                                         bool mask_snow) {
  infer::PredictionStack stack;
  for (const raster::RasterCube& cube : cubes) {
    const infer::TileGrid grid =
        infer::make_tile_grid(cube.h, cube.w, tile_size, overlap);
    infer::DatePrediction entry;
    entry.pred = infer::predict_scene(model, cube, stats, subset, grid,
                                      infer::MaskPolicy{mask_snow});
    entry.cloud_prob = cube.cloud_prob;
    entry.landcover = cube.landcover;
    entry.acquisition_date = cube.acquisition_date;
    stack.dates.push_back(std::move(entry));
  }
  return stack;
}

}  // namespace

// ---- synthesize ---------------------------------------------------------------

int cmd_synthesize(const SynthesizeArgs& args) {
  const json spec_json = load_json_file(args.spec_path);
  const raster::SceneSpec spec = parse_scene_spec(spec_json);  // validate first
  ensure_dir(args.out_dir);
  Manifest manifest("synthesize", args.out_dir);
  manifest.set_seed(spec.seed);
  manifest.add_input(args.spec_path);

  const raster::Scene scene = raster::generate_scene(spec);
  for (std::size_t d = 0; d < scene.cubes.size(); ++d) {
    char name[32];
    std::snprintf(name, sizeof(name), "date_%02d.rcube", static_cast<int>(d));
    const std::string path = (fs::path(args.out_dir) / name).string();
    raster::write_cube(scene.cubes[d], path);
    manifest.add_output(path);
    manifest.add_output(path + ".json");
  }
  const std::string hpath = (fs::path(args.out_dir) / "heights.rcube").string();
  raster::write_heights(scene.heights, hpath);
  manifest.add_output(hpath);
  manifest.add_output(hpath + ".json");
  manifest.write();
  return 0;
}

// ---- train ----------------------------------------------------------------------

int cmd_train(const TrainArgs& args) {
  const json cfg_json = load_json_file(args.config_path);
  const TrainSetup setup = parse_train_setup(cfg_json, "train config", false);

  ensure_dir(args.out_dir);
  Manifest manifest("train", args.out_dir);
  manifest.set_seed(setup.seed);
  manifest.add_input(args.config_path);

  const SceneFiles files = scan_scene_dir(args.data_dir, /*need_heights=*/true);
  const std::vector<raster::RasterCube> cubes = load_cubes(files, &manifest);
  manifest.add_input(files.heights_path);
  const raster::HeightMap heights = raster::read_heights(files.heights_path);

  const prep::BandSubset subset = prep::BandSubset::resolve(setup.bands);

  net::Network<float> model;
  prep::NormStats stats;
  std::int64_t start_iteration = 0;
  train::AdamState<float> resume_adam;
  train::AdamState<float>* resume_adam_ptr = nullptr;
  model::TrainMeta resume_meta;
  const model::TrainMeta* resume_meta_ptr = nullptr;

  if (!args.resume_path.empty()) {
    manifest.add_input(args.resume_path);
    model::Checkpoint ckpt = model::load_checkpoint(args.resume_path);
    if (!ckpt.adam.has_value())
      throw data_error("checkpoint has no optimizer state; cannot resume from it");
    if (ckpt.subset.name != subset.name)
      throw config_error("checkpoint was trained on bands " + ckpt.subset.name +
                         ", config requests " + subset.name);
    const net::ModelConfig& have = ckpt.model.cfg;
    if (have.trunk_width != setup.model.trunk_width ||
        have.n_blocks != setup.model.n_blocks ||
        have.entry_depths != setup.model.entry_depths ||
        have.kernel_mode != setup.model.kernel_mode)
      throw config_error("checkpoint architecture differs from the model config");
    model = std::move(ckpt.model);
    stats = std::move(ckpt.stats);
    resume_adam = std::move(*ckpt.adam);
    resume_adam_ptr = &resume_adam;
    resume_meta = ckpt.meta;
    resume_meta_ptr = &resume_meta;
    start_iteration = ckpt.meta.iteration;
    if (start_iteration > setup.train.max_iterations)
      throw config_error("checkpoint is already past max_iterations");
  } else {
    // Normalization statistics come from the training columns only.
    const train::SplitMasks split = train::make_column_split(
        cubes.front().h, cubes.front().w, setup.train.val_fraction);
    Plane<std::uint8_t> train_region(cubes.front().h, cubes.front().w, 0);
    for (int y = 0; y < train_region.h; ++y)
      for (int x = 0; x < split.split_col; ++x) train_region.at(y, x) = 1;
    stats = prep::compute_norm_stats(cubes, subset, &train_region);
    model = net::build<float>(setup.model);
  }

  train::TrainOutcome outcome = train::run_training(
      std::move(model), cubes, heights, stats, subset, setup.train,
      start_iteration, resume_adam_ptr, resume_meta_ptr);

  const std::string best_path = (fs::path(args.out_dir) / "best.chkp").string();
  const std::string last_path = (fs::path(args.out_dir) / "last.chkp").string();

  model::Checkpoint last;
  last.model = std::move(outcome.last);
  last.subset = subset;
  last.stats = stats;
  last.meta = outcome.meta;
  last.adam = std::move(outcome.adam);
  model::save_checkpoint(last, last_path);
  manifest.add_output(last_path);

  if (outcome.best_updated || !fs::exists(best_path)) {
    model::Checkpoint best;
    best.model = std::move(outcome.best);
    best.subset = subset;
    best.stats = stats;
    best.meta = outcome.meta;
    model::save_checkpoint(best, best_path);
  }
  manifest.add_output(best_path);

  // Resumed runs append to the existing curve file.
  const std::string curves_path = (fs::path(args.out_dir) / "curves.csv").string();
  std::vector<train::CurveRow> rows;
  if (!args.resume_path.empty() && fs::exists(curves_path)) {
    std::ifstream in(curves_path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      train::CurveRow row;
      const std::size_t c1 = line.find(',');
      const std::size_t c2 = line.find(',', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos) continue;
      row.iteration = std::stoll(line.substr(0, c1));
      row.train_loss = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      const std::string val = line.substr(c2 + 1);
      if (!val.empty()) {
        row.val_loss = std::stod(val);
        row.has_val = true;
      }
      if (row.iteration <= start_iteration) rows.push_back(row);
    }
  }
  rows.insert(rows.end(), outcome.curves.begin(), outcome.curves.end());
  eval::write_curves_csv(rows, curves_path);
  manifest.add_output(curves_path);

  manifest.write();
  return 0;
}

// ---- predict ----------------------------------------------------------------------

int cmd_predict(const PredictArgs& args) {
  ensure_dir(args.out_dir);
  Manifest manifest("predict", args.out_dir);
  manifest.add_input(args.checkpoint_path);

  model::Checkpoint ckpt = model::load_checkpoint(args.checkpoint_path);
  const SceneFiles files = scan_scene_dir(args.data_dir, /*need_heights=*/false);
  const std::vector<raster::RasterCube> cubes = load_cubes(files, &manifest);

  infer::PredictionStack stack =
      predict_all_dates(ckpt.model, cubes, ckpt.stats, ckpt.subset, args.tile_size,
                        args.overlap, args.mask_snow);

  auto save_map = [&](const raster::HeightMap& map, const std::string& stem) {
    const std::string path = (fs::path(args.out_dir) / (stem + ".rcube")).string();
    raster::write_heights(map, path, cubes.front().gsd_m);
    manifest.add_output(path);
    manifest.add_output(path + ".json");
    if (args.write_pgm) {
      const std::string pgm = (fs::path(args.out_dir) / (stem + ".pgm")).string();
      infer::write_pgm(map, pgm);
      manifest.add_output(pgm);
    }
  };

  for (std::size_t d = 0; d < stack.dates.size(); ++d) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "pred_date_%02d", static_cast<int>(d));
    save_map(stack.dates[d].pred, stem);
  }
  if (stack.dates.size() > 1) {
    save_map(infer::fuse_median(stack), "pred_median");
    save_map(infer::fuse_min_cloud(stack), "pred_mincloud");
  }
  manifest.write();
  return 0;
}

// ---- evaluate ----------------------------------------------------------------------

int cmd_evaluate(const EvaluateArgs& args) {
  ensure_dir(args.out_dir);
  Manifest manifest("evaluate", args.out_dir);
  manifest.add_input(args.pred_path);
  manifest.add_input(args.ref_path);

  const raster::HeightMap pred = raster::read_heights(args.pred_path);
  raster::HeightMap ref = raster::read_heights(args.ref_path);

  std::int64_t removed = 0;
  if (args.max_ref.has_value()) {
    eval::FilterResult fr = eval::filter_reference(ref, *args.max_ref);
    ref = std::move(fr.filtered);
    removed = fr.removed;
  }

  const eval::EvalReport report = eval::evaluate(pred, ref, args.bin_width);
  const std::string report_path = (fs::path(args.out_dir) / "report.json").string();
  eval::write_report_json(report, removed, report_path);
  manifest.add_output(report_path);
  const std::string bins_path = (fs::path(args.out_dir) / "bins.csv").string();
  eval::write_bins_csv(report.bins, bins_path);
  manifest.add_output(bins_path);
  const std::string conf_path = (fs::path(args.out_dir) / "confusion.csv").string();
  eval::write_confusion_csv(report.confusion, conf_path);
  manifest.add_output(conf_path);
  const std::string cum_path = (fs::path(args.out_dir) / "cumulative.csv").string();
  eval::write_cumulative_csv(report.cumulative, cum_path);
  manifest.add_output(cum_path);

  // Optional fusion comparison table.
  if (!args.pred_mincloud_path.empty() || !args.date_pred_paths.empty()) {
    std::vector<eval::FusionRow> rows;
    rows.push_back({"median", report.mae, report.rmse});
    if (!args.pred_mincloud_path.empty()) {
      manifest.add_input(args.pred_mincloud_path);
      const raster::HeightMap mc = raster::read_heights(args.pred_mincloud_path);
      rows.push_back({"mincloud", eval::mae(mc, ref), eval::rmse(mc, ref)});
    }
    std::optional<infer::DateSpread> spread;
    if (args.date_pred_paths.size() >= 2) {
      std::vector<raster::HeightMap> date_preds;
      for (const std::string& p : args.date_pred_paths) {
        manifest.add_input(p);
        date_preds.push_back(raster::read_heights(p));
      }
      spread = infer::per_date_spread(date_preds, ref);
    } else if (args.date_pred_paths.size() == 1) {
      throw config_error("date spread needs at least two per-date maps");
    }
    const std::string fusion_path = (fs::path(args.out_dir) / "fusion.csv").string();
    eval::write_fusion_csv(rows, spread, fusion_path);
    manifest.add_output(fusion_path);
  }

  manifest.write();
  return 0;
}

// ---- ablate ----------------------------------------------------------------------

int cmd_ablate(const AblateArgs& args) {
  const json cfg_json = load_json_file(args.config_path);
  TrainSetup base = parse_train_setup(cfg_json, "ablation config", true);
  std::vector<std::string> variants =
      get_or<std::vector<std::string>>(cfg_json, "variants",
                                       {"ALL", "RGB", "N", "RGBN", "woRGBN", "ALL_1x1"},
                                       "ablation config");
  if (variants.empty()) throw config_error("ablation needs at least one variant");

  ensure_dir(args.out_dir);
  Manifest manifest("ablate", args.out_dir);
  manifest.set_seed(base.seed);
  manifest.add_input(args.config_path);

  const SceneFiles files = scan_scene_dir(args.data_dir, /*need_heights=*/true);
  const std::vector<raster::RasterCube> cubes = load_cubes(files, &manifest);
  manifest.add_input(files.heights_path);
  const raster::HeightMap heights = raster::read_heights(files.heights_path);

  std::vector<raster::RasterCube> test_cubes;
  raster::HeightMap test_heights;
  const bool external_test = !args.test_data_dir.empty();
  if (external_test) {
    const SceneFiles tf = scan_scene_dir(args.test_data_dir, /*need_heights=*/true);
    test_cubes = load_cubes(tf, &manifest);
    manifest.add_input(tf.heights_path);
    test_heights = raster::read_heights(tf.heights_path);
  }

  const train::SplitMasks split = train::make_column_split(
      cubes.front().h, cubes.front().w, base.train.val_fraction);

  std::vector<eval::AblationRow> rows;
  json skipped = json::object();

  for (const std::string& variant : variants) {
    // "<SUBSET>_1x1" trains the same subset with 1x1 depthwise kernels.
    std::string subset_name = variant;
    net::KernelMode mode = net::KernelMode::k3x3;
    if (variant.size() > 4 && variant.ends_with("_1x1")) {
      subset_name = variant.substr(0, variant.size() - 4);
      mode = net::KernelMode::k1x1;
    }
    prep::BandSubset subset;
    try {
      subset = prep::BandSubset::resolve(subset_name);
    } catch (const config_error& e) {
      throw config_error("variant '" + variant + "': " + e.what());
    }
    bool missing = false;
    for (const std::string& b : subset.bands) {
      for (const raster::RasterCube& cube : cubes)
        if (cube.band_index(b) < 0) missing = true;
    }
    if (missing) {
      skipped[variant] = "input cubes are missing at least one required band";
      continue;
    }

    net::ModelConfig mc = base.model;
    mc.in_channels = static_cast<int>(subset.bands.size());
    mc.kernel_mode = mode;
    mc.init_seed = derive_seed(base.seed, "init");

    Plane<std::uint8_t> train_region(cubes.front().h, cubes.front().w, 0);
    for (int y = 0; y < train_region.h; ++y)
      for (int x = 0; x < split.split_col; ++x) train_region.at(y, x) = 1;
    const prep::NormStats stats = prep::compute_norm_stats(cubes, subset, &train_region);

    train::TrainOutcome outcome =
        train::run_training(net::build<float>(mc), cubes, heights, stats, subset,
                            base.train, 0, nullptr, nullptr);

    // Evaluate the best model: on the external test scene when given,
    // otherwise on the held-out validation columns of the training scene.
    raster::HeightMap fused;
    raster::HeightMap ref;
    if (external_test) {
      infer::PredictionStack stack = predict_all_dates(
          outcome.best, test_cubes, stats, subset, 128, 8, false);
      fused = stack.dates.size() > 1 ? infer::fuse_median(stack)
                                     : std::move(stack.dates.front().pred);
      ref = test_heights;
    } else {
      infer::PredictionStack stack =
          predict_all_dates(outcome.best, cubes, stats, subset, 128, 8, false);
      fused = stack.dates.size() > 1 ? infer::fuse_median(stack)
                                     : std::move(stack.dates.front().pred);
      ref.heights = heights.heights;
      ref.valid = Plane<std::uint8_t>(heights.h(), heights.w(), 0);
      for (int y = 0; y < heights.h(); ++y)
        for (int x = split.split_col; x < heights.w(); ++x)
          ref.valid.at(y, x) = heights.valid.at(y, x);
    }

    eval::AblationRow row;
    row.variant = variant;
    row.overall_mae = eval::mae(fused, ref);
    row.bins = eval::binned_mae(fused, ref, 10.0);
    rows.push_back(std::move(row));
  }

  if (rows.empty()) throw data_error("every ablation variant was skipped");

  const std::string table_path = (fs::path(args.out_dir) / "ablation.csv").string();
  eval::write_ablation_csv(rows, table_path);
  manifest.add_output(table_path);
  manifest.extra()["skipped_variants"] = skipped;
  manifest.write();
  return 0;
}

}  // namespace canht::cli
