#pragma once

#include <optional>
#include <string>
#include <vector>

namespace canht::cli {

inline constexpr const char* kToolVersion = "0.1.0";

struct SynthesizeArgs {
  std::string spec_path;
  std::string out_dir;
};

struct TrainArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string resume_path;  // empty = fresh run
};

struct PredictArgs {
  std::string checkpoint_path;
  std::string data_dir;
  std::string out_dir;
  int tile_size = 128;
  int overlap = 8;
  bool mask_snow = false;
  bool write_pgm = false;
};

struct EvaluateArgs {
  std::string pred_path;
  std::string ref_path;
  std::string out_dir;
  std::optional<double> max_ref;        // reference-height cap, metres
  double bin_width = 10.0;
  std::string pred_mincloud_path;       // optional second fused map
  std::vector<std::string> date_pred_paths;  // optional single-date maps
};

struct AblateArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string test_data_dir;  // empty = evaluate on held-out columns
};

// Each command returns 0 on success and throws canht errors otherwise
// (config_error, numeric_error, data_error). The binary maps them to exit
// codes 2 / 3 / 4.
int cmd_synthesize(const SynthesizeArgs& args);
int cmd_train(const TrainArgs& args);
int cmd_predict(const PredictArgs& args);
int cmd_evaluate(const EvaluateArgs& args);
int cmd_ablate(const AblateArgs& args);

}  // namespace canht::cli
