#pragma once

#include <optional>
#include <string>
#include <vector>

#include "canht/eval/metrics.hpp"
#include "canht/infer/fusion.hpp"
#include "canht/train/trainer.hpp"

namespace canht::eval {

// Shortest round-trip decimal form of a double (to_chars), locale-free. All
// report files are produced through this, so identical runs are
// byte-identical.
std::string format_double(double v);

void write_report_json(const EvalReport& report, std::int64_t removed_by_filter,
                       const std::string& path);
void write_bins_csv(const std::vector<BinStat>& bins, const std::string& path);
void write_confusion_csv(const ConfusionHist& hist, const std::string& path);
void write_cumulative_csv(const std::vector<std::pair<double, double>>& cumulative,
                          const std::string& path);
void write_curves_csv(const std::vector<train::CurveRow>& rows,
                      const std::string& path);

// One row per fused variant (and per single-date map when spread is given):
// name, mae_m, rmse_m.
struct FusionRow {
  std::string name;
  double mae = 0.0;
  double rmse = 0.0;
};

void write_fusion_csv(const std::vector<FusionRow>& rows,
                      const std::optional<infer::DateSpread>& spread,
                      const std::string& path);

// Ablation table: one row per variant, overall MAE plus MAE per reference
// decade bin (0-10 ... 60-70 m); missing bins print empty cells.
struct AblationRow {
  std::string variant;
  double overall_mae = 0.0;
  std::vector<BinStat> bins;
};

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::string& path);

}  // namespace canht::eval
