#include "canht/eval/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "canht/core/error.hpp"

namespace canht::eval {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw data_error("cannot open " + path + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw data_error("short write to " + path);
}

}  // namespace

void write_report_json(const EvalReport& report, std::int64_t removed_by_filter,
                       const std::string& path) {
  nlohmann::json j;
  j["mae_m"] = report.mae;
  j["rmse_m"] = report.rmse;
  j["n_pixels"] = report.n_pixels;
  j["removed_by_reference_filter"] = removed_by_filter;
  nlohmann::json bins = nlohmann::json::array();
  for (const BinStat& b : report.bins) {
    bins.push_back({{"lo_m", b.lo}, {"hi_m", b.hi}, {"mae_m", b.mae}, {"count", b.count}});
  }
  j["bins"] = bins;
  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
  finish(out, path);
}

void write_bins_csv(const std::vector<BinStat>& bins, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "bin_lo_m,bin_hi_m,mae_m,count\n";
  for (const BinStat& b : bins) {
    out << format_double(b.lo) << "," << format_double(b.hi) << ","
        << format_double(b.mae) << "," << b.count << "\n";
  }
  finish(out, path);
}

void write_confusion_csv(const ConfusionHist& hist, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "ref_bin,pred_bin,count\n";
  for (const auto& [key, count] : hist) {
    out << key.first << "," << key.second << "," << count << "\n";
  }
  finish(out, path);
}

void write_cumulative_csv(const std::vector<std::pair<double, double>>& cumulative,
                          const std::string& path) {
  std::ofstream out = open_out(path);
  out << "height_m,fraction_below\n";
  for (const auto& [thresh, frac] : cumulative) {
    out << format_double(thresh) << "," << format_double(frac) << "\n";
  }
  finish(out, path);
}

void write_curves_csv(const std::vector<train::CurveRow>& rows,
                      const std::string& path) {
  std::ofstream out = open_out(path);
  out << "iteration,train_loss,val_loss\n";
  for (const train::CurveRow& r : rows) {
    out << r.iteration << "," << format_double(r.train_loss) << ",";
    if (r.has_val) out << format_double(r.val_loss);
    out << "\n";
  }
  finish(out, path);
}

void write_fusion_csv(const std::vector<FusionRow>& rows,
                      const std::optional<infer::DateSpread>& spread,
                      const std::string& path) {
  std::ofstream out = open_out(path);
  out << "name,mae_m,rmse_m\n";
  for (const FusionRow& r : rows) {
    out << r.name << "," << format_double(r.mae) << "," << format_double(r.rmse)
        << "\n";
  }
  if (spread.has_value()) {
    for (std::size_t i = 0; i < spread->per_date_mae.size(); ++i) {
      out << "date_" << i << "," << format_double(spread->per_date_mae[i]) << ",\n";
    }
    out << "date_mae_mean," << format_double(spread->mean) << ",\n";
    out << "date_mae_sd," << format_double(spread->sd) << ",\n";
  }
  finish(out, path);
}

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::string& path) {
  std::ofstream out = open_out(path);
  out << "variant,overall_mae_m";
  for (int lo = 0; lo < 70; lo += 10) out << ",mae_" << lo << "_" << (lo + 10) << "m";
  out << "\n";
  for (const AblationRow& r : rows) {
    out << r.variant << "," << format_double(r.overall_mae);
    for (int lo = 0; lo < 70; lo += 10) {
      out << ",";
      for (const BinStat& b : r.bins) {
        if (static_cast<int>(std::lround(b.lo)) == lo) {
          out << format_double(b.mae);
          break;
        }
      }
    }
    out << "\n";
  }
  finish(out, path);
}

}  // namespace canht::eval
