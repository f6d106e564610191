#include "canht/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "canht/core/error.hpp"

namespace canht::eval {

namespace {

void check_grids(const raster::HeightMap& pred, const raster::HeightMap& ref) {
  if (pred.h() != ref.h() || pred.w() != ref.w())
    throw data_error("prediction and reference grids differ");
}

template <typename Fn>
std::int64_t for_each_joint(const raster::HeightMap& pred,
                            const raster::HeightMap& ref, Fn&& fn) {
  std::int64_t n = 0;
  for (int y = 0; y < pred.h(); ++y) {
    for (int x = 0; x < pred.w(); ++x) {
      if (!pred.valid.at(y, x) || !ref.valid.at(y, x)) continue;
      fn(static_cast<double>(pred.heights.at(y, x)),
         static_cast<double>(ref.heights.at(y, x)));
      ++n;
    }
  }
  return n;
}

}  // namespace

double mae(const raster::HeightMap& pred, const raster::HeightMap& ref) {
  check_grids(pred, ref);
  double sum = 0.0;
  const std::int64_t n =
      for_each_joint(pred, ref, [&](double p, double r) { sum += std::abs(p - r); });
  if (n == 0) throw data_error("no jointly valid pixels to evaluate");
  return sum / static_cast<double>(n);
}

double rmse(const raster::HeightMap& pred, const raster::HeightMap& ref) {
  check_grids(pred, ref);
  double sum = 0.0;
  const std::int64_t n = for_each_joint(
      pred, ref, [&](double p, double r) { sum += (p - r) * (p - r); });
  if (n == 0) throw data_error("no jointly valid pixels to evaluate");
  return std::sqrt(sum / static_cast<double>(n));
}

std::vector<BinStat> binned_mae(const raster::HeightMap& pred,
                                const raster::HeightMap& ref, double bin_width) {
  if (!(bin_width > 0.0)) throw config_error("bin width must be positive");
  check_grids(pred, ref);
  std::map<int, std::pair<double, std::int64_t>> acc;  // bin -> (abs sum, count)
  const std::int64_t n = for_each_joint(pred, ref, [&](double p, double r) {
    const int bin = static_cast<int>(std::floor(r / bin_width));
    auto& slot = acc[bin];
    slot.first += std::abs(p - r);
    slot.second += 1;
  });
  if (n == 0) throw data_error("no jointly valid pixels to evaluate");
  std::vector<BinStat> bins;
  for (const auto& [bin, slot] : acc) {
    BinStat st;
    st.lo = bin * bin_width;
    st.hi = (bin + 1) * bin_width;
    st.mae = slot.first / static_cast<double>(slot.second);
    st.count = slot.second;
    bins.push_back(st);
  }
  return bins;
}

FilterResult filter_reference(const raster::HeightMap& ref, double max_height) {
  if (!(max_height > 0.0)) throw config_error("reference height cap must be positive");
  FilterResult out;
  out.filtered.heights = ref.heights;
  out.filtered.valid = ref.valid;
  for (int y = 0; y < ref.h(); ++y) {
    for (int x = 0; x < ref.w(); ++x) {
      if (!ref.valid.at(y, x)) continue;
      if (static_cast<double>(ref.heights.at(y, x)) >= max_height) {
        out.filtered.valid.at(y, x) = 0;
        out.filtered.heights.at(y, x) = std::numeric_limits<float>::quiet_NaN();
        ++out.removed;
      }
    }
  }
  return out;
}

ConfusionHist confusion_hist(const raster::HeightMap& pred,
                             const raster::HeightMap& ref, double bin_width) {
  if (!(bin_width > 0.0)) throw config_error("bin width must be positive");
  check_grids(pred, ref);
  ConfusionHist hist;
  const std::int64_t n = for_each_joint(pred, ref, [&](double p, double r) {
    const int rb = static_cast<int>(std::floor(r / bin_width));
    const int pb = static_cast<int>(std::floor(p / bin_width));
    hist[{rb, pb}] += 1;
  });
  if (n == 0) throw data_error("no jointly valid pixels to evaluate");
  return hist;
}

std::vector<std::pair<double, double>> cumulative_distribution(
    const raster::HeightMap& map, double step) {
  if (!(step > 0.0)) throw config_error("step must be positive");
  std::vector<double> vals;
  for (int y = 0; y < map.h(); ++y)
    for (int x = 0; x < map.w(); ++x)
      if (map.valid.at(y, x)) vals.push_back(static_cast<double>(map.heights.at(y, x)));
  if (vals.empty()) throw data_error("no valid pixels for the cumulative distribution");
  std::sort(vals.begin(), vals.end());
  const double maxv = vals.back();
  int k_max = 1;
  while (k_max * step <= maxv) ++k_max;  // smallest K with K*step > max
  std::vector<std::pair<double, double>> out;
  std::size_t idx = 0;
  for (int k = 1; k <= k_max; ++k) {
    const double thresh = k * step;
    while (idx < vals.size() && vals[idx] < thresh) ++idx;
    out.emplace_back(thresh,
                     static_cast<double>(idx) / static_cast<double>(vals.size()));
  }
  return out;
}

EvalReport evaluate(const raster::HeightMap& pred, const raster::HeightMap& ref,
                    double bin_width, double confusion_bin, double cumulative_step) {
  EvalReport report;
  report.mae = mae(pred, ref);
  report.rmse = rmse(pred, ref);
  report.n_pixels = 0;
  for (int y = 0; y < pred.h(); ++y)
    for (int x = 0; x < pred.w(); ++x)
      if (pred.valid.at(y, x) && ref.valid.at(y, x)) ++report.n_pixels;
  report.bins = binned_mae(pred, ref, bin_width);
  report.confusion = confusion_hist(pred, ref, confusion_bin);
  // Restrict the prediction's distribution to jointly valid pixels so all
  // report sections describe the same population.
  raster::HeightMap joint;
  joint.heights = pred.heights;
  joint.valid = Plane<std::uint8_t>(pred.h(), pred.w(), 0);
  for (int y = 0; y < pred.h(); ++y)
    for (int x = 0; x < pred.w(); ++x)
      joint.valid.at(y, x) = pred.valid.at(y, x) && ref.valid.at(y, x) ? 1 : 0;
  report.cumulative = cumulative_distribution(joint, cumulative_step);
  return report;
}

}  // namespace canht::eval
