#include "canht/infer/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "canht/core/error.hpp"
#include "canht/eval/metrics.hpp"

namespace canht::infer {

void PredictionStack::validate() const {
  if (dates.empty()) throw data_error("prediction stack is empty");
  const int h = dates.front().pred.h();
  const int w = dates.front().pred.w();
  std::set<std::string> seen;
  for (const DatePrediction& d : dates) {
    if (d.pred.h() != h || d.pred.w() != w || d.cloud_prob.h != h ||
        d.cloud_prob.w != w || d.landcover.h != h || d.landcover.w != w)
      throw data_error("prediction stack has mismatched grids");
    if (!d.pred.valid.same_shape(d.pred.heights))
      throw data_error("prediction stack entry has inconsistent planes");
    if (!seen.insert(d.acquisition_date).second)
      throw data_error("prediction stack has duplicate date " + d.acquisition_date);
  }
}

namespace {

std::vector<std::size_t> chronological(const PredictionStack& stack) {
  std::vector<std::size_t> order(stack.dates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return stack.dates[a].acquisition_date < stack.dates[b].acquisition_date;
  });
  return order;
}

}  // namespace

raster::HeightMap fuse_median(const PredictionStack& stack) {
  stack.validate();
  const int h = stack.dates.front().pred.h();
  const int w = stack.dates.front().pred.w();
  raster::HeightMap out;
  out.heights = Plane<float>(h, w, std::numeric_limits<float>::quiet_NaN());
  out.valid = Plane<std::uint8_t>(h, w, 0);

  std::vector<float> vals;
  vals.reserve(stack.dates.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      vals.clear();
      for (const DatePrediction& d : stack.dates)
        if (d.pred.valid.at(y, x)) vals.push_back(d.pred.heights.at(y, x));
      if (vals.empty()) continue;
      std::sort(vals.begin(), vals.end());
      const std::size_t n = vals.size();
      const double median =
          (n % 2 == 1) ? static_cast<double>(vals[n / 2])
                       : 0.5 * (static_cast<double>(vals[n / 2 - 1]) +
                                static_cast<double>(vals[n / 2]));
      out.heights.at(y, x) = static_cast<float>(median);
      out.valid.at(y, x) = 1;
    }
  }
  return out;
}

raster::HeightMap fuse_min_cloud(const PredictionStack& stack) {
  stack.validate();
  const int h = stack.dates.front().pred.h();
  const int w = stack.dates.front().pred.w();
  raster::HeightMap out;
  out.heights = Plane<float>(h, w, std::numeric_limits<float>::quiet_NaN());
  out.valid = Plane<std::uint8_t>(h, w, 0);

  const std::vector<std::size_t> order = chronological(stack);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float best_prob = 0.0f;
      bool found = false;
      for (std::size_t idx : order) {
        const DatePrediction& d = stack.dates[idx];
        if (!d.pred.valid.at(y, x)) continue;
        const float prob = d.cloud_prob.at(y, x);
        if (!found || prob < best_prob) {  // strict: ties keep the earliest
          found = true;
          best_prob = prob;
          out.heights.at(y, x) = d.pred.heights.at(y, x);
        }
      }
      if (found) out.valid.at(y, x) = 1;
    }
  }
  return out;
}

DateSpread per_date_spread(const std::vector<raster::HeightMap>& preds,
                           const raster::HeightMap& ref) {
  if (preds.size() < 2) throw data_error("date spread needs at least two dates");
  DateSpread spread;
  for (const raster::HeightMap& pred : preds)
    spread.per_date_mae.push_back(eval::mae(pred, ref));
  const double n = static_cast<double>(spread.per_date_mae.size());
  double s = 0.0;
  for (double v : spread.per_date_mae) s += v;
  spread.mean = s / n;
  double ss = 0.0;
  for (double v : spread.per_date_mae) ss += (v - spread.mean) * (v - spread.mean);
  spread.sd = std::sqrt(ss / (n - 1.0));
  return spread;
}

DateSpread per_date_spread(const PredictionStack& stack,
                           const raster::HeightMap& ref) {
  stack.validate();
  std::vector<raster::HeightMap> preds;
  for (std::size_t idx : chronological(stack))
    preds.push_back(stack.dates[idx].pred);
  return per_date_spread(preds, ref);
}

}  // namespace canht::infer
