#include "canht/train/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "canht/core/error.hpp"
#include "canht/train/loss.hpp"

namespace canht::train {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw config_error("base_lr must be positive");
  if (batch_size < 1 || batch_size > 4096)
    throw config_error("batch_size must be in [1, 4096]");
  if (weight_decay < 0.0) throw config_error("weight_decay must be non-negative");
  if (max_iterations < 0) throw config_error("max_iterations must be non-negative");
  if (val_every < 1) throw config_error("val_every must be at least 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw config_error("adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw config_error("adam_eps must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 0.9))
    throw config_error("val_fraction must be in (0, 0.9)");
  if (val_patch_count < 1) throw config_error("val_patch_count must be positive");
}

SplitMasks make_column_split(int h, int w, double val_fraction) {
  constexpr int kHalf = PatchSampler::kPatchSize / 2;  // 7
  SplitMasks masks;
  masks.split_col = static_cast<int>(std::floor(w * (1.0 - val_fraction)));
  masks.train_centers = Plane<std::uint8_t>(h, w, 0);
  masks.val_centers = Plane<std::uint8_t>(h, w, 0);
  // Window of a train center must end before split_col; window of a val
  // center must start at or after split_col.
  const int train_hi = masks.split_col - kHalf - 1;  // inclusive center bound
  const int val_lo = masks.split_col + kHalf;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (x <= train_hi) masks.train_centers.at(y, x) = 1;
      if (x >= val_lo) masks.val_centers.at(y, x) = 1;
    }
  }
  if (train_hi < kHalf || val_lo > w - kHalf - 1)
    throw config_error("scene too narrow for the requested validation fraction");
  return masks;
}

namespace {

double validation_loss(net::Network<float>& model, const PatchBatch& val_set,
                       int batch_size, double lambda) {
  // Mean of squared residuals over all valid pixels of the whole set, plus
  // the penalty at the current parameters: same objective as training.
  std::vector<net::ParamRef<float>> refs = net::param_refs(model);
  double sq_sum = 0.0;
  std::int64_t w_count = 0;
  weight_square_sum(refs, &sq_sum, &w_count);

  const int total = val_set.inputs.n;
  double resid_sum = 0.0;
  std::int64_t n_valid = 0;
  for (int begin = 0; begin < total; begin += batch_size) {
    const int n = std::min(batch_size, total - begin);
    nn::Tensor4<float> x(n, val_set.inputs.c, val_set.inputs.h, val_set.inputs.w);
    std::copy(val_set.inputs.chan(begin, 0), val_set.inputs.chan(begin, 0) + x.size(),
              x.data());
    nn::Tensor4<float> pred = net::forward(model, x, /*training=*/false);
    const std::int64_t plane = pred.plane();
    for (int s = 0; s < n; ++s) {
      const float* p = pred.chan(s, 0);
      const float* t = val_set.targets.chan(begin + s, 0);
      const std::uint8_t* v = val_set.target_valid.chan(begin + s, 0);
      for (std::int64_t i = 0; i < plane; ++i) {
        if (!v[i]) continue;
        const double r = static_cast<double>(p[i]) - static_cast<double>(t[i]);
        resid_sum += r * r;
        ++n_valid;
      }
    }
  }
  if (n_valid == 0) throw data_error("validation set has no valid target pixels");
  const double penalty =
      w_count > 0 ? lambda * sq_sum / static_cast<double>(w_count) : 0.0;
  return resid_sum / static_cast<double>(n_valid) + penalty;
}

}  // namespace

TrainOutcome run_training(net::Network<float> model,
                          const std::vector<raster::RasterCube>& cubes,
                          const raster::HeightMap& heights,
                          const prep::NormStats& stats,
                          const prep::BandSubset& subset, const TrainConfig& cfg,
                          std::int64_t start_iteration,
                          AdamState<float>* resume_adam,
                          const model::TrainMeta* resume_meta,
                          const std::function<void(const CurveRow&)>& on_progress) {
  cfg.validate();
  if (start_iteration < 0 || start_iteration > cfg.max_iterations)
    throw config_error("start iteration outside [0, max_iterations]");
  if (cubes.empty()) throw data_error("training needs at least one cube");

  const SplitMasks split = make_column_split(cubes.front().h, cubes.front().w,
                                             cfg.val_fraction);
  PatchSampler train_sampler(cubes, heights, stats, subset, &split.train_centers);
  PatchSampler val_sampler(cubes, heights, stats, subset, &split.val_centers);
  if (train_sampler.eligible_count() == 0)
    throw data_error("no eligible training patches");
  if (val_sampler.eligible_count() == 0)
    throw data_error("no eligible validation patches");

  // The validation set is drawn once per run, independent of progress.
  Rng val_rng(derive_seed(cfg.seed, "valset"));
  const PatchBatch val_set = val_sampler.sample(cfg.val_patch_count, val_rng);

  TrainOutcome out;
  std::vector<net::ParamRef<float>> refs = net::param_refs(model);
  if (resume_adam) {
    out.adam = *resume_adam;
    std::size_t n_trainable = 0;
    for (const auto& ref : refs)
      if (ref.trainable) ++n_trainable;
    if (out.adam.m.size() != n_trainable)
      throw data_error("resumed optimizer state does not match the model");
  } else {
    out.adam.init(refs);
  }
  if (resume_meta) out.meta = *resume_meta;

  const AdamConfig adam_cfg{cfg.base_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};

  net::Network<float> best = model;
  bool best_from_this_run = false;

  // Re-seed the batch stream from the segment start: resuming from iteration
  // k continues with the draws a fresh run would have made at k.
  Rng batch_rng(derive_seed(cfg.seed, "sampler",
                            static_cast<std::uint64_t>(start_iteration)));

  for (std::int64_t iter = start_iteration + 1; iter <= cfg.max_iterations; ++iter) {
    const PatchBatch batch = train_sampler.sample(cfg.batch_size, batch_rng);

    net::ForwardCache<float> cache;
    nn::Tensor4<float> pred = net::forward(model, batch.inputs, /*training=*/true, &cache);

    double sq_sum = 0.0;
    std::int64_t w_count = 0;
    weight_square_sum(refs, &sq_sum, &w_count);
    const LossValue loss = masked_mse(pred, batch.targets, batch.target_valid,
                                      cfg.weight_decay, sq_sum, w_count);
    if (!std::isfinite(loss.total))
      throw numeric_error("training loss became non-finite at iteration " +
                          std::to_string(iter));

    nn::Tensor4<float> dpred = masked_mse_grad(pred, batch.targets, batch.target_valid);
    net::Gradients<float> grads;
    net::backward(model, cache, dpred, grads);
    add_penalty_grad(refs, cfg.weight_decay, w_count, grads);
    adam_step(refs, grads, out.adam, adam_cfg);

    CurveRow row;
    row.iteration = iter;
    row.train_loss = loss.total;
    if (iter % cfg.val_every == 0 || iter == cfg.max_iterations) {
      row.val_loss = validation_loss(model, val_set, cfg.batch_size, cfg.weight_decay);
      row.has_val = true;
      if (!std::isfinite(row.val_loss))
        throw numeric_error("validation loss became non-finite at iteration " +
                            std::to_string(iter));
      if (!(out.meta.best_val_loss <= row.val_loss)) {  // NaN-aware "improved"
        out.meta.best_val_loss = row.val_loss;
        out.meta.best_iteration = iter;
        best = model;
        best_from_this_run = true;
      }
    }
    out.meta.iteration = iter;
    out.curves.push_back(row);
    if (on_progress) on_progress(row);
  }

  out.last = std::move(model);
  // If this segment never improved validation (or never validated at all),
  // `best` falls back to the final parameters; best_updated tells callers
  // whether to prefer an earlier best they may hold.
  out.best_updated = best_from_this_run;
  out.best = best_from_this_run ? std::move(best) : out.last;
  return out;
}

}  // namespace canht::train
