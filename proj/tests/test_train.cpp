#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "canht/train/adam.hpp"
#include "canht/train/loss.hpp"
#include "canht/train/sampler.hpp"
#include "canht/train/trainer.hpp"
#include "test_support.hpp"

using namespace canht;
using nn::Tensor4;

namespace {

// Identity normalization for a band list: mean 0, stddev 1.
prep::NormStats identity_stats(const std::vector<std::string>& bands) {
  prep::NormStats stats;
  stats.band_ids = bands;
  stats.mean.assign(bands.size(), 0.0);
  stats.stddev.assign(bands.size(), 1.0);
  return stats;
}

net::ModelConfig tiny_config(int in_channels) {
  net::ModelConfig cfg;
  cfg.in_channels = in_channels;
  cfg.trunk_width = 4;
  cfg.n_blocks = 1;
  cfg.entry_depths = {3, 3};
  cfg.init_seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("masked objective: hand-computed value") {
  Tensor4<float> pred(1, 1, 2, 2);
  Tensor4<float> target(1, 1, 2, 2);
  Tensor4<std::uint8_t> valid(1, 1, 2, 2, 1);
  pred.v = {1, 2, 3, 4};
  target.v = {0, 0, 5, 8};
  valid.v = {1, 0, 1, 1};
  // Residuals on valid pixels: 1, skipped, -2, -4 -> mean of {1, 4, 16} = 7.
  const train::LossValue loss = train::masked_mse(pred, target, valid,
                                                  /*lambda=*/0.1,
                                                  /*weight_sq_sum=*/50.0,
                                                  /*weight_count=*/10);
  CHECK(loss.n_valid == 3);
  CHECK(loss.data_term == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(loss.penalty == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(loss.total == doctest::Approx(7.5).epsilon(1e-12));

  SUBCASE("invalid pixels contribute nothing, even NaN") {
    Tensor4<float> t2 = target;
    t2.v[1] = std::numeric_limits<float>::quiet_NaN();
    const train::LossValue l2 = train::masked_mse(pred, t2, valid, 0.1, 50.0, 10);
    CHECK(l2.total == loss.total);
    CHECK(l2.data_term == loss.data_term);
  }
  SUBCASE("no valid pixels throws") {
    valid.fill(0);
    CHECK_THROWS_AS(train::masked_mse(pred, target, valid, 0.0, 0.0, 0), data_error);
    CHECK_THROWS_AS(train::masked_mse_grad(pred, target, valid), data_error);
  }
  SUBCASE("zero weight count disables the penalty") {
    const train::LossValue l3 = train::masked_mse(pred, target, valid, 0.1, 50.0, 0);
    CHECK(l3.penalty == 0.0);
  }
}

TEST_CASE("masked objective gradient: 2r/n on valid pixels, zero elsewhere") {
  Tensor4<float> pred(1, 1, 2, 2);
  Tensor4<float> target(1, 1, 2, 2);
  Tensor4<std::uint8_t> valid(1, 1, 2, 2, 1);
  pred.v = {1, 2, 3, 4};
  target.v = {0, 9, 5, 8};
  valid.v = {1, 0, 1, 1};
  const Tensor4<float> g = train::masked_mse_grad(pred, target, valid);
  CHECK(g.v[0] == doctest::Approx(2.0 * 1.0 / 3.0));
  CHECK(g.v[1] == 0.0f);  // invalid: no contribution
  CHECK(g.v[2] == doctest::Approx(2.0 * -2.0 / 3.0));
  CHECK(g.v[3] == doctest::Approx(2.0 * -4.0 / 3.0));
}

TEST_CASE("weight penalty terms cover exactly the trainable tensors") {
  auto net = net::build<float>(tiny_config(2));
  auto refs = net::param_refs(net);

  double sq = 0.0;
  std::int64_t count = 0;
  train::weight_square_sum(refs, &sq, &count);

  double expect_sq = 0.0;
  std::int64_t expect_count = 0;
  for (const auto& ref : refs) {
    if (!ref.trainable) continue;
    for (float v : ref.tensor->v) expect_sq += static_cast<double>(v) * v;
    expect_count += ref.tensor->size();
  }
  CHECK(sq == doctest::Approx(expect_sq).epsilon(1e-12));
  CHECK(count == expect_count);

  // Running statistics are not parameters: blowing them up changes nothing.
  net.blocks[0][0].bn_state.running_var.fill(1e9f);
  double sq2 = 0.0;
  std::int64_t count2 = 0;
  train::weight_square_sum(refs, &sq2, &count2);
  CHECK(sq2 == sq);
  CHECK(count2 == count);

  SUBCASE("penalty gradient adds 2*lambda*w/W") {
    net::Gradients<float> grads;
    for (const auto& ref : refs)
      if (ref.trainable) grads.g.push_back(Tensor4<float>::like(*ref.tensor));
    train::add_penalty_grad(refs, /*lambda=*/0.05, count, grads);
    std::size_t j = 0;
    for (const auto& ref : refs) {
      if (!ref.trainable) continue;
      for (std::int64_t i = 0; i < ref.tensor->size(); ++i) {
        const double expect = 2.0 * 0.05 * ref.tensor->v[i] / static_cast<double>(count);
        CHECK(grads.g[j].v[i] == doctest::Approx(expect).epsilon(1e-6));
      }
      ++j;
    }
  }
}

TEST_CASE("optimizer: first step, bias correction, and state evolution") {
  // A standalone parameter list exercises the optimizer without a network.
  Tensor4<float> theta(3, 1, 1, 1);
  theta.v = {1.0f, -1.0f, 0.5f};
  std::vector<net::ParamRef<float>> refs{{"theta", &theta, true}};
  train::AdamState<float> state;
  state.init(refs);
  CHECK(state.t == 0);
  CHECK(state.m.size() == 1);

  net::Gradients<float> grads;
  grads.g.emplace_back(3, 1, 1, 1);
  grads.g[0].v = {0.5f, -0.25f, 2.0f};

  const train::AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  const auto before = theta.v;
  train::adam_step(refs, grads, state, cfg);
  CHECK(state.t == 1);
  // After bias correction the first step is lr * g / (|g| + eps): one full
  // learning-rate step in the gradient's direction regardless of its scale.
  for (int i = 0; i < 3; ++i) {
    const double g = grads.g[0].v[i];
    const double expect = before[i] - 0.01 * g / (std::abs(g) + 1e-8);
    CHECK(theta.v[i] == doctest::Approx(expect).epsilon(1e-6));
  }

  SUBCASE("two steps follow the reference recursion") {
    // Replay the documented update rule in plain double arithmetic.
    net::Gradients<float> g2;
    g2.g.emplace_back(3, 1, 1, 1);
    g2.g[0].v = {-1.0f, 0.75f, 0.1f};
    train::adam_step(refs, g2, state, cfg);
    CHECK(state.t == 2);
    for (int i = 0; i < 3; ++i) {
      double m = 0.0, v = 0.0, th = before[i];
      for (int step = 1; step <= 2; ++step) {
        const double g = step == 1 ? grads.g[0].v[i] : g2.g[0].v[i];
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, step));
        const double vhat = v / (1.0 - std::pow(0.999, step));
        th -= 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
      }
      CHECK(theta.v[i] == doctest::Approx(th).epsilon(1e-5));
    }
  }
  SUBCASE("first-step scale invariance") {
    Tensor4<float> tb(1, 1, 1, 1);
    tb.v = {1.0f};
    std::vector<net::ParamRef<float>> rb{{"b", &tb, true}};
    train::AdamState<float> sb;
    sb.init(rb);
    net::Gradients<float> gb;
    gb.g.emplace_back(1, 1, 1, 1);
    gb.g[0].v = {1e-4f};
    train::adam_step(rb, gb, sb, cfg);
    const float small_step = 1.0f - tb.v[0];

    tb.v = {1.0f};
    sb.init(rb);
    gb.g[0].v = {1e4f};
    train::adam_step(rb, gb, sb, cfg);
    const float big_step = 1.0f - tb.v[0];
    CHECK(small_step == doctest::Approx(big_step).epsilon(1e-3));
  }
  SUBCASE("non-finite gradient is rejected by tensor name") {
    net::Gradients<float> gnan;
    gnan.g.emplace_back(3, 1, 1, 1);
    gnan.g[0].v = {0.0f, std::numeric_limits<float>::quiet_NaN(), 0.0f};
    CHECK_THROWS_WITH_AS(train::adam_step(refs, gnan, state, cfg),
                         doctest::Contains("theta"), numeric_error);
  }
  SUBCASE("gradient list size mismatch") {
    net::Gradients<float> gshort;
    CHECK_THROWS_AS(train::adam_step(refs, gshort, state, cfg), data_error);
  }
}

TEST_CASE("patch sampler: eligibility window and cloud rejection") {
  const std::vector<std::string> bands{"B02"};
  const prep::BandSubset subset{"one", {"B02"}};

  SUBCASE("window bounds give (H-14)*(W-14) centers per date") {
    std::vector<raster::RasterCube> cubes{testsup::make_cube(20, 22, 13, 1),
                                          testsup::make_cube(20, 22, 13, 2)};
    auto heights = testsup::make_heights(20, 22);
    train::PatchSampler sampler(cubes, heights, identity_stats(bands), subset);
    CHECK(sampler.eligible_count() == 2 * (20 - 14) * (22 - 14));
  }
  SUBCASE("cloud fraction boundary is exact: 22 cloudy in, 23 out") {
    // A 15x15 scene has exactly one candidate window (the whole image);
    // 10% of 225 pixels = 22.5, so 23 cloudy pixels must reject it and 22
    // must keep it.
    for (const auto& [n_cloudy, expect] :
         std::vector<std::pair<int, std::int64_t>>{{22, 1}, {23, 0}}) {
      auto cube = testsup::make_cube(15, 15, 13, 3);
      int placed = 0;
      for (int y = 0; y < 15 && placed < n_cloudy; ++y)
        for (int x = 0; x < 15 && placed < n_cloudy; ++x) {
          cube.cloud_prob.at(y, x) = 50.0f;
          ++placed;
        }
      auto heights = testsup::make_heights(15, 15);
      train::PatchSampler sampler({cube}, heights, identity_stats(bands), subset);
      CHECK(sampler.eligible_count() == expect);
    }
  }
  SUBCASE("probability exactly at the threshold is not cloudy") {
    auto cube = testsup::make_cube(15, 15, 13, 4);
    cube.cloud_prob.fill(10.0f);  // all pixels exactly at the threshold
    auto heights = testsup::make_heights(15, 15);
    train::PatchSampler sampler({cube}, heights, identity_stats(bands), subset);
    CHECK(sampler.eligible_count() == 1);
  }
  SUBCASE("invalid ground truth removes centers") {
    std::vector<raster::RasterCube> cubes{testsup::make_cube(20, 20, 13, 5),
                                          testsup::make_cube(20, 20, 13, 6)};
    auto heights = testsup::make_heights(20, 20);
    heights.valid.at(8, 9) = 0;
    train::PatchSampler sampler(cubes, heights, identity_stats(bands), subset);
    CHECK(sampler.eligible_count() == 2 * (6 * 6 - 1));
  }
  SUBCASE("center mask restricts the eligible set") {
    auto cube = testsup::make_cube(20, 20, 13, 7);
    auto heights = testsup::make_heights(20, 20);
    Plane<std::uint8_t> mask(20, 20, 0);
    mask.at(7, 7) = 1;
    mask.at(2, 2) = 1;  // outside the window bounds: ignored
    train::PatchSampler sampler({cube}, heights, identity_stats(bands), subset,
                                &mask);
    CHECK(sampler.eligible_count() == 1);
  }
  SUBCASE("scene smaller than a patch throws") {
    auto cube = testsup::make_cube(14, 20, 13, 8);
    auto heights = testsup::make_heights(14, 20);
    CHECK_THROWS_AS(
        train::PatchSampler({cube}, heights, identity_stats(bands), subset),
        data_error);
  }
}

TEST_CASE("patch sampler: batch contents") {
  const std::vector<std::string> bands{"B02", "B04"};
  const prep::BandSubset subset{"pair", {"B02", "B04"}};
  auto cube = testsup::make_cube(15, 15, 13, 9);
  auto heights = testsup::make_heights(15, 15);
  heights.valid.at(0, 3) = 0;  // inside the window, away from the center
  heights.heights.at(0, 3) = std::numeric_limits<float>::quiet_NaN();

  prep::NormStats stats;
  stats.band_ids = bands;
  stats.mean = {0.25, 0.5};
  stats.stddev = {0.1, 0.2};

  train::PatchSampler sampler({cube}, heights, stats, subset);
  REQUIRE(sampler.eligible_count() == 1);
  Rng rng(1000);
  const train::PatchBatch batch = sampler.sample(2, rng);
  CHECK(batch.inputs.n == 2);
  CHECK(batch.inputs.c == 2);
  CHECK(batch.inputs.h == 15);

  // Inputs are the normalized bands in subset order.
  const int b02 = cube.band_index("B02");
  const int b04 = cube.band_index("B04");
  for (int y = 0; y < 15; ++y)
    for (int x = 0; x < 15; ++x) {
      CHECK(batch.inputs.at(0, 0, y, x) ==
            doctest::Approx((cube.bands[b02].at(y, x) - 0.25) / 0.1).epsilon(1e-5));
      CHECK(batch.inputs.at(0, 1, y, x) ==
            doctest::Approx((cube.bands[b04].at(y, x) - 0.5) / 0.2).epsilon(1e-5));
    }
  // Targets mirror the reference heights; the invalid pixel is NaN + masked.
  CHECK(batch.target_valid.at(0, 0, 0, 3) == 0);
  CHECK(std::isnan(batch.targets.at(0, 0, 0, 3)));
  CHECK(batch.target_valid.at(0, 0, 7, 7) == 1);
  CHECK(batch.targets.at(0, 0, 7, 7) == heights.heights.at(7, 7));

  SUBCASE("same seed, same batch") {
    Rng r1(42), r2(42);
    const auto a = sampler.sample(3, r1);
    const auto b = sampler.sample(3, r2);
    CHECK(a.inputs.v == b.inputs.v);
    CHECK(a.target_valid.v == b.target_valid.v);
  }
  SUBCASE("batch size must be positive") {
    Rng r(1);
    CHECK_THROWS_AS(sampler.sample(0, r), config_error);
  }
}

TEST_CASE("patch sampler draws centers uniformly") {
  // Two eligible centers; over many draws each should get half, within a
  // 3-sigma binomial band.
  const prep::BandSubset subset{"one", {"B02"}};
  auto cube = testsup::make_cube(15, 16, 13, 10);
  auto heights = testsup::make_heights(15, 16);
  heights.heights.at(7, 7) = 5.0f;
  heights.heights.at(7, 8) = 9.0f;
  train::PatchSampler sampler({cube}, heights, identity_stats({"B02"}), subset);
  REQUIRE(sampler.eligible_count() == 2);

  Rng rng(77);
  const int n = 10000;
  const train::PatchBatch batch = sampler.sample(n, rng);
  int first = 0;
  for (int s = 0; s < n; ++s) {
    const float center = batch.targets.at(s, 0, 7, 7);
    REQUIRE((center == 5.0f || center == 9.0f));
    if (center == 5.0f) ++first;
  }
  // sigma = sqrt(n * 0.5 * 0.5) = 50; allow 3 sigma.
  CHECK(std::abs(first - n / 2) < 150);
}

TEST_CASE("column split keeps whole windows inside their region") {
  const train::SplitMasks split = train::make_column_split(60, 100, 0.2);
  CHECK(split.split_col == 80);
  // Train centers: window [x-7, x+7] must end before the split column.
  for (int x = 0; x < 100; ++x) {
    CHECK(split.train_centers.at(30, x) == (x <= 72 ? 1 : 0));
    CHECK(split.val_centers.at(30, x) == (x >= 87 ? 1 : 0));
  }
  // No center may be admissible for both regions.
  for (int y = 0; y < 60; ++y)
    for (int x = 0; x < 100; ++x)
      CHECK(split.train_centers.at(y, x) + split.val_centers.at(y, x) <= 1);

  CHECK_THROWS_AS(train::make_column_split(60, 30, 0.2), config_error);
}

TEST_CASE("training loop: descent, curves, and deterministic resume") {
  // Random heights around 20 m: the model mostly has to learn the mean, which
  // a tiny network manages within a couple hundred iterations.
  std::vector<raster::RasterCube> cubes{testsup::make_cube(40, 50, 13, 21)};
  raster::HeightMap heights = testsup::make_heights(40, 50, 22);

  const prep::BandSubset subset{"pair", {"B02", "B03"}};
  prep::NormStats stats = identity_stats({"B02", "B03"});

  train::TrainConfig cfg;
  cfg.base_lr = 3e-3;
  cfg.batch_size = 8;
  cfg.max_iterations = 150;
  cfg.val_every = 50;
  cfg.val_patch_count = 16;
  cfg.seed = 5;
  cfg.weight_decay = 1e-4;
  cfg.val_fraction = 0.35;  // a 50-column scene needs a wide holdout strip

  auto model = net::build<float>(tiny_config(2));
  const train::TrainOutcome out =
      train::run_training(model, cubes, heights, stats, subset, cfg);

  REQUIRE(out.curves.size() == 150);
  CHECK(out.curves.front().iteration == 1);
  CHECK(out.curves.back().iteration == 150);
  CHECK(out.meta.iteration == 150);
  // Validation fires at multiples of val_every and at the final iteration.
  for (const auto& row : out.curves)
    CHECK(row.has_val == (row.iteration % 50 == 0));
  CHECK(out.best_updated);
  CHECK(out.meta.best_iteration % 50 == 0);
  CHECK(std::isfinite(out.meta.best_val_loss));
  // The loss falls: predictions start near zero against ~20 m targets, so the
  // initial objective is a few hundred.
  const double first = out.curves.front().train_loss;
  const double last = out.curves.back().train_loss;
  CHECK(last < 0.5 * first);

  SUBCASE("a longer run reproduces the shorter run's rows exactly") {
    train::TrainConfig cfg2 = cfg;
    cfg2.max_iterations = 100;
    const train::TrainOutcome shorter =
        train::run_training(net::build<float>(tiny_config(2)), cubes, heights,
                            stats, subset, cfg2);
    REQUIRE(shorter.curves.size() == 100);
    for (int i = 0; i < 100; ++i) {
      CHECK(shorter.curves[i].train_loss == out.curves[i].train_loss);
      if (shorter.curves[i].has_val && out.curves[i].has_val)
        CHECK(shorter.curves[i].val_loss == out.curves[i].val_loss);
    }
  }
  SUBCASE("resuming from a checkpoint is deterministic") {
    train::TrainConfig half = cfg;
    half.max_iterations = 75;
    const train::TrainOutcome first_half =
        train::run_training(net::build<float>(tiny_config(2)), cubes, heights,
                            stats, subset, half);
    CHECK(first_half.meta.iteration == 75);

    auto resume_once = [&]() {
      train::AdamState<float> adam = first_half.adam;
      return train::run_training(first_half.last, cubes, heights, stats, subset,
                                 cfg, 75, &adam, &first_half.meta);
    };
    train::TrainOutcome a = resume_once();
    train::TrainOutcome b = resume_once();
    CHECK(a.meta.iteration == 150);
    CHECK(a.curves.size() == 75);
    CHECK(a.curves.front().iteration == 76);
    CHECK(a.adam.t == 150);
    auto ra = net::param_refs(a.last);
    auto rb = net::param_refs(b.last);
    for (std::size_t i = 0; i < ra.size(); ++i)
      CHECK(ra[i].tensor->v == rb[i].tensor->v);
    CHECK(a.adam.m == b.adam.m);
    CHECK(a.adam.v == b.adam.v);
  }
  SUBCASE("zero remaining iterations is a no-op") {
    train::AdamState<float> adam = out.adam;
    const train::TrainOutcome done = train::run_training(
        out.last, cubes, heights, stats, subset, cfg, 150, &adam, &out.meta);
    CHECK(done.curves.empty());
    CHECK(!done.best_updated);
    CHECK(done.meta.iteration == 150);
    auto ra = net::param_refs(const_cast<net::Network<float>&>(done.last));
    auto rb = net::param_refs(const_cast<net::Network<float>&>(out.last));
    for (std::size_t i = 0; i < ra.size(); ++i)
      CHECK(ra[i].tensor->v == rb[i].tensor->v);
  }
  SUBCASE("start iteration beyond the schedule is rejected") {
    CHECK_THROWS_AS(train::run_training(model, cubes, heights, stats, subset,
                                        cfg, 151),
                    config_error);
  }
}

TEST_CASE("training configuration validation") {
  train::TrainConfig cfg;
  cfg.base_lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = train::TrainConfig{};
  cfg.val_fraction = 0.95;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = train::TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = train::TrainConfig{};
  cfg.adam_beta1 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  CHECK_NOTHROW(train::TrainConfig{}.validate());
}
