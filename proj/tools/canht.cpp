#include <cstdio>
#include <exception>

#include <CLI11.hpp>

#include "canht/cli/commands.hpp"
#include "canht/core/error.hpp"

namespace {

// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 numeric failure, 4 malformed or inconsistent data.
int guarded(int (*fn)(const void*), const void* args) {
  try {
    return fn(args);
  } catch (const canht::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const canht::numeric_error& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const canht::data_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

template <typename Args>
int run(int (*cmd)(const Args&), const Args& args) {
  struct Pack {
    int (*cmd)(const Args&);
    const Args* args;
  } pack{cmd, &args};
  return guarded(
      [](const void* p) {
        const Pack* pk = static_cast<const Pack*>(p);
        return pk->cmd(*pk->args);
      },
      &pack);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"canopy height mapping toolkit"};
  app.set_version_flag("--version", std::string("canht ") + canht::cli::kToolVersion);
  app.require_subcommand(1);

  canht::cli::SynthesizeArgs syn;
  CLI::App* synth = app.add_subcommand("synthesize", "generate a synthetic scene");
  synth->add_option("--spec", syn.spec_path, "scene spec JSON")->required();
  synth->add_option("--out", syn.out_dir, "output directory")->required();

  canht::cli::TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "train a model on a scene");
  train->add_option("--config", tr.config_path, "training config JSON")->required();
  train->add_option("--data", tr.data_dir, "scene directory")->required();
  train->add_option("--out", tr.out_dir, "output directory")->required();
  train->add_option("--resume", tr.resume_path, "checkpoint to resume from");

  canht::cli::PredictArgs pr;
  CLI::App* predict = app.add_subcommand("predict", "predict heights for a scene");
  predict->add_option("--checkpoint", pr.checkpoint_path, "trained checkpoint")
      ->required();
  predict->add_option("--data", pr.data_dir, "scene directory")->required();
  predict->add_option("--out", pr.out_dir, "output directory")->required();
  predict->add_option("--tile", pr.tile_size, "tile size in pixels");
  predict->add_option("--overlap", pr.overlap, "tile overlap in pixels");
  predict->add_flag("--mask-snow", pr.mask_snow, "invalidate snow pixels");
  predict->add_flag("--pgm", pr.write_pgm, "also write greyscale previews");

  canht::cli::EvaluateArgs ev;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a prediction");
  evaluate->add_option("--pred", ev.pred_path, "predicted height map")->required();
  evaluate->add_option("--ref", ev.ref_path, "reference height map")->required();
  evaluate->add_option("--out", ev.out_dir, "output directory")->required();
  double max_ref = 0.0;
  CLI::Option* max_ref_opt = evaluate->add_option(
      "--max-ref", max_ref, "drop reference pixels at or above this height");
  evaluate->add_option("--bin-width", ev.bin_width, "error-bin width in metres");
  evaluate->add_option("--pred-mincloud", ev.pred_mincloud_path,
                       "least-cloudy-date fusion map for the comparison table");
  evaluate->add_option("--pred-date", ev.date_pred_paths,
                       "per-date maps (2+) for the date-spread statistics");

  canht::cli::AblateArgs ab;
  CLI::App* ablate = app.add_subcommand("ablate", "band/kernel ablation study");
  ablate->add_option("--config", ab.config_path, "ablation config JSON")->required();
  ablate->add_option("--data", ab.data_dir, "training scene directory")->required();
  ablate->add_option("--out", ab.out_dir, "output directory")->required();
  ablate->add_option("--test-data", ab.test_data_dir,
                     "separate test scene (defaults to held-out columns)");

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) return run(canht::cli::cmd_synthesize, syn);
  if (train->parsed()) return run(canht::cli::cmd_train, tr);
  if (predict->parsed()) {
    if (pr.tile_size < 1) {
      std::fprintf(stderr, "config error: tile size must be positive\n");
      return 2;
    }
    return run(canht::cli::cmd_predict, pr);
  }
  if (evaluate->parsed()) {
    if (max_ref_opt->count() > 0) ev.max_ref = max_ref;
    return run(canht::cli::cmd_evaluate, ev);
  }
  if (ablate->parsed()) return run(canht::cli::cmd_ablate, ab);
  return 1;
}
