// vseg_main.cpp
//
// Command-line driver: generate a synthetic dataset, train the reference
// segmenter, run the method-by-ratio evaluation grid, and inspect run
// diagnostics. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numerical failure.

#include "vseg/experiment.hpp"

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace {

// Flags override config fields; everything else comes from the JSON file.
struct Overrides {
  int num_clips = -1;
  std::string backend;
  std::vector<std::string> methods;
  std::vector<double> ratios;
  bool measure_fps = false;

  void apply(vseg::ExperimentConfig& cfg) const {
    if (num_clips >= 0) cfg.dataset.num_clips = num_clips;
    if (!backend.empty()) cfg.backend = backend;
    if (!methods.empty()) cfg.methods = methods;
    if (!ratios.empty()) cfg.warmup_ratios = ratios;
    if (measure_fps) cfg.adaptation.measure_fps = true;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporally consistent video segmentation by test-time distillation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string run_dir;
  int jobs = 1;
  bool colormaps = false;
  Overrides overrides;

  CLI::App* generate = app.add_subcommand("generate", "Write the synthetic clip dataset");
  generate->add_option("config", config_path, "experiment config JSON")->required();
  generate->add_option("--clips", overrides.num_clips, "override dataset.num_clips");

  CLI::App* train = app.add_subcommand("train", "Train the reference segmenter checkpoint");
  train->add_option("config", config_path, "experiment config JSON")->required();

  CLI::App* run = app.add_subcommand("run", "Run the method-by-ratio grid and emit tables");
  run->add_option("config", config_path, "experiment config JSON")->required();
  run->add_option("--jobs", jobs, "clip-level worker threads (1 = serial)");
  run->add_option("--backend", overrides.backend, "override the propagation backend");
  run->add_option("--methods", overrides.methods, "override the method list")->delimiter(',');
  run->add_option("--ratios", overrides.ratios, "override the warm-up ratios")->delimiter(',');
  run->add_flag("--measure-fps", overrides.measure_fps,
                "time evaluation and fill the fps column (output no longer byte-stable)");

  CLI::App* inspect = app.add_subcommand("inspect", "Print per-run diagnostics from a run dir");
  inspect->add_option("run_dir", run_dir, "run directory written by `run`")->required();
  inspect->add_flag("--colormap", colormaps, "render stored predictions to color PPM images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (inspect->parsed()) {
      vseg::cmd_inspect(run_dir, colormaps);
      return 0;
    }
    vseg::ExperimentConfig cfg = vseg::load_experiment(config_path);
    overrides.apply(cfg);
    if (generate->parsed()) {
      vseg::cmd_generate(cfg);
    } else if (train->parsed()) {
      vseg::cmd_train(cfg);
    } else if (run->parsed()) {
      vseg::cmd_run(cfg, jobs);
    }
    return 0;
  } catch (const vseg::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const vseg::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const vseg::NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
