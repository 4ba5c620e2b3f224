// experiment.hpp
//
// One experiment = one JSON config: dataset recipe, segmenter training
// setup, adaptation settings, and a method-by-ratio evaluation grid. The
// drivers here back the command-line subcommands (generate / train / run /
// inspect) and are called directly by tests. Every artifact they write is
// stamped with the config digest, and everything in the emitted table is
// recomputed from the persisted per-clip CSV rows.

#pragma once

#include "vseg/dataio.hpp"
#include "vseg/harness.hpp"
#include "vseg/segmenter.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace vseg {

// Methods accepted in ExperimentConfig::methods. A "distill" run whose
// warm-up covers the whole clip reports itself as "distill_full".
inline const std::vector<std::string> kKnownMethods = {"iss", "entropy_min", "zero_shot",
                                                       "distill"};

struct DatasetConfig {
  ClipSpec spec;
  uint64_t seed = 0;
  int num_clips = 0;
  std::string dir = "dataset";  // relative paths resolve under the output root
};

struct ExperimentConfig {
  DatasetConfig dataset;
  SegmenterConfig segmenter;
  TrainConfig train;
  AdaptationConfig adaptation;  // warmup_ratio is overridden per grid column
  std::vector<std::string> methods;
  std::vector<double> warmup_ratios;
  std::string backend = "oracle";  // oracle | greedy_iou
  std::string checkpoint = "checkpoint.json";
  std::string run_dir = "run";
  bool save_predictions = true;
};

// JSON round-trip. Parsing demands explicit seeds (dataset.seed, train.seed,
// adaptation.seed) so a config file fully pins its outputs; other fields fall
// back to the struct defaults. Malformed JSON or missing keys raise DataError.
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Semantic validation (UsageError): nonempty known methods, ratios in (0, 1],
// a positive clip count, a known backend, plus the nested config validators.
void validate_experiment(const ExperimentConfig& cfg);

// Digest of the canonical JSON form; stamped into every output file.
std::string experiment_digest(const ExperimentConfig& cfg);
// Digest of the dataset section only, so datasets survive grid changes.
std::string dataset_digest(const DatasetConfig& cfg);

// Output root: $VSEG_OUTPUT_ROOT when set, the working directory otherwise.
// Relative config paths resolve under it; absolute paths pass through.
std::filesystem::path output_root();
std::filesystem::path resolve_under_root(const std::string& path);

// ---------------------------------------------------------------------------
// Results on disk
// ---------------------------------------------------------------------------

// One results.csv line. The ratio keeps its literal column text so rows
// group exactly the way they were written.
struct RunRow {
  std::string clip_id;
  std::string method;  // as reported by the run (may be "distill_full")
  std::string ratio_text;
  double warmup_ratio = 0.0;
  double miou = 0.0;
  double wiou = 0.0;
  std::optional<double> mvc8;
  std::optional<double> mvc16;
  double fps = 0.0;
};

struct ResultsFile {
  std::string config_digest;
  std::vector<RunRow> rows;
};

// "# config <digest>" comment, fixed header, one row per (ratio, method,
// clip) in grid order. Undefined mVC windows serialize as empty fields.
void write_results_csv(const std::filesystem::path& path, const ResultsFile& results);
ResultsFile read_results_csv(const std::filesystem::path& path);

// Aligned per-ratio comparison blocks, mean over clips, with per-column
// deltas against the same ratio's "iss" row when present. Built purely from
// CSV rows (the run driver re-reads the file it just wrote).
std::string format_results_table(const ResultsFile& results);

// ---------------------------------------------------------------------------
// Subcommand drivers
// ---------------------------------------------------------------------------

// Writes dataset.num_clips clips (ids clip-0000, clip-0001, ...) under
// <dataset.dir>/clips plus a manifest carrying the dataset digest. Reruns
// are byte-identical; a manifest from a different dataset config triggers a
// stderr warning before regeneration.
void cmd_generate(const ExperimentConfig& cfg);

// Trains the reference segmenter on the generated dataset and saves the
// checkpoint (with a freshly initialized attention add-on, seeded by the
// training seed). Returns the checkpoint for convenience.
Checkpoint cmd_train(const ExperimentConfig& cfg);

// Runs the full method-by-ratio grid over the dataset: writes results.csv,
// table.txt, run_meta.json, per-run diagnostics JSON under diag/, and (when
// save_predictions) prediction dumps under preds/. Clips may run on `jobs`
// threads; output bytes are identical for any job count. Returns the parsed
// results file.
ResultsFile cmd_run(const ExperimentConfig& cfg, int jobs = 1);

// Prints per-run diagnostics (prompts, surviving tracks, propagation calls,
// per-step losses, fusion branch fractions, the fusion-only flag) from a run
// directory. Refuses mixed config digests. With colormaps, also renders the
// persisted predictions to color PPM images under viz/.
void cmd_inspect(const std::filesystem::path& run_dir, bool colormaps = false);

// Fixed palette for rendering class maps (values on the k/255 grid).
Field colorize_labels(const LabelMap& labels);

}  // namespace vseg
