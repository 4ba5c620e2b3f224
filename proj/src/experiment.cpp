// experiment.cpp
//
// Experiment config JSON round-trip, digest stamping, the dataset /
// checkpoint / results artifacts, the method-by-ratio run driver, and the
// inspect report.

#include "vseg/experiment.hpp"

#include "vseg/digest.hpp"
#include "vseg/image_io.hpp"
#include "vseg/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>
#include <utility>

namespace vseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Small file/format helpers
// ---------------------------------------------------------------------------

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_for_write(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

json read_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(std::string(what) + " not found: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(std::string(what) + " is not valid JSON (" + path.string() + "): " + e.what());
  }
}

std::string format_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string format_ratio(double r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", r);
  return buf;
}

std::string pad_right(std::string s, size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& text, const char* what) {
  try {
    size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError(std::string("results file: bad ") + what + " value '" + text + "'");
  }
}

// ---------------------------------------------------------------------------
// Config JSON sections
// ---------------------------------------------------------------------------

json segmenter_to_json(const SegmenterConfig& cfg) {
  return json{{"height", cfg.height},
              {"width", cfg.width},
              {"num_classes", cfg.num_classes},
              {"enc1_channels", cfg.enc1_channels},
              {"enc2_channels", cfg.enc2_channels},
              {"feature_dim", cfg.feature_dim}};
}

SegmenterConfig segmenter_from_json(const json& j) {
  SegmenterConfig cfg;
  cfg.height = j.value("height", cfg.height);
  cfg.width = j.value("width", cfg.width);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.enc1_channels = j.value("enc1_channels", cfg.enc1_channels);
  cfg.enc2_channels = j.value("enc2_channels", cfg.enc2_channels);
  cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
  return cfg;
}

json train_to_json(const TrainConfig& cfg) {
  return json{{"steps", cfg.steps},         {"learning_rate", cfg.learning_rate},
              {"seed", cfg.seed},           {"use_adam", cfg.use_adam},
              {"adam_beta1", cfg.adam_beta1}, {"adam_beta2", cfg.adam_beta2},
              {"adam_eps", cfg.adam_eps}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig cfg;
  cfg.steps = j.value("steps", cfg.steps);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.seed = j.at("seed").get<uint64_t>();  // seeds are always explicit
  cfg.use_adam = j.value("use_adam", cfg.use_adam);
  cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
  cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
  return cfg;
}

json adaptation_to_json(const AdaptationConfig& cfg) {
  return json{{"tau", cfg.tau},
              {"lambda_area", cfg.lambda_area},
              {"lambda_freq", cfg.lambda_freq},
              {"learning_rate", cfg.learning_rate},
              {"iters_per_frame", cfg.iters_per_frame},
              {"warmup_ratio", cfg.warmup_ratio},
              {"ema_momentum", cfg.ema_momentum},
              {"prompts",
               {{"per_class_top_k", cfg.prompts.per_class_top_k},
                {"reliability_floor", cfg.prompts.reliability_floor},
                {"min_spacing", cfg.prompts.min_spacing}}},
              {"track_threshold", cfg.track_threshold},
              {"accept_floor", cfg.accept_floor},
              {"seed", cfg.seed},
              {"measure_fps", cfg.measure_fps},
              {"scale_attention_scores", cfg.scale_attention_scores}};
}

AdaptationConfig adaptation_from_json(const json& j) {
  AdaptationConfig cfg;
  cfg.tau = j.value("tau", cfg.tau);
  cfg.lambda_area = j.value("lambda_area", cfg.lambda_area);
  cfg.lambda_freq = j.value("lambda_freq", cfg.lambda_freq);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.iters_per_frame = j.value("iters_per_frame", cfg.iters_per_frame);
  cfg.warmup_ratio = j.value("warmup_ratio", cfg.warmup_ratio);
  cfg.ema_momentum = j.value("ema_momentum", cfg.ema_momentum);
  if (j.contains("prompts")) {
    const json& p = j.at("prompts");
    cfg.prompts.per_class_top_k = p.value("per_class_top_k", cfg.prompts.per_class_top_k);
    cfg.prompts.reliability_floor = p.value("reliability_floor", cfg.prompts.reliability_floor);
    cfg.prompts.min_spacing = p.value("min_spacing", cfg.prompts.min_spacing);
  }
  cfg.track_threshold = j.value("track_threshold", cfg.track_threshold);
  cfg.accept_floor = j.value("accept_floor", cfg.accept_floor);
  cfg.seed = j.at("seed").get<uint64_t>();  // seeds are always explicit
  cfg.measure_fps = j.value("measure_fps", cfg.measure_fps);
  cfg.scale_attention_scores = j.value("scale_attention_scores", cfg.scale_attention_scores);
  return cfg;
}

// Canonical digest payload: the science of the experiment (data recipe,
// model, training, adaptation, grid, backend), never the storage paths.
json digest_payload(const ExperimentConfig& cfg) {
  return json{{"dataset",
               {{"spec", spec_to_json(cfg.dataset.spec)},
                {"seed", cfg.dataset.seed},
                {"num_clips", cfg.dataset.num_clips}}},
              {"segmenter", segmenter_to_json(cfg.segmenter)},
              {"train", train_to_json(cfg.train)},
              {"adaptation", adaptation_to_json(cfg.adaptation)},
              {"methods", cfg.methods},
              {"warmup_ratios", cfg.warmup_ratios},
              {"backend", cfg.backend}};
}

// ---------------------------------------------------------------------------
// Dataset artifacts
// ---------------------------------------------------------------------------

std::string clip_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip-%04d", index);
  return buf;
}

json read_manifest(const ExperimentConfig& cfg) {
  const fs::path path = resolve_under_root(cfg.dataset.dir) / "manifest.json";
  json manifest = read_json_file(path, "dataset manifest");
  try {
    if (manifest.at("config").get<std::string>() != dataset_digest(cfg.dataset))
      throw DataError("dataset at " + path.parent_path().string() +
                      " was generated from a different dataset configuration");
    return manifest;
  } catch (const json::exception& e) {
    throw DataError("dataset manifest is malformed: " + std::string(e.what()));
  }
}

std::vector<VideoClip> load_clips(const ExperimentConfig& cfg) {
  const json manifest = read_manifest(cfg);
  const fs::path clips_dir = resolve_under_root(cfg.dataset.dir) / "clips";
  std::vector<VideoClip> clips;
  for (const auto& id : manifest.at("clip_ids"))
    clips.push_back(read_clip(clips_dir / id.get<std::string>()));
  if (clips.empty()) throw DataError("dataset manifest lists no clips");
  return clips;
}

bool segmenter_configs_equal(const SegmenterConfig& a, const SegmenterConfig& b) {
  return a.height == b.height && a.width == b.width && a.num_classes == b.num_classes &&
         a.enc1_channels == b.enc1_channels && a.enc2_channels == b.enc2_channels &&
         a.feature_dim == b.feature_dim;
}

// ---------------------------------------------------------------------------
// Grid execution
// ---------------------------------------------------------------------------

std::unique_ptr<PropagationBackend> make_backend(const ExperimentConfig& cfg,
                                                 const VideoClip& clip) {
  if (cfg.backend == "oracle") return std::make_unique<OracleBackend>(clip);
  if (cfg.backend == "greedy_iou")
    return std::make_unique<GreedyIouBackend>(cfg.adaptation.track_threshold);
  throw UsageError("unknown propagation backend: " + cfg.backend);
}

struct CellResult {
  RunRow row;
  json diagnostics;
  std::vector<LabelMap> predictions;
  std::string subdir;  // "<method>_r<ratio>" under diag/ and preds/
};

CellResult run_cell(const ExperimentConfig& cfg, const std::string& digest,
                    const VideoClip& clip, const SegmenterParams& params,
                    const AddOnParams& addon, const std::string& method, double ratio) {
  AdaptationConfig acfg = cfg.adaptation;
  acfg.warmup_ratio = ratio;

  RunResult r;
  if (method == "iss") {
    r = run_frame_wise(clip, cfg.segmenter, params, acfg);
  } else if (method == "entropy_min") {
    r = entropy_min_adapt(clip, cfg.segmenter, params, acfg);
  } else if (method == "zero_shot") {
    auto backend = make_backend(cfg, clip);
    r = zero_shot_refine(clip, cfg.segmenter, params, *backend, acfg);
  } else if (method == "distill") {
    auto backend = make_backend(cfg, clip);
    r = run_w2f(clip, cfg.segmenter, params, addon, *backend, acfg);
  } else {
    throw UsageError("unknown method: " + method);
  }

  CellResult cell;
  cell.row.clip_id = r.clip_id;
  cell.row.method = r.method;
  cell.row.ratio_text = format_ratio(ratio);
  cell.row.warmup_ratio = ratio;
  cell.row.miou = r.metrics.miou;
  cell.row.wiou = r.metrics.wiou;
  cell.row.mvc8 = r.metrics.mvc.at(8);
  cell.row.mvc16 = r.metrics.mvc.at(16);
  cell.row.fps = r.fps;
  cell.subdir = r.method + "_r" + cell.row.ratio_text;

  cell.diagnostics = json{{"config", digest},
                          {"clip_id", r.clip_id},
                          {"method", r.method},
                          {"warmup_ratio", ratio},
                          {"warmup_frames", r.diagnostics.warmup_count},
                          {"eval_begin", r.eval_begin},
                          {"eval_frames", r.diagnostics.eval_count},
                          {"prompts", r.diagnostics.prompt_count},
                          {"tracks", r.diagnostics.track_count},
                          {"backend_calls", r.diagnostics.backend_calls},
                          {"fusion_only", r.diagnostics.fusion_only},
                          {"losses", r.diagnostics.frame_losses},
                          {"fraction_passthrough", r.diagnostics.fraction_passthrough},
                          {"fraction_degenerate", r.diagnostics.fraction_degenerate},
                          {"param_digest", r.param_digest},
                          {"miou", r.metrics.miou},
                          {"wiou", r.metrics.wiou}};
  if (cfg.save_predictions) cell.predictions = std::move(r.predictions);
  return cell;
}

// ---------------------------------------------------------------------------
// Table aggregation (from parsed CSV rows only)
// ---------------------------------------------------------------------------

struct MethodAggregate {
  std::string method;
  int clips = 0;
  double miou = 0.0;
  double wiou = 0.0;
  std::optional<double> mvc8;
  std::optional<double> mvc16;
  double fps = 0.0;
};

std::string aggregate_cell(double value, const MethodAggregate* baseline, double base_value,
                           bool base_defined) {
  char buf[64];
  if (baseline != nullptr && base_defined)
    std::snprintf(buf, sizeof buf, "%.2f (%+.2f)", value, value - base_value);
  else
    std::snprintf(buf, sizeof buf, "%.2f", value);
  return buf;
}

std::string optional_cell(const std::optional<double>& value, const MethodAggregate* baseline,
                          const std::optional<double>& base) {
  if (!value.has_value()) return "n/a";
  return aggregate_cell(*value, baseline, base.value_or(0.0),
                        baseline != nullptr && base.has_value());
}

}  // namespace

// ---------------------------------------------------------------------------
// Config round-trip and digests
// ---------------------------------------------------------------------------

json experiment_to_json(const ExperimentConfig& cfg) {
  json j = digest_payload(cfg);
  j["dataset"]["dir"] = cfg.dataset.dir;
  j["checkpoint"] = cfg.checkpoint;
  j["run_dir"] = cfg.run_dir;
  j["save_predictions"] = cfg.save_predictions;
  return j;
}

ExperimentConfig experiment_from_json(const json& j) {
  try {
    ExperimentConfig cfg;
    const json& d = j.at("dataset");
    cfg.dataset.spec = spec_from_json(d.at("spec"));
    cfg.dataset.seed = d.at("seed").get<uint64_t>();
    cfg.dataset.num_clips = d.at("num_clips").get<int>();
    cfg.dataset.dir = d.value("dir", cfg.dataset.dir);
    if (j.contains("segmenter")) cfg.segmenter = segmenter_from_json(j.at("segmenter"));
    cfg.train = train_from_json(j.at("train"));
    cfg.adaptation = adaptation_from_json(j.at("adaptation"));
    cfg.methods = j.at("methods").get<std::vector<std::string>>();
    cfg.warmup_ratios = j.at("warmup_ratios").get<std::vector<double>>();
    cfg.backend = j.value("backend", cfg.backend);
    cfg.checkpoint = j.value("checkpoint", cfg.checkpoint);
    cfg.run_dir = j.value("run_dir", cfg.run_dir);
    cfg.save_predictions = j.value("save_predictions", cfg.save_predictions);
    return cfg;
  } catch (const json::exception& e) {
    throw DataError("experiment config: " + std::string(e.what()));
  }
}

ExperimentConfig load_experiment(const fs::path& path) {
  return experiment_from_json(read_json_file(path, "experiment config"));
}

void validate_experiment(const ExperimentConfig& cfg) {
  validate_spec(cfg.dataset.spec);
  if (cfg.dataset.num_clips < 1) throw UsageError("empty dataset: num_clips must be >= 1");
  if (cfg.dataset.dir.empty() || cfg.checkpoint.empty() || cfg.run_dir.empty())
    throw UsageError("dataset dir, checkpoint and run_dir paths must be nonempty");
  if (cfg.segmenter.num_classes != cfg.dataset.spec.num_classes)
    throw UsageError("segmenter num_classes must match the dataset spec");
  if (cfg.train.steps < 0 || !(cfg.train.learning_rate >= 0.0))
    throw UsageError("training steps and learning rate must be nonnegative");
  validate_adaptation_config(cfg.adaptation);
  if (cfg.methods.empty()) throw UsageError("at least one method is required");
  for (const std::string& m : cfg.methods) {
    if (std::find(kKnownMethods.begin(), kKnownMethods.end(), m) == kKnownMethods.end())
      throw UsageError("unknown method: " + m);
    if (std::count(cfg.methods.begin(), cfg.methods.end(), m) != 1)
      throw UsageError("duplicate method: " + m);
  }
  if (cfg.warmup_ratios.empty()) throw UsageError("at least one warm-up ratio is required");
  for (double r : cfg.warmup_ratios)
    if (!(r > 0.0 && r <= 1.0)) throw UsageError("warm-up ratios must lie in (0, 1]");
  if (cfg.backend != "oracle" && cfg.backend != "greedy_iou")
    throw UsageError("unknown propagation backend: " + cfg.backend);
}

std::string experiment_digest(const ExperimentConfig& cfg) {
  return digest_string(digest_payload(cfg).dump());
}

std::string dataset_digest(const DatasetConfig& cfg) {
  const json j{{"spec", spec_to_json(cfg.spec)}, {"seed", cfg.seed}, {"num_clips", cfg.num_clips}};
  return digest_string(j.dump());
}

fs::path output_root() {
  const char* env = std::getenv("VSEG_OUTPUT_ROOT");
  if (env != nullptr && env[0] != '\0') return fs::path(env);
  return fs::current_path();
}

fs::path resolve_under_root(const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p : output_root() / p;
}

// ---------------------------------------------------------------------------
// Results CSV
// ---------------------------------------------------------------------------

static const char* kCsvHeader = "clip_id,method,warmup_ratio,miou,wiou,mvc8,mvc16,fps";

void write_results_csv(const fs::path& path, const ResultsFile& results) {
  std::ofstream out = open_for_write(path);
  out << "# config " << results.config_digest << "\n" << kCsvHeader << "\n";
  for (const RunRow& row : results.rows) {
    out << row.clip_id << ',' << row.method << ',' << row.ratio_text << ','
        << format_fixed(row.miou) << ',' << format_fixed(row.wiou) << ','
        << (row.mvc8 ? format_fixed(*row.mvc8) : std::string()) << ','
        << (row.mvc16 ? format_fixed(*row.mvc16) : std::string()) << ','
        << format_fixed(row.fps) << "\n";
  }
}

ResultsFile read_results_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("results file not found: " + path.string());
  ResultsFile results;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# config ", 0) != 0)
    throw DataError("results file lacks the config digest line: " + path.string());
  results.config_digest = line.substr(9);
  if (!std::getline(in, line) || line != kCsvHeader)
    throw DataError("results file has an unrecognized header: " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 8) throw DataError("results file row has " + std::to_string(f.size()) +
                                       " fields, expected 8: " + line);
    RunRow row;
    row.clip_id = f[0];
    row.method = f[1];
    row.ratio_text = f[2];
    row.warmup_ratio = parse_double(f[2], "warmup_ratio");
    row.miou = parse_double(f[3], "miou");
    row.wiou = parse_double(f[4], "wiou");
    if (!f[5].empty()) row.mvc8 = parse_double(f[5], "mvc8");
    if (!f[6].empty()) row.mvc16 = parse_double(f[6], "mvc16");
    row.fps = parse_double(f[7], "fps");
    results.rows.push_back(std::move(row));
  }
  return results;
}

std::string format_results_table(const ResultsFile& results) {
  // Group rows by ratio text, then aggregate per method, both in
  // first-appearance order.
  std::vector<std::string> ratio_order;
  for (const RunRow& row : results.rows)
    if (std::find(ratio_order.begin(), ratio_order.end(), row.ratio_text) == ratio_order.end())
      ratio_order.push_back(row.ratio_text);

  std::ostringstream out;
  out << "# config " << results.config_digest << "\n";
  for (const std::string& ratio : ratio_order) {
    std::vector<MethodAggregate> aggregates;
    for (const RunRow& row : results.rows) {
      if (row.ratio_text != ratio) continue;
      auto it = std::find_if(aggregates.begin(), aggregates.end(),
                             [&](const MethodAggregate& a) { return a.method == row.method; });
      if (it == aggregates.end()) {
        aggregates.push_back(MethodAggregate{row.method, 0, 0.0, 0.0, {}, {}, 0.0});
        it = aggregates.end() - 1;
      }
      ++it->clips;
      it->miou += row.miou;
      it->wiou += row.wiou;
      it->fps += row.fps;
      if (row.mvc8) it->mvc8 = it->mvc8.value_or(0.0) + *row.mvc8;
      if (row.mvc16) it->mvc16 = it->mvc16.value_or(0.0) + *row.mvc16;
    }
    for (MethodAggregate& a : aggregates) {
      // Means. mVC averages over the clips where the window fit.
      int mvc8_count = 0;
      int mvc16_count = 0;
      for (const RunRow& row : results.rows) {
        if (row.ratio_text != ratio || row.method != a.method) continue;
        if (row.mvc8) ++mvc8_count;
        if (row.mvc16) ++mvc16_count;
      }
      a.miou /= a.clips;
      a.wiou /= a.clips;
      a.fps /= a.clips;
      if (a.mvc8) a.mvc8 = *a.mvc8 / mvc8_count;
      if (a.mvc16) a.mvc16 = *a.mvc16 / mvc16_count;
    }

    const MethodAggregate* baseline = nullptr;
    for (const MethodAggregate& a : aggregates)
      if (a.method == "iss") baseline = &a;

    size_t method_width = 8;
    for (const MethodAggregate& a : aggregates)
      method_width = std::max(method_width, a.method.size() + 2);

    out << "\nwarm-up ratio " << ratio << " — mean over " << aggregates.front().clips
        << " clip" << (aggregates.front().clips == 1 ? "" : "s") << "\n";
    out << pad_right("method", method_width) << pad_right("mIoU", 16) << pad_right("wIoU", 16)
        << pad_right("mVC8", 16) << pad_right("mVC16", 16) << pad_right("FPS", 16) << "\n";
    for (const MethodAggregate& a : aggregates) {
      out << pad_right(a.method, method_width)
          << pad_right(aggregate_cell(a.miou, baseline, baseline ? baseline->miou : 0.0, true),
                       16)
          << pad_right(aggregate_cell(a.wiou, baseline, baseline ? baseline->wiou : 0.0, true),
                       16)
          << pad_right(optional_cell(a.mvc8, baseline, baseline ? baseline->mvc8 : std::nullopt),
                       16)
          << pad_right(
                 optional_cell(a.mvc16, baseline, baseline ? baseline->mvc16 : std::nullopt), 16)
          << pad_right(aggregate_cell(a.fps, baseline, baseline ? baseline->fps : 0.0, true), 16)
          << "\n";
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// generate / train
// ---------------------------------------------------------------------------

void cmd_generate(const ExperimentConfig& cfg) {
  validate_experiment(cfg);
  const fs::path base = resolve_under_root(cfg.dataset.dir);
  const fs::path clips_dir = base / "clips";
  const fs::path manifest_path = base / "manifest.json";
  const std::string digest = dataset_digest(cfg.dataset);

  if (fs::exists(manifest_path)) {
    const json old = read_json_file(manifest_path, "dataset manifest");
    if (!old.contains("config") || old["config"] != digest) {
      std::fprintf(stderr,
                   "warning: dataset at %s was generated from a different configuration; "
                   "regenerating\n",
                   base.string().c_str());
      std::error_code ec;
      fs::remove_all(clips_dir, ec);
    }
  }
  ensure_dir(clips_dir);

  Rng rng(cfg.dataset.seed);
  json clip_ids = json::array();
  for (int i = 0; i < cfg.dataset.num_clips; ++i) {
    const std::string id = clip_name(i);
    const VideoClip clip = generate_clip(cfg.dataset.spec, rng.next_u64(), id);
    write_clip(clip, clips_dir / id);
    clip_ids.push_back(id);
  }

  const json manifest{{"config", digest},
                      {"num_clips", cfg.dataset.num_clips},
                      {"seed", cfg.dataset.seed},
                      {"spec", spec_to_json(cfg.dataset.spec)},
                      {"clip_ids", clip_ids}};
  open_for_write(manifest_path) << manifest.dump(2) << "\n";
  std::printf("generated %d clips under %s\n", cfg.dataset.num_clips, clips_dir.string().c_str());
}

Checkpoint cmd_train(const ExperimentConfig& cfg) {
  validate_experiment(cfg);
  const std::vector<VideoClip> clips = load_clips(cfg);
  const TrainResult trained = train_reference(cfg.segmenter, clips, cfg.train);

  Checkpoint ckpt;
  ckpt.config = cfg.segmenter;
  ckpt.seed = cfg.train.seed;
  ckpt.params = trained.params;
  ckpt.addon = addon_to_params(init_addon(cfg.segmenter.feature_dim, cfg.train.seed));

  const fs::path path = resolve_under_root(cfg.checkpoint);
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  save_checkpoint(ckpt, path);
  std::printf("trained %d steps on %zu clips: loss %.4f -> %.4f\ncheckpoint %s (%s)\n",
              cfg.train.steps, clips.size(), trained.initial_loss, trained.final_loss,
              path.string().c_str(), checkpoint_digest(ckpt).c_str());
  return ckpt;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

ResultsFile cmd_run(const ExperimentConfig& cfg, int jobs) {
  validate_experiment(cfg);
  if (jobs < 1) throw UsageError("jobs must be >= 1");

  const std::vector<VideoClip> clips = load_clips(cfg);
  const Checkpoint ckpt = load_checkpoint(resolve_under_root(cfg.checkpoint));
  if (!segmenter_configs_equal(ckpt.config, cfg.segmenter))
    throw DataError("checkpoint was trained with a different segmenter configuration");

  AddOnParams addon;
  const bool needs_addon =
      std::find(cfg.methods.begin(), cfg.methods.end(), "distill") != cfg.methods.end();
  if (needs_addon) {
    if (ckpt.addon.empty())
      throw DataError("checkpoint has no attention add-on; run train with this config");
    addon = addon_from_params(ckpt.addon);
  }

  const std::string digest = experiment_digest(cfg);
  const int num_clips = static_cast<int>(clips.size());
  const int cells_per_clip =
      static_cast<int>(cfg.warmup_ratios.size() * cfg.methods.size());
  std::vector<CellResult> cells(static_cast<size_t>(num_clips) * cells_per_clip);

  // Grid order: ratio-major, then method, then clip — the CSV row order.
  // Work splits by clip; every slot is preassigned, so any job count
  // produces identical bytes.
  auto run_clip = [&](int c) {
    int cell_index = 0;
    for (double ratio : cfg.warmup_ratios)
      for (const std::string& method : cfg.methods) {
        const size_t slot =
            static_cast<size_t>(cell_index) * num_clips + static_cast<size_t>(c);
        cells[slot] = run_cell(cfg, digest, clips[static_cast<size_t>(c)], ckpt.params, addon,
                               method, ratio);
        ++cell_index;
      }
  };

  const int workers = std::min(jobs, num_clips);
  if (workers <= 1) {
    for (int c = 0; c < num_clips; ++c) run_clip(c);
  } else {
    std::vector<std::thread> pool;
    std::mutex error_mutex;
    std::exception_ptr first_error;
    for (int k = 0; k < workers; ++k)
      pool.emplace_back([&, k] {
        try {
          for (int c = k; c < num_clips; c += workers) run_clip(c);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  // Persist everything, then rebuild the table strictly from the CSV.
  const fs::path run_root = resolve_under_root(cfg.run_dir);
  ensure_dir(run_root);
  ResultsFile results;
  results.config_digest = digest;
  for (const CellResult& cell : cells) results.rows.push_back(cell.row);
  const fs::path csv_path = run_root / "results.csv";
  write_results_csv(csv_path, results);

  for (const CellResult& cell : cells) {
    const fs::path diag_dir = run_root / "diag" / cell.subdir;
    ensure_dir(diag_dir);
    open_for_write(diag_dir / (cell.row.clip_id + ".json")) << cell.diagnostics.dump(2) << "\n";
    if (cfg.save_predictions) {
      const fs::path pred_dir = run_root / "preds" / cell.subdir / cell.row.clip_id;
      ensure_dir(pred_dir);
      write_predictions(cell.predictions, cfg.segmenter.num_classes, pred_dir);
    }
  }

  const ResultsFile reread = read_results_csv(csv_path);
  const std::string table = format_results_table(reread);
  open_for_write(run_root / "table.txt") << table;
  std::fputs(table.c_str(), stdout);

  const json meta{{"config", digest},
                  {"experiment", experiment_to_json(cfg)},
                  {"checkpoint_digest", checkpoint_digest(ckpt)},
                  {"clips", [&] {
                     json ids = json::array();
                     for (const VideoClip& clip : clips) ids.push_back(clip.clip_id);
                     return ids;
                   }()}};
  open_for_write(run_root / "run_meta.json") << meta.dump(2) << "\n";
  return reread;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

Field colorize_labels(const LabelMap& labels) {
  // Distinct byte-grid colors; class c beyond the palette cycles.
  static const int palette[][3] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                                   {214, 39, 40},  {148, 103, 189}, {140, 86, 75},
                                   {227, 119, 194}, {127, 127, 127}, {188, 189, 34},
                                   {23, 190, 207}};
  constexpr int palette_size = static_cast<int>(sizeof(palette) / sizeof(palette[0]));
  const int h = static_cast<int>(labels.rows());
  const int w = static_cast<int>(labels.cols());
  Field image(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int* rgb = palette[labels(y, x) % palette_size];
      for (int ch = 0; ch < 3; ++ch)
        image.values(static_cast<Eigen::Index>(y) * w + x, ch) = rgb[ch] / 255.0;
    }
  return image;
}

void cmd_inspect(const fs::path& run_dir, bool colormaps) {
  const fs::path meta_path = run_dir / "run_meta.json";
  if (!fs::exists(meta_path)) throw DataError("missing run artifacts: " + meta_path.string());
  const json meta = read_json_file(meta_path, "run metadata");
  std::string digest;
  try {
    digest = meta.at("config").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError("run metadata is malformed: " + std::string(e.what()));
  }

  std::vector<fs::path> diag_files;
  const fs::path diag_root = run_dir / "diag";
  if (fs::exists(diag_root))
    for (const auto& cell : fs::directory_iterator(diag_root)) {
      if (!cell.is_directory()) continue;
      for (const auto& entry : fs::directory_iterator(cell.path()))
        if (entry.path().extension() == ".json") diag_files.push_back(entry.path());
    }
  if (diag_files.empty()) throw DataError("run directory has no diagnostics: " + run_dir.string());
  std::sort(diag_files.begin(), diag_files.end());

  for (const fs::path& path : diag_files) {
    const json d = read_json_file(path, "run diagnostics");
    try {
      if (d.at("config").get<std::string>() != digest)
        throw DataError("mixed config digests in run directory: " + path.string());
      std::printf("%s  %s  r%s: prompts %d, tracks %d, propagation calls %d, warm-up %d, eval %d\n",
                  d.at("clip_id").get<std::string>().c_str(),
                  d.at("method").get<std::string>().c_str(),
                  format_ratio(d.at("warmup_ratio").get<double>()).c_str(),
                  d.at("prompts").get<int>(), d.at("tracks").get<int>(),
                  d.at("backend_calls").get<int>(), d.at("warmup_frames").get<int>(),
                  d.at("eval_frames").get<int>());
      std::printf("  fusion branches: passthrough %.3f, degenerate %.3f\n",
                  d.at("fraction_passthrough").get<double>(),
                  d.at("fraction_degenerate").get<double>());
      const auto losses = d.at("losses").get<std::vector<double>>();
      if (!losses.empty()) {
        std::printf("  losses (%zu):", losses.size());
        for (double v : losses) std::printf(" %.4f", v);
        std::printf("\n");
      }
      if (d.at("fusion_only").get<bool>()) std::printf("  fusion-only adaptation\n");
    } catch (const json::exception& e) {
      throw DataError("run diagnostics are malformed (" + path.string() + "): " + e.what());
    }
  }
  std::printf("[%zu runs, config %s]\n", diag_files.size(), digest.c_str());

  if (colormaps) {
    const fs::path preds_root = run_dir / "preds";
    if (!fs::exists(preds_root))
      throw DataError("run stored no predictions; rerun with save_predictions");
    for (const auto& cell : fs::directory_iterator(preds_root))
      for (const auto& clip_dir : fs::directory_iterator(cell.path())) {
        const std::vector<LabelMap> preds = read_predictions(clip_dir.path());
        const fs::path viz_dir =
            run_dir / "viz" / cell.path().filename() / clip_dir.path().filename();
        ensure_dir(viz_dir);
        for (size_t i = 0; i < preds.size(); ++i) {
          char name[32];
          std::snprintf(name, sizeof name, "%05zu.ppm", i);
          write_ppm(viz_dir / name, colorize_labels(preds[i]));
        }
      }
    std::printf("wrote colormaps under %s\n", (run_dir / "viz").string().c_str());
  }
}

}  // namespace vseg
