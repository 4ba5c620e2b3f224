// harness.cpp
//
// Warm-up-then-freeze adaptation, frozen fused evaluation, and the
// frame-wise / entropy-minimization / zero-shot-refinement baselines.

#include "vseg/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace vseg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Evaluation prefix boundary: a warm-up covering the whole clip evaluates
// every frame under the frozen model.
int eval_begin_for(int warmup, int total) { return warmup < total ? warmup : 0; }

void check_clip(const VideoClip& clip, const SegmenterConfig& scfg) {
  require(clip.num_frames() > 0, "run: clip has no frames");
  require(clip.height() == scfg.height && clip.width() == scfg.width,
          "run: clip resolution does not match the segmenter");
  require(clip.num_classes == scfg.num_classes,
          "run: clip class count does not match the segmenter");
  require(static_cast<int>(clip.gt_semantic.size()) == clip.num_frames(),
          "run: clip lacks a semantic map per frame");
}

std::string digest_of(const SegmenterConfig& scfg, uint64_t seed, const SegmenterParams& params,
                      const AddOnParams* addon) {
  Checkpoint ckpt;
  ckpt.config = scfg;
  ckpt.seed = seed;
  ckpt.params = params;
  if (addon != nullptr) ckpt.addon = addon_to_params(*addon);
  return checkpoint_digest(ckpt);
}

void require_finite(double value, const char* what) {
  if (!std::isfinite(value))
    throw NumericalError(std::string(what) + " is not finite");
}

std::vector<LabelMap> gt_slice(const VideoClip& clip, int begin) {
  return std::vector<LabelMap>(clip.gt_semantic.begin() + begin, clip.gt_semantic.end());
}

void finish_result(RunResult& result, const VideoClip& clip, int num_classes,
                   bool measure_fps) {
  result.metrics = compute_report(result.predictions, gt_slice(clip, result.eval_begin),
                                  num_classes, {8, 16});
  result.diagnostics.eval_count = static_cast<int>(result.predictions.size());
  if (measure_fps && result.eval_seconds > 0.0)
    result.fps = static_cast<double>(result.predictions.size()) / result.eval_seconds;
}

// The distillation run behind both public entry points.
RunResult run_distill(const VideoClip& clip, const SegmenterConfig& scfg,
                      const SegmenterParams& initial_params, const AddOnParams& initial_addon,
                      PropagationBackend& backend, const AdaptationConfig& cfg, int warmup,
                      const std::string& method) {
  const int total = clip.num_frames();
  const int fh = scfg.feature_height();
  const int fw = scfg.feature_width();

  RunResult result;
  result.clip_id = clip.clip_id;
  result.method = method;
  result.diagnostics.warmup_count = warmup;

  SegmenterParams params = initial_params;
  AddOnParams addon = initial_addon;
  const auto adapt_start = Clock::now();
  const int calls_before = backend.calls();

  // (1) Frame-wise warm-up predictions (and their reliability maps, reused
  // for prompting and scoring).
  std::vector<SegmenterOutput> warm;
  std::vector<Field> warm_logits;
  std::vector<ArrayXXd> warm_rel;
  std::vector<LabelMap> warm_pred;
  warm.reserve(warmup);
  for (int f = 0; f < warmup; ++f) {
    warm.push_back(predict(scfg, params, clip.frames[static_cast<size_t>(f)]));
    warm_logits.push_back(warm.back().logits);
    warm_rel.push_back(reliability_map(warm.back().logits));
    warm_pred.push_back(argmax_field(warm.back().logits));
  }

  // (2) Prompts on the first warm-up frame.
  const std::vector<Prompt> prompts = sample_prompts(warm_logits[0], warm_rel[0], cfg.prompts, 0);
  result.diagnostics.prompt_count = static_cast<int>(prompts.size());

  // (3) One propagation pass over the warm-up window.
  std::vector<SpatioTemporalMask> tracks;
  if (!prompts.empty()) {
    PropagationRequest request;
    request.window = {0, warmup};
    request.prompts = prompts;
    request.predicted_classes = warm_pred;
    tracks = backend.propagate(request);
  }

  // (4) Score each track per class and keep the confident ones. Class
  // frequencies are argmax pixel counts over the warm-up with add-one
  // smoothing, so rarity factors stay defined for absent classes.
  std::vector<SpatioTemporalMask> labeled;
  if (!tracks.empty()) {
    std::vector<double> freq(static_cast<size_t>(scfg.num_classes), 1.0);
    for (const LabelMap& map : warm_pred)
      for (int y = 0; y < scfg.height; ++y)
        for (int x = 0; x < scfg.width; ++x) ++freq[static_cast<size_t>(map(y, x))];
    std::vector<ScoreBreakdown> scores;
    scores.reserve(tracks.size());
    for (const SpatioTemporalMask& track : tracks)
      scores.push_back(
          class_scores(track, warm_logits, warm_rel, freq, cfg.lambda_area, cfg.lambda_freq));
    labeled = assign_labels(std::move(tracks), scores, cfg.accept_floor);
  }
  result.diagnostics.track_count = static_cast<int>(labeled.size());
  result.diagnostics.fusion_only = labeled.empty();

  // (5) Chronological adaptation: advance the momentum branch and the
  // prototype bank at each frame, then take SGD steps on the objective,
  // then fold the step into the momentum branch.
  if (!labeled.empty() && cfg.iters_per_frame > 0) {
    MomentumState momentum = init_momentum(params, addon, cfg.ema_momentum);
    PrototypeBank bank;
    const SegmenterOutput mo0 = predict(scfg, momentum.params, clip.frames[0]);
    update_prototypes(bank, mo0.features, reliability_map(mo0.logits_lowres), labeled, 0);

    for (int f = 1; f < warmup; ++f) {
      const SegmenterOutput mo = predict(scfg, momentum.params, clip.frames[static_cast<size_t>(f)]);
      update_prototypes(bank, mo.features, reliability_map(mo.logits_lowres), labeled, f);

      for (int step = 0; step < cfg.iters_per_frame; ++step) {
        ad::Tape tape;
        auto vars = params_to_vars(tape, params, false, true);
        const ad::Var proj_q = tape.leaf(addon.proj_q);
        const ad::Var proj_k = tape.leaf(addon.proj_k);
        const auto prev = forward_taped(tape, scfg, vars, clip.frames[static_cast<size_t>(f - 1)]);
        const auto cur = forward_taped(tape, scfg, vars, clip.frames[static_cast<size_t>(f)]);
        const ad::Var aligned =
            temporal_attention_taped(tape, proj_q, proj_k, cur.features, prev.features,
                                     prev.logits, fh, fw, 4, cfg.scale_attention_scores);
        const ad::Var loss = total_loss(
            tape,
            distill_loss_taped(tape, cur.logits, &aligned, labeled, f, scfg.height, scfg.width),
            contrastive_loss_taped(tape, cur.features, bank, labeled, f, fh, fw));
        const double value = loss.value()(0, 0);
        require_finite(value, "adaptation loss");
        result.diagnostics.frame_losses.push_back(value);

        tape.backward(loss);
        for (auto& [name, matrix] : params.decoder)
          matrix -= cfg.learning_rate * vars.at(name).grad();
        addon.proj_q -= cfg.learning_rate * proj_q.grad();
        addon.proj_k -= cfg.learning_rate * proj_k.grad();
      }
      ema_update(momentum, params, addon);
    }
  }
  result.adapt_seconds = seconds_since(adapt_start);
  result.diagnostics.backend_calls = backend.calls() - calls_before;

  // (6) Freeze.
  result.param_digest = digest_of(scfg, cfg.seed, params, &addon);
  result.params = params;
  result.addon = addon;

  // (7) Stream the evaluation segment through temporal fusion, chaining the
  // raw previous-frame outputs. The first frame of a full-clip evaluation
  // has no predecessor and keeps its frame-wise prediction.
  const int eval_begin = eval_begin_for(warmup, total);
  result.eval_begin = eval_begin;
  const auto eval_start = Clock::now();
  int64_t pass_pixels = 0;
  int64_t degenerate_pixels = 0;
  int64_t fused_pixels = 0;
  SegmenterOutput prev_out;
  if (eval_begin > 0)
    prev_out = predict(scfg, params, clip.frames[static_cast<size_t>(eval_begin - 1)]);
  for (int f = eval_begin; f < total; ++f) {
    SegmenterOutput cur = predict(scfg, params, clip.frames[static_cast<size_t>(f)]);
    if (f == 0) {
      result.predictions.push_back(argmax_field(cur.logits));
    } else {
      const FusedLogits fused =
          fused_step(addon, cur, prev_out, cfg.tau, cfg.scale_attention_scores);
      result.predictions.push_back(argmax_field(fused.fused));
      pass_pixels += fused.passthrough.count();
      degenerate_pixels += fused.degenerate.count();
      fused_pixels += fused.passthrough.size();
    }
    prev_out = std::move(cur);
  }
  result.eval_seconds = seconds_since(eval_start);
  if (fused_pixels > 0) {
    result.diagnostics.fraction_passthrough =
        static_cast<double>(pass_pixels) / static_cast<double>(fused_pixels);
    result.diagnostics.fraction_degenerate =
        static_cast<double>(degenerate_pixels) / static_cast<double>(fused_pixels);
  }

  finish_result(result, clip, scfg.num_classes, cfg.measure_fps);
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void validate_adaptation_config(const AdaptationConfig& cfg) {
  if (!(cfg.tau >= 0.0 && cfg.tau <= 1.0))
    throw UsageError("adaptation config: tau must lie in [0, 1]");
  if (cfg.lambda_area < 0.0 || cfg.lambda_freq < 0.0)
    throw UsageError("adaptation config: scoring exponents must be nonnegative");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate))
    throw UsageError("adaptation config: learning rate must be a nonnegative number");
  if (cfg.iters_per_frame < 0)
    throw UsageError("adaptation config: iters_per_frame must be nonnegative");
  if (!(cfg.warmup_ratio > 0.0 && cfg.warmup_ratio <= 1.0))
    throw UsageError("adaptation config: warm-up ratio must lie in (0, 1]");
  if (!(cfg.ema_momentum >= 0.0 && cfg.ema_momentum < 1.0))
    throw UsageError("adaptation config: EMA momentum must lie in [0, 1)");
  validate_prompt_config(cfg.prompts);
  if (!(cfg.track_threshold >= 0.0 && cfg.track_threshold <= 1.0))
    throw UsageError("adaptation config: track threshold must lie in [0, 1]");
  if (!(cfg.accept_floor >= 0.0))
    throw UsageError("adaptation config: accept floor must be nonnegative");
}

int warmup_frames(double warmup_ratio, int total_frames) {
  if (!(warmup_ratio > 0.0 && warmup_ratio <= 1.0))
    throw UsageError("warm-up ratio must lie in (0, 1]");
  const long long rounded = std::llround(warmup_ratio * total_frames);
  const long long warmup = std::max<long long>(2, rounded);
  require(warmup <= total_frames, "clip too short for a two-frame warm-up");
  return static_cast<int>(warmup);
}

// ---------------------------------------------------------------------------
// Distillation runs
// ---------------------------------------------------------------------------

RunResult run_w2f(const VideoClip& clip, const SegmenterConfig& scfg,
                  const SegmenterParams& params, const AddOnParams& addon,
                  PropagationBackend& backend, const AdaptationConfig& cfg) {
  validate_adaptation_config(cfg);
  validate_addon(addon);
  check_clip(clip, scfg);
  const int warmup = warmup_frames(cfg.warmup_ratio, clip.num_frames());
  const std::string method = warmup == clip.num_frames() ? "distill_full" : "distill";
  return run_distill(clip, scfg, params, addon, backend, cfg, warmup, method);
}

RunResult run_full_video(const VideoClip& clip, const SegmenterConfig& scfg,
                         const SegmenterParams& params, const AddOnParams& addon,
                         PropagationBackend& backend, const AdaptationConfig& cfg) {
  validate_adaptation_config(cfg);
  validate_addon(addon);
  check_clip(clip, scfg);
  require(clip.num_frames() >= 2, "clip too short for a two-frame warm-up");
  return run_distill(clip, scfg, params, addon, backend, cfg, clip.num_frames(),
                     "distill_full");
}

// ---------------------------------------------------------------------------
// Frame-wise baseline
// ---------------------------------------------------------------------------

RunResult run_frame_wise(const VideoClip& clip, const SegmenterConfig& scfg,
                         const SegmenterParams& params, const AdaptationConfig& cfg) {
  validate_adaptation_config(cfg);
  check_clip(clip, scfg);
  const int total = clip.num_frames();
  const int warmup = warmup_frames(cfg.warmup_ratio, total);

  RunResult result;
  result.clip_id = clip.clip_id;
  result.method = "iss";
  result.diagnostics.warmup_count = warmup;
  result.eval_begin = eval_begin_for(warmup, total);
  result.param_digest = digest_of(scfg, cfg.seed, params, nullptr);
  result.params = params;

  const auto eval_start = Clock::now();
  for (int f = result.eval_begin; f < total; ++f)
    result.predictions.push_back(
        argmax_field(predict(scfg, params, clip.frames[static_cast<size_t>(f)]).logits));
  result.eval_seconds = seconds_since(eval_start);

  finish_result(result, clip, scfg.num_classes, cfg.measure_fps);
  return result;
}

// ---------------------------------------------------------------------------
// Entropy-minimization baseline
// ---------------------------------------------------------------------------

RunResult entropy_min_adapt(const VideoClip& clip, const SegmenterConfig& scfg,
                            const SegmenterParams& initial_params, const AdaptationConfig& cfg) {
  validate_adaptation_config(cfg);
  check_clip(clip, scfg);
  const int total = clip.num_frames();
  const int warmup = warmup_frames(cfg.warmup_ratio, total);
  const double pixel_norm = 1.0 / (static_cast<double>(scfg.height) * scfg.width);

  RunResult result;
  result.clip_id = clip.clip_id;
  result.method = "entropy_min";
  result.diagnostics.warmup_count = warmup;

  SegmenterParams params = initial_params;
  const auto adapt_start = Clock::now();
  for (int f = 0; f < warmup; ++f) {
    for (int step = 0; step < cfg.iters_per_frame; ++step) {
      ad::Tape tape;
      auto vars = params_to_vars(tape, params, false, true);
      const auto out = forward_taped(tape, scfg, vars, clip.frames[static_cast<size_t>(f)]);
      // Mean softmax entropy over pixels: -(1/HW) sum p * log p.
      const ad::Var entropy = tape.scale(
          tape.sum(tape.mul(tape.softmax_rows(out.logits), tape.log_softmax_rows(out.logits))),
          -pixel_norm);
      const double value = entropy.value()(0, 0);
      require_finite(value, "entropy objective");
      result.diagnostics.frame_losses.push_back(value);

      tape.backward(entropy);
      for (auto& [name, matrix] : params.decoder)
        matrix -= cfg.learning_rate * vars.at(name).grad();
    }
  }
  result.adapt_seconds = seconds_since(adapt_start);
  result.param_digest = digest_of(scfg, cfg.seed, params, nullptr);
  result.params = params;

  result.eval_begin = eval_begin_for(warmup, total);
  const auto eval_start = Clock::now();
  for (int f = result.eval_begin; f < total; ++f)
    result.predictions.push_back(
        argmax_field(predict(scfg, params, clip.frames[static_cast<size_t>(f)]).logits));
  result.eval_seconds = seconds_since(eval_start);

  finish_result(result, clip, scfg.num_classes, cfg.measure_fps);
  return result;
}

// ---------------------------------------------------------------------------
// Zero-shot refinement baseline
// ---------------------------------------------------------------------------

RunResult zero_shot_refine(const VideoClip& clip, const SegmenterConfig& scfg,
                           const SegmenterParams& params, PropagationBackend& backend,
                           const AdaptationConfig& cfg) {
  validate_adaptation_config(cfg);
  check_clip(clip, scfg);
  const int total = clip.num_frames();
  const int warmup = warmup_frames(cfg.warmup_ratio, total);

  RunResult result;
  result.clip_id = clip.clip_id;
  result.method = "zero_shot";
  result.diagnostics.warmup_count = warmup;
  result.param_digest = digest_of(scfg, cfg.seed, params, nullptr);
  result.params = params;

  const auto adapt_start = Clock::now();
  const int calls_before = backend.calls();

  // Frame-wise class maps for the whole clip: the propagation request wants
  // one per window frame, and uncovered pixels fall back to them.
  std::vector<LabelMap> frame_pred;
  frame_pred.reserve(total);
  SegmenterOutput first;
  for (int f = 0; f < total; ++f) {
    SegmenterOutput out = predict(scfg, params, clip.frames[static_cast<size_t>(f)]);
    frame_pred.push_back(argmax_field(out.logits));
    if (f == 0) first = std::move(out);
  }

  // First-frame components above the area floor, each scored by its best
  // softmax confidence and prompted at its most confident pixel.
  const ComponentSet comps = connected_components(frame_pred[0]);
  const double area_floor = 0.0005 * scfg.height * scfg.width;
  const Mat probs = ad::softmax_rows_value(first.logits.values);
  std::vector<Prompt> prompts;
  std::vector<double> confidence;  // by prompt index (== track object_id)
  std::vector<int> mask_class;
  for (int c = 0; c < comps.count(); ++c) {
    if (comps.component_area[static_cast<size_t>(c)] < area_floor) continue;
    const int cls = comps.component_class[static_cast<size_t>(c)];
    double best = -1.0;
    int best_x = 0;
    int best_y = 0;
    for (int y = 0; y < scfg.height; ++y)
      for (int x = 0; x < scfg.width; ++x) {
        if (comps.labels(y, x) != c) continue;
        const double p = probs(static_cast<Eigen::Index>(y) * scfg.width + x, cls);
        if (p > best) {
          best = p;
          best_y = y;
          best_x = x;
        }
      }
    prompts.push_back(Prompt{0, best_x, best_y, cls});
    confidence.push_back(best);
    mask_class.push_back(cls);
  }
  result.diagnostics.prompt_count = static_cast<int>(prompts.size());

  // One propagation pass over the whole clip.
  std::vector<SpatioTemporalMask> tracks;
  if (!prompts.empty()) {
    PropagationRequest request;
    request.window = {0, total};
    request.prompts = prompts;
    request.predicted_classes = frame_pred;
    tracks = backend.propagate(request);
  }
  result.diagnostics.track_count = static_cast<int>(tracks.size());
  result.diagnostics.backend_calls = backend.calls() - calls_before;
  result.adapt_seconds = seconds_since(adapt_start);

  // Merge per evaluation frame: the most confident covering track wins
  // (ties to the earlier prompt), uncovered pixels keep the frame-wise
  // prediction.
  result.eval_begin = eval_begin_for(warmup, total);
  const auto eval_start = Clock::now();
  for (int f = result.eval_begin; f < total; ++f) {
    LabelMap merged =
        argmax_field(predict(scfg, params, clip.frames[static_cast<size_t>(f)]).logits);
    for (int y = 0; y < scfg.height; ++y)
      for (int x = 0; x < scfg.width; ++x) {
        int best_track = -1;
        for (size_t i = 0; i < tracks.size(); ++i) {
          if (!tracks[i].masks[static_cast<size_t>(f)](y, x)) continue;
          if (best_track < 0 ||
              confidence[static_cast<size_t>(tracks[i].object_id)] >
                  confidence[static_cast<size_t>(tracks[static_cast<size_t>(best_track)].object_id)])
            best_track = static_cast<int>(i);
        }
        if (best_track >= 0)
          merged(y, x) =
              mask_class[static_cast<size_t>(tracks[static_cast<size_t>(best_track)].object_id)];
      }
    result.predictions.push_back(std::move(merged));
  }
  result.eval_seconds = seconds_since(eval_start);

  finish_result(result, clip, scfg.num_classes, cfg.measure_fps);
  return result;
}

}  // namespace vseg
