// harness.hpp
//
// Adaptation and evaluation drivers. The primary run adapts the decoder and
// attention add-on on a warm-up prefix of the clip (distilling propagated
// mask tracks), freezes everything, and evaluates the rest with temporal
// fusion. Baselines: plain frame-wise inference, per-frame entropy
// minimization, and zero-shot refinement through propagated first-frame
// components.

#pragma once

#include "vseg/dataio.hpp"
#include "vseg/fusion.hpp"
#include "vseg/losses.hpp"
#include "vseg/metrics.hpp"
#include "vseg/propagation.hpp"
#include "vseg/segmenter.hpp"
#include "vseg/targets.hpp"
#include "vseg/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vseg {

struct AdaptationConfig {
  double tau = 0.8;             // fusion pass-through threshold
  double lambda_area = 0.3;     // mask scoring exponents
  double lambda_freq = 0.8;
  double learning_rate = 0.001;  // plain SGD on decoder + add-on
  int iters_per_frame = 5;
  double warmup_ratio = 0.1;    // in (0, 1]
  double ema_momentum = 0.99;
  PromptConfig prompts;
  double track_threshold = 0.4;  // greedy backend survival threshold
  double accept_floor = 0.1;     // minimum class score to keep a track
  uint64_t seed = 0;
  bool measure_fps = false;      // wall-clock timings make output nondeterministic
  bool scale_attention_scores = false;
};

// Throws UsageError on out-of-range values.
void validate_adaptation_config(const AdaptationConfig& cfg);

// Warm-up prefix length: max(2, round(ratio * total)). Throws DataError
// when the clip cannot supply two warm-up frames.
int warmup_frames(double warmup_ratio, int total_frames);

struct RunDiagnostics {
  int warmup_count = 0;
  int eval_count = 0;
  int prompt_count = 0;
  int track_count = 0;    // labeled tracks that survived scoring
  int backend_calls = 0;  // propagation invocations during this run
  bool fusion_only = false;  // no labeled masks: adaptation degenerated
  // One entry per gradient step, frame-major: (warmup - 1) * iters_per_frame
  // for the distillation run, warmup * iters_per_frame for entropy descent.
  std::vector<double> frame_losses;
  // Fusion branch usage over all fused evaluation pixels.
  double fraction_passthrough = 0.0;
  double fraction_degenerate = 0.0;
};

struct RunResult {
  std::string clip_id;
  std::string method;
  int eval_begin = 0;                 // clip index of predictions.front()
  std::vector<LabelMap> predictions;  // evaluation segment only
  MetricsReport metrics;
  double adapt_seconds = 0.0;
  double eval_seconds = 0.0;
  double fps = 0.0;             // eval frames / eval seconds; 0 unless measured
  std::string param_digest;     // post-adaptation parameter digest
  // Frozen state the evaluation actually ran with (the inputs untouched for
  // non-adapting methods; the add-on only participates in distillation runs).
  SegmenterParams params;
  AddOnParams addon;
  RunDiagnostics diagnostics;
};

// Warm-up-then-freeze with distillation ("distill"):
//   1. frame-wise predictions over the warm-up prefix;
//   2. prompt sampling on the first frame;
//   3. one propagation pass over the warm-up window;
//   4. per-class scoring and labeling of the propagated tracks;
//   5. per warm-up frame t >= 2: advance the momentum branch and the
//      prototypes, take iters_per_frame SGD steps on the distillation +
//      contrastive objective (decoder and add-on only), then the EMA update;
//   6. freeze;
//   7. stream the remaining frames through temporal fusion — the backend is
//      never invoked here.
// Evaluation covers [warmup, frames); a warm-up spanning the whole clip
// evaluates every frame (the full-video mode). Zero labeled tracks degrade
// the run to fusion-only inference (flagged, not an error).
RunResult run_w2f(const VideoClip& clip, const SegmenterConfig& scfg,
                  const SegmenterParams& params, const AddOnParams& addon,
                  PropagationBackend& backend, const AdaptationConfig& cfg);

// run_w2f with the warm-up forced to the whole clip ("distill_full");
// evaluation covers every frame under the frozen adapted model.
RunResult run_full_video(const VideoClip& clip, const SegmenterConfig& scfg,
                         const SegmenterParams& params, const AddOnParams& addon,
                         PropagationBackend& backend, const AdaptationConfig& cfg);

// Frame-wise baseline ("iss"): untouched parameters, no fusion, evaluated
// over the same segment the W2F split would evaluate.
RunResult run_frame_wise(const VideoClip& clip, const SegmenterConfig& scfg,
                         const SegmenterParams& params, const AdaptationConfig& cfg);

// Entropy-minimization baseline ("entropy_min"): per warm-up frame,
// iters_per_frame decoder-only SGD steps on the mean prediction entropy,
// then frozen frame-wise evaluation over the same segment.
RunResult entropy_min_adapt(const VideoClip& clip, const SegmenterConfig& scfg,
                            const SegmenterParams& params, const AdaptationConfig& cfg);

// Zero-shot refinement baseline ("zero_shot"): 8-connected components of
// the first frame's argmax map (any class), minus those covering less than
// 0.05% of the image; each surviving component is scored by its maximum
// softmax confidence and prompted at its most confident pixel; one
// propagation pass spans the whole clip. Per frame, pixels under exactly
// one track take its class, contested pixels take the most confident
// track's class (ties: lower object id), uncovered pixels keep the
// frame-wise prediction. Evaluated over the same segment as the W2F split.
RunResult zero_shot_refine(const VideoClip& clip, const SegmenterConfig& scfg,
                           const SegmenterParams& params, PropagationBackend& backend,
                           const AdaptationConfig& cfg);

}  // namespace vseg
