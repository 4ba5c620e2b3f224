// fusion.hpp
//
// Temporal fusion add-on: cross-frame attention that re-aligns the previous
// frame's logits to the current frame (queries from current features, keys
// from previous features, previous logits as values), plus reliability-aware
// pixel-wise blending of the aligned and current logits.

#pragma once

#include "vseg/segmenter.hpp"
#include "vseg/tape.hpp"
#include "vseg/types.hpp"

#include <cstdint>
#include <vector>

namespace vseg {

// Below this, the blended denominator R_t + R_addon counts as degenerate and
// the current-frame logits pass through unchanged.
inline constexpr double kFusionDegenerateEps = 1e-12;

// Query/key projections of the attention add-on. Square D x D in practice
// (initialized near identity); rectangular D x D' is accepted as long as the
// two maps agree on D'.
struct AddOnParams {
  Mat proj_q;
  Mat proj_k;
};

// Identity + N(0, 0.01^2) entries, seed-pinned (query matrix filled first,
// row-major).
AddOnParams init_addon(int feature_dim, uint64_t seed);

// Shape/finiteness validation; throws on violation.
void validate_addon(const AddOnParams& addon);

// Named-matrix view for checkpointing and momentum updates.
ParamSet addon_to_params(const AddOnParams& addon);
AddOnParams addon_from_params(const ParamSet& params);

// ---------------------------------------------------------------------------
// Attention: aligned previous-frame logits
// ---------------------------------------------------------------------------

// Differentiable attention between feature grids. features_* are
// (feature_h*feature_w) x D, logits_prev is (H*W) x K with
// H = feature_h*factor, W = feature_w*factor. Rows of softmax(Q K^T) sum
// to 1; values are the previous logits area-downsampled to the feature
// grid; the attended result is bilinearly upsampled back to H x W. Raw
// scores are used unless scale_scores divides them by sqrt(D').
ad::Var temporal_attention_taped(ad::Tape& tape, ad::Var proj_q, ad::Var proj_k,
                                 ad::Var features_t, ad::Var features_prev, ad::Var logits_prev,
                                 int feature_h, int feature_w, int factor,
                                 bool scale_scores = false);

// Plain inference wrapper (no gradients). The upsample factor is derived
// from the logits/feature resolutions, which must match exactly.
Field temporal_attention(const AddOnParams& addon, const Field& features_t,
                         const Field& features_prev, const Field& logits_prev,
                         bool scale_scores = false);

// ---------------------------------------------------------------------------
// Reliability-aware fusion
// ---------------------------------------------------------------------------

// Differentiable analogue of reliability_map(): per-pixel (H*W, 1) map
// R = 1 - E/max(E) from the softmax entropy of logits rows; a constant 1
// when max entropy < 1e-12. Bit-identical to the plain version.
ad::Var reliability_taped(ad::Tape& tape, ad::Var logits);

struct FusedLogits {
  Field fused;              // H x W x K blended logits
  ArrayXXd weight_current;  // H x W weight on the current-frame logits
  ArrayXXd weight_addon;    // H x W weight on the aligned previous logits
  BoolMap passthrough;      // pixels where R_t >= tau (current logits kept)
  BoolMap degenerate;       // blended pixels whose denominator vanished
};

// Per pixel: current logits verbatim when R_t >= tau, otherwise the
// reliability-weighted mix (R_t*S_t + R_addon*S_addon)/(R_t + R_addon),
// falling back to the current logits when the denominator is below
// kFusionDegenerateEps. Weights are nonnegative and sum to 1 everywhere.
FusedLogits fuse_logits(const Field& logits_t, const Field& logits_addon, const ArrayXXd& rel_t,
                        const ArrayXXd& rel_addon, double tau);

struct TapedFusion {
  ad::Var fused;                      // (H*W, K)
  std::vector<uint8_t> passthrough;   // per pixel row, R_t >= tau
  std::vector<uint8_t> degenerate;    // per pixel row, vanished denominator
};

// Differentiable fusion; reliability inputs are (H*W, 1) columns. Branches
// are chosen from the current values and gradients flow only through the
// branch actually taken.
TapedFusion fuse_logits_taped(ad::Tape& tape, ad::Var logits_t, ad::Var logits_addon,
                              ad::Var rel_t, ad::Var rel_addon, double tau);

// One frozen-inference fusion step: align the previous frame's logits to the
// current frame, derive both reliability maps, and blend. Frame 1 of a clip
// has no predecessor; callers use its raw logits directly.
FusedLogits fused_step(const AddOnParams& addon, const SegmenterOutput& current,
                       const SegmenterOutput& previous, double tau, bool scale_scores = false);

}  // namespace vseg
