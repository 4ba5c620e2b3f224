// segmenter.hpp
//
// Frame-wise reference segmenter: a small strided-conv encoder (frozen
// during adaptation) and an upsampling decoder whose last feature map
// (before the 1x1 classifier) feeds the temporal fusion and prototype
// losses. Fully deterministic given (config, seed).

#pragma once

#include "vseg/tape.hpp"
#include "vseg/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vseg {

using ParamSet = std::map<std::string, Mat>;  // ordered: iteration is stable

struct SegmenterConfig {
  int height = 64;
  int width = 64;
  int num_classes = 2;
  int enc1_channels = 16;
  int enc2_channels = 24;
  int feature_dim = 32;  // decoder feature channels D

  // Input H x W -> features at H/4 x W/4 (encoder /8, decoder x2).
  int feature_height() const { return height / 4; }
  int feature_width() const { return width / 4; }
};

struct SegmenterParams {
  ParamSet encoder;  // enc1/2/3 conv weights and biases
  ParamSet decoder;  // dec conv + 1x1 classifier
};

// Seeded He-style initialization; weights N(0, 1/fan_in), biases zero.
SegmenterParams init_segmenter(const SegmenterConfig& cfg, uint64_t seed);

struct SegmenterOutput {
  Field features;       // feature_h x feature_w x D
  Field logits_lowres;  // feature_h x feature_w x K
  Field logits;         // H x W x K
};

// Forward pass on a tape. Parameter Vars decide differentiability: pass
// leaves for anything that should receive gradients, constants otherwise.
struct TapedSegmenterOutput {
  ad::Var features;
  ad::Var logits_lowres;
  ad::Var logits;
};

std::map<std::string, ad::Var> params_to_vars(ad::Tape& tape, const SegmenterParams& params,
                                              bool encoder_trainable, bool decoder_trainable);

TapedSegmenterOutput forward_taped(ad::Tape& tape, const SegmenterConfig& cfg,
                                   const std::map<std::string, ad::Var>& vars, const Field& frame);

// Plain inference (no gradients retained).
SegmenterOutput predict(const SegmenterConfig& cfg, const SegmenterParams& params,
                        const Field& frame);

// R = 1 - E/max(E) with natural-log softmax entropy per pixel; R == 1
// everywhere when max entropy < 1e-12. Throws NumericalError on non-finite
// logits.
ArrayXXd reliability_map(const Field& logits);

struct TrainConfig {
  int steps = 200;
  double learning_rate = 0.003;
  uint64_t seed = 0;
  // Adam moments; plain descent when use_adam is false.
  bool use_adam = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct TrainResult {
  SegmenterParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Frame-wise supervised training on clips (frames sampled independently;
// no temporal pairing). Deterministic for a fixed seed.
struct VideoClip;  // dataio
TrainResult train_reference(const SegmenterConfig& cfg, const std::vector<VideoClip>& clips,
                            const TrainConfig& train);

// Checkpoint: config + seed + named arrays (+ optional add-on section),
// digest-validated on load.
struct Checkpoint {
  SegmenterConfig config;
  uint64_t seed = 0;
  SegmenterParams params;
  ParamSet addon;  // empty when no add-on has been trained/stored
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_digest(const Checkpoint& ckpt);

}  // namespace vseg
