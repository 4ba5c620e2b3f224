// targets.hpp
//
// Distillation-target construction: sample high-reliability point prompts
// from a prediction, score each propagated mask track per class (mean
// reliability x area fraction x rarity), and assign/drop labels.

#pragma once

#include "vseg/propagation.hpp"
#include "vseg/types.hpp"

#include <vector>

namespace vseg {

// Lower clamp for the class-rarity factor so frequent classes keep a
// nonzero score.
inline constexpr double kClassFrequencyFloor = 0.05;

struct PromptConfig {
  int per_class_top_k = 3;
  double reliability_floor = 0.1;
  int min_spacing = 4;  // same-class prompts must sit further apart (Chebyshev)
};

void validate_prompt_config(const PromptConfig& cfg);

// For each class present in the argmax prediction (ascending class order):
// keep pixels of that class with reliability >= reliability_floor, then
// select up to per_class_top_k of them in descending reliability (ties in
// row-major pixel order), skipping candidates within Chebyshev distance
// <= min_spacing of an already-selected prompt of the same class. Prompts
// carry the argmax class as hint_class and frame_index as given. May return
// an empty list when nothing passes the floor.
std::vector<Prompt> sample_prompts(const Field& logits, const ArrayXXd& reliability,
                                   const PromptConfig& cfg, int frame_index = 0);

struct ScoreBreakdown {
  std::vector<double> alpha_rel;   // mean reliability where the class is predicted
  std::vector<double> gamma_area;  // fraction of mask pixels predicted as the class
  std::vector<double> gamma_freq;  // rarity factor in [kClassFrequencyFloor, 1]
  std::vector<double> alpha;       // combined score

  int num_classes() const { return static_cast<int>(alpha.size()); }
  // Argmax of alpha; ties resolve to the lower class index.
  int best_class() const;
  double best_alpha() const { return alpha[static_cast<size_t>(best_class())]; }
};

// Score a mask track against per-frame predictions over its window. Counting
// runs over every (frame, pixel) covered by the track's masks:
//   gamma_area^c = predicted-c pixels / all mask pixels,
//   alpha_rel^c  = mean reliability over predicted-c pixels (0 when none),
//   gamma_freq^c = 1 - freq(c)/sum(freq), clamped to [kClassFrequencyFloor, 1],
//   alpha^c      = alpha_rel^c * gamma_area^c^lambda_area * gamma_freq^c^lambda_freq.
// class_freq holds per-class pixel frequencies (e.g. argmax counts over the
// warm-up predictions); entries must be positive after smoothing.
ScoreBreakdown class_scores(const SpatioTemporalMask& mask, const std::vector<Field>& logits,
                            const std::vector<ArrayXXd>& reliabilities,
                            const std::vector<double>& class_freq, double lambda_area,
                            double lambda_freq);

// Stamp each track with its best-scoring class; tracks whose best score
// falls below accept_floor are dropped.
std::vector<SpatioTemporalMask> assign_labels(std::vector<SpatioTemporalMask> masks,
                                              const std::vector<ScoreBreakdown>& scores,
                                              double accept_floor);

}  // namespace vseg
