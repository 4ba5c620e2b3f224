// targets.cpp
//
// Prompt sampling, per-class mask scoring, and label assignment.

#include "vseg/targets.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vseg {

void validate_prompt_config(const PromptConfig& cfg) {
  if (cfg.per_class_top_k < 1)
    throw UsageError("prompt config: per_class_top_k must be at least 1");
  if (!(cfg.reliability_floor >= 0.0 && cfg.reliability_floor <= 1.0))
    throw UsageError("prompt config: reliability_floor must lie in [0, 1]");
  if (cfg.min_spacing < 0) throw UsageError("prompt config: min_spacing must be nonnegative");
}

std::vector<Prompt> sample_prompts(const Field& logits, const ArrayXXd& reliability,
                                   const PromptConfig& cfg, int frame_index) {
  validate_prompt_config(cfg);
  require(reliability.rows() == logits.height && reliability.cols() == logits.width,
          "sample_prompts: reliability map shape mismatch");
  const LabelMap predicted = argmax_field(logits);

  struct Candidate {
    double score;
    int y;
    int x;
  };
  std::vector<Prompt> prompts;
  for (int cls = 0; cls < logits.channels(); ++cls) {
    std::vector<Candidate> candidates;
    for (int y = 0; y < logits.height; ++y)
      for (int x = 0; x < logits.width; ++x)
        if (predicted(y, x) == cls && reliability(y, x) >= cfg.reliability_floor)
          candidates.push_back({reliability(y, x), y, x});
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.y != b.y) return a.y < b.y;
      return a.x < b.x;
    });

    int taken = 0;
    std::vector<std::pair<int, int>> chosen;
    for (const Candidate& cand : candidates) {
      if (taken == cfg.per_class_top_k) break;
      bool crowded = false;
      for (const auto& [cy, cx] : chosen)
        if (std::max(std::abs(cand.y - cy), std::abs(cand.x - cx)) <= cfg.min_spacing) {
          crowded = true;
          break;
        }
      if (crowded) continue;
      prompts.push_back(Prompt{frame_index, cand.x, cand.y, cls});
      chosen.push_back({cand.y, cand.x});
      ++taken;
    }
  }
  return prompts;
}

int ScoreBreakdown::best_class() const {
  require(!alpha.empty(), "score breakdown: no classes");
  int best = 0;
  for (int c = 1; c < num_classes(); ++c)
    if (alpha[static_cast<size_t>(c)] > alpha[static_cast<size_t>(best)]) best = c;
  return best;
}

ScoreBreakdown class_scores(const SpatioTemporalMask& mask, const std::vector<Field>& logits,
                            const std::vector<ArrayXXd>& reliabilities,
                            const std::vector<double>& class_freq, double lambda_area,
                            double lambda_freq) {
  const int frames = mask.window.size();
  require(static_cast<int>(mask.masks.size()) == frames,
          "class_scores: track frame count does not match its window");
  require(static_cast<int>(logits.size()) == frames &&
              static_cast<int>(reliabilities.size()) == frames,
          "class_scores: need one prediction and reliability map per window frame");
  require(frames > 0, "class_scores: empty window");

  const int k = logits.front().channels();
  require(static_cast<int>(class_freq.size()) == k,
          "class_scores: class frequency table size mismatch");
  if (lambda_area < 0.0 || lambda_freq < 0.0)
    throw UsageError("class_scores: weighting exponents must be nonnegative");

  double freq_total = 0.0;
  for (double f : class_freq) {
    require(f > 0.0, "class_scores: class frequencies must be positive after smoothing");
    freq_total += f;
  }

  std::vector<long> counts(static_cast<size_t>(k), 0);
  std::vector<double> rel_sum(static_cast<size_t>(k), 0.0);
  long total = 0;
  for (int t = 0; t < frames; ++t) {
    const Field& frame_logits = logits[static_cast<size_t>(t)];
    const ArrayXXd& rel = reliabilities[static_cast<size_t>(t)];
    const BoolMap& m = mask.masks[static_cast<size_t>(t)];
    require(frame_logits.channels() == k, "class_scores: class counts differ between frames");
    require(static_cast<int>(m.rows()) == frame_logits.height &&
                static_cast<int>(m.cols()) == frame_logits.width,
            "class_scores: mask resolution mismatch");
    require(rel.rows() == m.rows() && rel.cols() == m.cols(),
            "class_scores: reliability map resolution mismatch");
    const LabelMap predicted = argmax_field(frame_logits);
    for (int y = 0; y < static_cast<int>(m.rows()); ++y)
      for (int x = 0; x < static_cast<int>(m.cols()); ++x) {
        if (!m(y, x)) continue;
        ++total;
        const int c = predicted(y, x);
        ++counts[static_cast<size_t>(c)];
        rel_sum[static_cast<size_t>(c)] += rel(y, x);
      }
  }
  require(total > 0, "class_scores: mask is empty on every frame");

  ScoreBreakdown out;
  out.alpha_rel.resize(static_cast<size_t>(k));
  out.gamma_area.resize(static_cast<size_t>(k));
  out.gamma_freq.resize(static_cast<size_t>(k));
  out.alpha.resize(static_cast<size_t>(k));
  for (int c = 0; c < k; ++c) {
    const size_t i = static_cast<size_t>(c);
    out.gamma_area[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
    out.alpha_rel[i] = counts[i] > 0 ? rel_sum[i] / static_cast<double>(counts[i]) : 0.0;
    out.gamma_freq[i] =
        std::clamp(1.0 - class_freq[i] / freq_total, kClassFrequencyFloor, 1.0);
    out.alpha[i] = out.alpha_rel[i] * std::pow(out.gamma_area[i], lambda_area) *
                   std::pow(out.gamma_freq[i], lambda_freq);
  }
  return out;
}

std::vector<SpatioTemporalMask> assign_labels(std::vector<SpatioTemporalMask> masks,
                                              const std::vector<ScoreBreakdown>& scores,
                                              double accept_floor) {
  require(masks.size() == scores.size(), "assign_labels: one score breakdown per mask required");
  std::vector<SpatioTemporalMask> labeled;
  labeled.reserve(masks.size());
  for (size_t i = 0; i < masks.size(); ++i) {
    const int best = scores[i].best_class();
    if (scores[i].alpha[static_cast<size_t>(best)] < accept_floor) continue;
    masks[i].assigned_class = best;
    labeled.push_back(std::move(masks[i]));
  }
  return labeled;
}

}  // namespace vseg
