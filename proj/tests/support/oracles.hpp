// oracles.hpp
//
// Brute-force reference implementations used to validate the library
// versions. Counting is done with deliberately naive set-based code; the
// final arithmetic uses the same expression shapes as the library so that
// integer-count agreement implies bit-identical floating-point results.

#pragma once

#include "vseg/types.hpp"

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

namespace vseg::testing {

inline double oracle_miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                          int num_classes) {
  double sum = 0.0;
  int included = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::set<std::tuple<int, int, int>> inter, uni;
    for (size_t t = 0; t < preds.size(); ++t)
      for (int y = 0; y < preds[t].rows(); ++y)
        for (int x = 0; x < preds[t].cols(); ++x) {
          const bool in_pred = preds[t](y, x) == c;
          const bool in_gt = gts[t](y, x) == c;
          if (in_pred && in_gt) inter.insert({static_cast<int>(t), y, x});
          if (in_pred || in_gt) uni.insert({static_cast<int>(t), y, x});
        }
    if (uni.empty()) continue;
    sum += static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    ++included;
  }
  return 100.0 * (included > 0 ? sum / included : 0.0);
}

inline double oracle_wiou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                          int num_classes) {
  int64_t total_gt = 0;
  for (const LabelMap& gt : gts) total_gt += gt.size();
  if (total_gt == 0) return 0.0;
  double sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    int64_t gt_count = 0, inter = 0, uni = 0;
    for (size_t t = 0; t < preds.size(); ++t)
      for (int y = 0; y < preds[t].rows(); ++y)
        for (int x = 0; x < preds[t].cols(); ++x) {
          const bool in_pred = preds[t](y, x) == c;
          const bool in_gt = gts[t](y, x) == c;
          if (in_gt) ++gt_count;
          if (in_pred && in_gt) ++inter;
          if (in_pred || in_gt) ++uni;
        }
    if (gt_count == 0) continue;
    const double weight = static_cast<double>(gt_count) / static_cast<double>(total_gt);
    sum += weight * (static_cast<double>(inter) / static_cast<double>(uni));
  }
  return 100.0 * sum;
}

inline std::optional<double> oracle_mvc(const std::vector<LabelMap>& preds,
                                        const std::vector<LabelMap>& gts, int window) {
  const int frames = static_cast<int>(preds.size());
  double vc_sum = 0.0;
  int counted = 0;
  for (int start = 0; start + window <= frames; ++start) {
    std::set<std::pair<int, int>> gt_stable, pred_stable;
    for (int y = 0; y < gts[start].rows(); ++y)
      for (int x = 0; x < gts[start].cols(); ++x) {
        bool g_same = true, p_same = true;
        for (int t = start; t < start + window; ++t) {
          if (gts[t](y, x) != gts[start](y, x)) g_same = false;
          if (preds[t](y, x) != preds[start](y, x)) p_same = false;
        }
        if (g_same) gt_stable.insert({y, x});
        if (p_same) pred_stable.insert({y, x});
      }
    if (gt_stable.empty()) continue;
    int64_t both = 0;
    for (const auto& px : gt_stable)
      if (pred_stable.count(px)) ++both;
    vc_sum += static_cast<double>(both) / static_cast<double>(gt_stable.size());
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return 100.0 * (vc_sum / counted);
}

}  // namespace vseg::testing
