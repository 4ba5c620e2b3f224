// metrics.hpp
//
// Segmentation quality (mIoU, wIoU) and temporal consistency (mVC_n).
// IoU-style metrics pool integer counts, so cross-clip aggregation is a
// count merge, never a mean of means; mVC averages per clip first.

#pragma once

#include "vseg/types.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace vseg {

// Per-class confusion counts, pooled over any number of frames/clips.
struct ClassCounts {
  std::vector<int64_t> intersection;  // pred == c and gt == c
  std::vector<int64_t> unions;        // pred == c or gt == c
  std::vector<int64_t> gt_pixels;     // gt == c

  ClassCounts() = default;
  explicit ClassCounts(int num_classes)
      : intersection(num_classes, 0), unions(num_classes, 0), gt_pixels(num_classes, 0) {}

  int num_classes() const { return static_cast<int>(intersection.size()); }
  void add_frame(const LabelMap& pred, const LabelMap& gt);
  void merge(const ClassCounts& other);

  // Mean IoU over classes with nonzero union, in percent.
  double miou_percent() const;
  // GT-frequency weighted IoU, in percent. Weights sum to 1 because every
  // pixel carries a GT class.
  double wiou_percent() const;
  // Per-class IoU in [0,1]; NaN when the class never occurs in pred or gt.
  std::vector<double> per_class_iou() const;
};

double miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int num_classes);
double wiou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int num_classes);

// Mean video consistency over sliding windows of `window` frames: the
// fraction of GT-stable pixels whose predicted label is also stable.
// Windows whose GT-stable region is empty are skipped; nullopt when every
// window is skipped. Throws when the clip is shorter than the window.
std::optional<double> mvc(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                          int window);

struct MetricsReport {
  double miou = 0.0;
  double wiou = 0.0;
  std::map<int, std::optional<double>> mvc;  // window size -> percent
  std::vector<double> per_class_iou;
  int64_t frame_count = 0;
  int64_t pixel_count = 0;
  ClassCounts counts;  // retained so reports stay poolable
};

MetricsReport compute_report(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                             int num_classes, const std::vector<int>& mvc_windows);

}  // namespace vseg
