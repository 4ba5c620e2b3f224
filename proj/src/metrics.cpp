// metrics.cpp — mIoU / wIoU / mVC implementations over label maps.

#include "vseg/metrics.hpp"

#include <cmath>
#include <limits>

namespace vseg {

namespace {

void check_aligned(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts) {
  require(!preds.empty(), "metrics: no frames");
  require(preds.size() == gts.size(), "metrics: pred/gt frame count mismatch");
  for (size_t t = 0; t < preds.size(); ++t)
    require(preds[t].rows() == gts[t].rows() && preds[t].cols() == gts[t].cols() &&
                preds[t].rows() == preds[0].rows() && preds[t].cols() == preds[0].cols(),
            "metrics: map shape mismatch at frame " + std::to_string(t));
}

}  // namespace

void ClassCounts::add_frame(const LabelMap& pred, const LabelMap& gt) {
  require(pred.rows() == gt.rows() && pred.cols() == gt.cols(), "metrics: map shape mismatch");
  const int k = num_classes();
  for (Eigen::Index y = 0; y < pred.rows(); ++y) {
    for (Eigen::Index x = 0; x < pred.cols(); ++x) {
      const int p = pred(y, x);
      const int g = gt(y, x);
      require(p >= 0 && p < k, "metrics: predicted class " + std::to_string(p) + " out of range");
      require(g >= 0 && g < k, "metrics: gt class " + std::to_string(g) + " out of range");
      ++gt_pixels[g];
      if (p == g) {
        ++intersection[p];
        ++unions[p];
      } else {
        ++unions[p];
        ++unions[g];
      }
    }
  }
}

void ClassCounts::merge(const ClassCounts& other) {
  require(num_classes() == other.num_classes(), "metrics: class count mismatch in merge");
  for (int c = 0; c < num_classes(); ++c) {
    intersection[c] += other.intersection[c];
    unions[c] += other.unions[c];
    gt_pixels[c] += other.gt_pixels[c];
  }
}

double ClassCounts::miou_percent() const {
  double sum = 0.0;
  int included = 0;
  for (int c = 0; c < num_classes(); ++c) {
    if (unions[c] == 0) continue;
    sum += static_cast<double>(intersection[c]) / static_cast<double>(unions[c]);
    ++included;
  }
  return 100.0 * (included > 0 ? sum / included : 0.0);
}

double ClassCounts::wiou_percent() const {
  int64_t total_gt = 0;
  for (int c = 0; c < num_classes(); ++c) total_gt += gt_pixels[c];
  if (total_gt == 0) return 0.0;
  double sum = 0.0;
  for (int c = 0; c < num_classes(); ++c) {
    if (gt_pixels[c] == 0) continue;  // weight 0; union may still be nonzero
    const double weight = static_cast<double>(gt_pixels[c]) / static_cast<double>(total_gt);
    sum += weight * (static_cast<double>(intersection[c]) / static_cast<double>(unions[c]));
  }
  return 100.0 * sum;
}

std::vector<double> ClassCounts::per_class_iou() const {
  std::vector<double> out(num_classes(), std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < num_classes(); ++c)
    if (unions[c] > 0)
      out[c] = static_cast<double>(intersection[c]) / static_cast<double>(unions[c]);
  return out;
}

double miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int num_classes) {
  check_aligned(preds, gts);
  ClassCounts counts(num_classes);
  for (size_t t = 0; t < preds.size(); ++t) counts.add_frame(preds[t], gts[t]);
  return counts.miou_percent();
}

double wiou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int num_classes) {
  check_aligned(preds, gts);
  ClassCounts counts(num_classes);
  for (size_t t = 0; t < preds.size(); ++t) counts.add_frame(preds[t], gts[t]);
  return counts.wiou_percent();
}

std::optional<double> mvc(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                          int window) {
  check_aligned(preds, gts);
  require(window >= 1, "mvc: window must be >= 1");
  const int frames = static_cast<int>(preds.size());
  require(frames >= window,
          "mvc: clip of " + std::to_string(frames) + " frames shorter than window " +
              std::to_string(window));

  const Eigen::Index h = preds[0].rows(), w = preds[0].cols();
  double vc_sum = 0.0;
  int counted = 0;
  for (int start = 0; start + window <= frames; ++start) {
    int64_t gt_stable = 0, both_stable = 0;
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        bool g_ok = true, p_ok = true;
        const int g0 = gts[start](y, x);
        const int p0 = preds[start](y, x);
        for (int t = start + 1; t < start + window; ++t) {
          if (gts[t](y, x) != g0) g_ok = false;
          if (preds[t](y, x) != p0) p_ok = false;
        }
        if (g_ok) {
          ++gt_stable;
          if (p_ok) ++both_stable;
        }
      }
    }
    if (gt_stable == 0) continue;  // window carries no GT-stable evidence
    vc_sum += static_cast<double>(both_stable) / static_cast<double>(gt_stable);
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return 100.0 * (vc_sum / counted);
}

MetricsReport compute_report(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                             int num_classes, const std::vector<int>& mvc_windows) {
  check_aligned(preds, gts);
  MetricsReport report;
  report.counts = ClassCounts(num_classes);
  for (size_t t = 0; t < preds.size(); ++t) report.counts.add_frame(preds[t], gts[t]);
  report.miou = report.counts.miou_percent();
  report.wiou = report.counts.wiou_percent();
  report.per_class_iou = report.counts.per_class_iou();
  report.frame_count = static_cast<int64_t>(preds.size());
  report.pixel_count = report.frame_count * preds[0].rows() * preds[0].cols();
  for (int n : mvc_windows) {
    if (n <= static_cast<int>(preds.size()))
      report.mvc[n] = mvc(preds, gts, n);
    else
      report.mvc[n] = std::nullopt;
  }
  return report;
}

}  // namespace vseg
