// losses.cpp
//
// Distillation CE, prototype accumulation, contrastive term, EMA update.

#include "vseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace vseg {

namespace {

// Track mask reduced to the working resolution by nearest neighbor.
// Accepts masks already there or at an integer multiple of it.
BoolMap mask_at_resolution(const BoolMap& mask, int h, int w, const std::string& who) {
  const int mh = static_cast<int>(mask.rows());
  const int mw = static_cast<int>(mask.cols());
  if (mh == h && mw == w) return mask;
  require(h > 0 && w > 0 && mh % h == 0 && mw % w == 0 && mh / h == mw / w,
          who + ": mask resolution is not a multiple of the working resolution");
  return downsample_mask_nearest(mask, mh / h);
}

// (pixel row, class/prototype column) pairs contributed by the tracks that
// cover frame_index, in track order then row-major pixel order.
struct GatherPlan {
  std::vector<int> rows;
  std::vector<int> cols;
  bool empty() const { return rows.empty(); }
};

}  // namespace

// ---------------------------------------------------------------------------
// Distillation
// ---------------------------------------------------------------------------

ad::Var distill_loss_taped(ad::Tape& tape, ad::Var logits_t, const ad::Var* logits_addon,
                           const std::vector<SpatioTemporalMask>& masks, int frame_index,
                           int height, int width) {
  const Eigen::Index pixels = static_cast<Eigen::Index>(height) * width;
  require(logits_t.rows() == pixels, "distill loss: logits row count does not match the frame");
  if (logits_addon != nullptr)
    require(logits_addon->rows() == pixels && logits_addon->cols() == logits_t.cols(),
            "distill loss: aligned logits shape does not match the current logits");
  const int num_classes = static_cast<int>(logits_t.cols());

  GatherPlan plan;
  for (const SpatioTemporalMask& track : masks) {
    require(track.assigned_class >= 0, "distill loss: unlabeled mask track");
    if (frame_index < track.window.begin || frame_index >= track.window.end) continue;
    require(static_cast<int>(track.masks.size()) == track.window.size(),
            "distill loss: track frame count does not match its window");
    require(track.assigned_class < num_classes,
            "distill loss: assigned class outside the logit range");
    const BoolMap& mask =
        track.masks[static_cast<size_t>(frame_index - track.window.begin)];
    require(static_cast<int>(mask.rows()) == height && static_cast<int>(mask.cols()) == width,
            "distill loss: mask resolution does not match the logits");
    for (int row : mask_pixel_rows(mask)) {
      plan.rows.push_back(row);
      plan.cols.push_back(track.assigned_class);
    }
  }
  if (plan.empty()) return tape.constant(Mat::Zero(1, 1));

  ad::Var picked = tape.sum(
      tape.gather_entries(tape.log_softmax_rows(logits_t), plan.rows, plan.cols));
  if (logits_addon != nullptr)
    picked = tape.add(picked, tape.sum(tape.gather_entries(
                                  tape.log_softmax_rows(*logits_addon), plan.rows, plan.cols)));
  return tape.scale(picked, -1.0);
}

double distill_loss(const Field& logits_t, const Field* logits_addon,
                    const std::vector<SpatioTemporalMask>& masks, int frame_index) {
  ad::Tape tape;
  const ad::Var current = tape.constant(logits_t.values);
  ad::Var addon;
  if (logits_addon != nullptr) {
    require(logits_addon->same_shape(logits_t),
            "distill loss: aligned logits shape does not match the current logits");
    addon = tape.constant(logits_addon->values);
  }
  return distill_loss_taped(tape, current, logits_addon != nullptr ? &addon : nullptr, masks,
                            frame_index, logits_t.height, logits_t.width)
      .value()(0, 0);
}

// ---------------------------------------------------------------------------
// Prototypes
// ---------------------------------------------------------------------------

Mat Prototype::mean() const {
  require(defined(), "prototype: mean of an undefined prototype");
  return running_sum / static_cast<double>(running_count);
}

std::vector<int> PrototypeBank::defined_ids() const {
  std::vector<int> ids;
  for (const auto& [id, proto] : by_object)
    if (proto.defined()) ids.push_back(id);
  return ids;
}

Mat PrototypeBank::defined_means() const {
  const std::vector<int> ids = defined_ids();
  Mat means(static_cast<Eigen::Index>(ids.size()), feature_dim);
  for (size_t j = 0; j < ids.size(); ++j)
    means.row(static_cast<Eigen::Index>(j)) = by_object.at(ids[j]).mean().transpose();
  return means;
}

void update_prototypes(PrototypeBank& bank, const Field& features_mo,
                       const ArrayXXd& reliability_mo,
                       const std::vector<SpatioTemporalMask>& masks, int frame_index) {
  require(reliability_mo.rows() == features_mo.height &&
              reliability_mo.cols() == features_mo.width,
          "update_prototypes: reliability map does not match the feature grid");
  const int dim = features_mo.channels();
  if (bank.by_object.empty()) bank.feature_dim = dim;
  require(bank.feature_dim == dim, "update_prototypes: feature dimension changed");

  for (const SpatioTemporalMask& track : masks) {
    if (frame_index < track.window.begin || frame_index >= track.window.end) continue;
    require(static_cast<int>(track.masks.size()) == track.window.size(),
            "update_prototypes: track frame count does not match its window");
    const BoolMap mask = mask_at_resolution(
        track.masks[static_cast<size_t>(frame_index - track.window.begin)], features_mo.height,
        features_mo.width, "update_prototypes");
    const std::vector<int> rows = mask_pixel_rows(mask);
    if (rows.empty()) continue;

    Prototype& proto = bank.by_object[track.object_id];
    if (proto.running_sum.size() == 0) proto.running_sum = Mat::Zero(dim, 1);
    for (int row : rows) {
      const int y = row / features_mo.width;
      const int x = row % features_mo.width;
      proto.running_sum += features_mo.values.row(row).transpose() * reliability_mo(y, x);
      ++proto.running_count;
    }
  }
}

// ---------------------------------------------------------------------------
// Contrastive term
// ---------------------------------------------------------------------------

ad::Var contrastive_loss_taped(ad::Tape& tape, ad::Var features_t, const PrototypeBank& bank,
                               const std::vector<SpatioTemporalMask>& masks, int frame_index,
                               int feature_height, int feature_width) {
  require(features_t.rows() == static_cast<Eigen::Index>(feature_height) * feature_width,
          "contrastive loss: feature row count does not match the grid");
  const std::vector<int> ids = bank.defined_ids();
  // One defined prototype makes the softmax constant 1 (zero loss and zero
  // gradient), so both degenerate cases collapse to the same constant.
  if (ids.size() <= 1) return tape.constant(Mat::Zero(1, 1));
  require(bank.feature_dim == static_cast<int>(features_t.cols()),
          "contrastive loss: feature dimension does not match the prototypes");

  GatherPlan plan;
  for (const SpatioTemporalMask& track : masks) {
    if (frame_index < track.window.begin || frame_index >= track.window.end) continue;
    require(static_cast<int>(track.masks.size()) == track.window.size(),
            "contrastive loss: track frame count does not match its window");
    const auto slot = std::lower_bound(ids.begin(), ids.end(), track.object_id);
    if (slot == ids.end() || *slot != track.object_id) continue;  // undefined: excluded
    const BoolMap mask = mask_at_resolution(
        track.masks[static_cast<size_t>(frame_index - track.window.begin)], feature_height,
        feature_width, "contrastive loss");
    const int col = static_cast<int>(slot - ids.begin());
    for (int row : mask_pixel_rows(mask)) {
      plan.rows.push_back(row);
      plan.cols.push_back(col);
    }
  }
  if (plan.empty()) return tape.constant(Mat::Zero(1, 1));

  const ad::Var scores =
      tape.matmul(features_t, tape.constant(bank.defined_means().transpose()));
  const ad::Var picked =
      tape.gather_entries(tape.log_softmax_rows(scores), plan.rows, plan.cols);
  return tape.scale(tape.sum(picked), -1.0);
}

double contrastive_loss(const Field& features_t, const PrototypeBank& bank,
                        const std::vector<SpatioTemporalMask>& masks, int frame_index) {
  ad::Tape tape;
  return contrastive_loss_taped(tape, tape.constant(features_t.values), bank, masks, frame_index,
                                features_t.height, features_t.width)
      .value()(0, 0);
}

// ---------------------------------------------------------------------------
// Momentum branch
// ---------------------------------------------------------------------------

MomentumState init_momentum(const SegmenterParams& params, const AddOnParams& addon,
                            double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw UsageError("momentum state: coefficient must lie in [0, 1)");
  return MomentumState{params, addon, momentum};
}

void ema_update(ParamSet& momentum, const ParamSet& main, double m) {
  if (!(m >= 0.0 && m < 1.0)) throw UsageError("ema update: coefficient must lie in [0, 1)");
  require(momentum.size() == main.size(), "ema update: parameter sets differ in size");
  auto mo = momentum.begin();
  auto mn = main.begin();
  for (; mo != momentum.end(); ++mo, ++mn) {
    require(mo->first == mn->first, "ema update: parameter name mismatch: " + mo->first);
    require(mo->second.rows() == mn->second.rows() && mo->second.cols() == mn->second.cols(),
            "ema update: shape mismatch for " + mo->first);
    mo->second = m * mo->second + (1.0 - m) * mn->second;
  }
}

void ema_update(MomentumState& state, const SegmenterParams& params, const AddOnParams& addon) {
  ema_update(state.params.encoder, params.encoder, state.momentum);
  ema_update(state.params.decoder, params.decoder, state.momentum);
  ParamSet addon_momentum = addon_to_params(state.addon);
  ema_update(addon_momentum, addon_to_params(addon), state.momentum);
  state.addon = addon_from_params(addon_momentum);
}

// ---------------------------------------------------------------------------
// Total
// ---------------------------------------------------------------------------

ad::Var total_loss(ad::Tape& tape, ad::Var distill, ad::Var contrastive) {
  require(distill.rows() == 1 && distill.cols() == 1 && contrastive.rows() == 1 &&
              contrastive.cols() == 1,
          "total loss: both terms must be scalars");
  return tape.add(distill, contrastive);
}

}  // namespace vseg
