// losses.hpp
//
// Adaptation objective: masked distillation cross-entropy on the current
// and temporally aligned logits, momentum-branch feature prototypes with a
// mask-based contrastive term, the EMA update feeding the momentum branch,
// and their sum as the per-frame total loss.

#pragma once

#include "vseg/fusion.hpp"
#include "vseg/propagation.hpp"
#include "vseg/segmenter.hpp"
#include "vseg/tape.hpp"
#include "vseg/types.hpp"

#include <map>
#include <vector>

namespace vseg {

// ---------------------------------------------------------------------------
// Distillation
// ---------------------------------------------------------------------------

// Masked cross-entropy against each track's assigned class at one frame:
//   sum_i sum_{(x,y) in m^i_t} [ CE(logits_t(x,y), c^i) (+ the same on
//   logits_addon when given) ],
// an unnormalized pixel sum. logits are pixel-major (height*width) x K on
// the tape; pass logits_addon = nullptr on the first frame, which has no
// temporally aligned predecessor. Tracks whose window misses frame_index
// and empty masks contribute nothing; a contributing unlabeled track is a
// DataError. Returns a zero constant when nothing contributes.
ad::Var distill_loss_taped(ad::Tape& tape, ad::Var logits_t, const ad::Var* logits_addon,
                           const std::vector<SpatioTemporalMask>& masks, int frame_index,
                           int height, int width);

// Value-only evaluation, bit-identical to the taped version.
double distill_loss(const Field& logits_t, const Field* logits_addon,
                    const std::vector<SpatioTemporalMask>& masks, int frame_index);

// ---------------------------------------------------------------------------
// Prototypes (momentum branch)
// ---------------------------------------------------------------------------

// Per-object running centroid of reliability-weighted momentum features,
// normalized by accumulated pixel count (not by the reliability sum).
struct Prototype {
  Mat running_sum;         // feature_dim x 1
  long running_count = 0;  // mask pixels accumulated so far

  bool defined() const { return running_count > 0; }
  Mat mean() const;  // running_sum / running_count; requires defined()
};

// Running state keyed by track object id. The contrastive softmax orders
// prototypes by ascending object id, so evaluation is deterministic.
struct PrototypeBank {
  int feature_dim = 0;
  std::map<int, Prototype> by_object;

  std::vector<int> defined_ids() const;
  // Means of the defined prototypes, one row per id in defined_ids() order.
  Mat defined_means() const;
};

// For every track covering frame_index, accumulate over its mask pixels:
//   running_sum += features_mo(x, y) * reliability_mo(x, y),
//   running_count += pixel count.
// features_mo/reliability_mo live at feature resolution; track masks are
// reduced to it by nearest-neighbor (identity when already there). Objects
// appear in the bank on first contribution; a zero-pixel frame leaves them
// untouched (an absent object stays undefined and outside the contrastive
// denominator).
void update_prototypes(PrototypeBank& bank, const Field& features_mo,
                       const ArrayXXd& reliability_mo,
                       const std::vector<SpatioTemporalMask>& masks, int frame_index);

// ---------------------------------------------------------------------------
// Contrastive term
// ---------------------------------------------------------------------------

// -sum_i sum_{(x,y) in m^i_t} log softmax_j(features_t(x,y) . P_j)_i, with
// the softmax running over every defined prototype in the bank. features_t
// is (feature_height*feature_width) x D on the tape; prototype means enter
// as constants, so the momentum branch receives no gradients. Track masks
// are reduced to feature resolution as in update_prototypes; tracks without
// a defined prototype are excluded from the outer sum. With fewer than two
// defined prototypes the softmax is constant 1 and the loss is a zero
// constant (carrying no gradient, exactly like the full expression).
ad::Var contrastive_loss_taped(ad::Tape& tape, ad::Var features_t, const PrototypeBank& bank,
                               const std::vector<SpatioTemporalMask>& masks, int frame_index,
                               int feature_height, int feature_width);

// Value-only evaluation, bit-identical to the taped version.
double contrastive_loss(const Field& features_t, const PrototypeBank& bank,
                        const std::vector<SpatioTemporalMask>& masks, int frame_index);

// ---------------------------------------------------------------------------
// Momentum branch
// ---------------------------------------------------------------------------

// Momentum copies of everything the adaptation touches (the frozen encoder
// rides along unchanged so checkpoints stay uniform).
struct MomentumState {
  SegmenterParams params;
  AddOnParams addon;
  double momentum = 0.99;  // m in [0, 1)
};

MomentumState init_momentum(const SegmenterParams& params, const AddOnParams& addon,
                            double momentum);

// theta_mo <- m * theta_mo + (1 - m) * theta_main, elementwise for every
// named parameter. Key sets and shapes must agree exactly.
void ema_update(ParamSet& momentum, const ParamSet& main, double m);
void ema_update(MomentumState& state, const SegmenterParams& params, const AddOnParams& addon);

// ---------------------------------------------------------------------------
// Total
// ---------------------------------------------------------------------------

// Per-frame objective with unit weights: distill + contrastive.
ad::Var total_loss(ad::Tape& tape, ad::Var distill, ad::Var contrastive);

}  // namespace vseg
