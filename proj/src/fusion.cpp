// fusion.cpp
//
// Attention add-on and reliability-aware logit fusion.

#include "vseg/fusion.hpp"

#include "vseg/rng.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace vseg {

namespace {

std::string dims(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace

// ---------------------------------------------------------------------------
// Add-on parameters
// ---------------------------------------------------------------------------

AddOnParams init_addon(int feature_dim, uint64_t seed) {
  require(feature_dim >= 1, "init_addon: feature_dim must be >= 1");
  Rng rng(mix64(seed ^ 0x6164646f6e70726aULL));
  AddOnParams addon;
  for (Mat* proj : {&addon.proj_q, &addon.proj_k}) {
    *proj = Mat::Identity(feature_dim, feature_dim);
    for (int r = 0; r < feature_dim; ++r)
      for (int c = 0; c < feature_dim; ++c) (*proj)(r, c) += 0.01 * rng.normal();
  }
  return addon;
}

void validate_addon(const AddOnParams& addon) {
  require(addon.proj_q.rows() >= 1 && addon.proj_q.cols() >= 1,
          "add-on: projections must be non-empty");
  require(addon.proj_q.rows() == addon.proj_k.rows() && addon.proj_q.cols() == addon.proj_k.cols(),
          "add-on: query projection is " + dims(addon.proj_q.rows(), addon.proj_q.cols()) +
              " but key projection is " + dims(addon.proj_k.rows(), addon.proj_k.cols()));
  if (!addon.proj_q.allFinite() || !addon.proj_k.allFinite())
    throw NumericalError("add-on: non-finite projection parameters");
}

ParamSet addon_to_params(const AddOnParams& addon) {
  return ParamSet{{"proj_q", addon.proj_q}, {"proj_k", addon.proj_k}};
}

AddOnParams addon_from_params(const ParamSet& params) {
  require(params.size() == 2 && params.count("proj_q") && params.count("proj_k"),
          "add-on: parameter set must hold exactly proj_q and proj_k");
  return AddOnParams{params.at("proj_q"), params.at("proj_k")};
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

ad::Var temporal_attention_taped(ad::Tape& tape, ad::Var proj_q, ad::Var proj_k,
                                 ad::Var features_t, ad::Var features_prev, ad::Var logits_prev,
                                 int feature_h, int feature_w, int factor, bool scale_scores) {
  require(feature_h >= 1 && feature_w >= 1 && factor >= 1,
          "temporal_attention: non-positive grid geometry");
  const Eigen::Index cells = static_cast<Eigen::Index>(feature_h) * feature_w;
  require(features_t.rows() == cells, "temporal_attention: current features are " +
                                          dims(features_t.rows(), features_t.cols()) +
                                          ", expected " + std::to_string(cells) + " rows");
  require(features_prev.rows() == features_t.rows() && features_prev.cols() == features_t.cols(),
          "temporal_attention: feature shapes differ, " +
              dims(features_t.rows(), features_t.cols()) + " vs " +
              dims(features_prev.rows(), features_prev.cols()));
  require(proj_q.rows() == features_t.cols(),
          "temporal_attention: projection expects " + std::to_string(proj_q.rows()) +
              " feature channels, features have " + std::to_string(features_t.cols()));
  require(proj_q.rows() == proj_k.rows() && proj_q.cols() == proj_k.cols(),
          "temporal_attention: projection shapes differ");
  require(logits_prev.rows() == cells * factor * factor,
          "temporal_attention: previous logits have " + std::to_string(logits_prev.rows()) +
              " pixels, expected " + std::to_string(cells * factor * factor));
  if (!proj_q.value().allFinite() || !proj_k.value().allFinite())
    throw NumericalError("temporal_attention: non-finite projection parameters");

  ad::Var queries = tape.matmul(features_t, proj_q);
  ad::Var keys = tape.matmul(features_prev, proj_k);
  ad::Var scores = tape.matmul(queries, tape.transpose(keys));
  if (scale_scores)
    scores = tape.scale(scores, 1.0 / std::sqrt(static_cast<double>(proj_q.cols())));
  ad::Var attention = tape.softmax_rows(scores);

  ad::Var values =
      tape.downsample_area(logits_prev, feature_h * factor, feature_w * factor, factor);
  ad::Var attended = tape.matmul(attention, values);
  return tape.upsample_bilinear(attended, feature_h, feature_w, factor);
}

Field temporal_attention(const AddOnParams& addon, const Field& features_t,
                         const Field& features_prev, const Field& logits_prev,
                         bool scale_scores) {
  validate_addon(addon);
  require(features_t.same_shape(features_prev),
          "temporal_attention: feature fields differ in shape");
  require(features_t.height >= 1 && features_t.width >= 1,
          "temporal_attention: empty feature grid");
  require(logits_prev.height % features_t.height == 0 &&
              logits_prev.width % features_t.width == 0,
          "temporal_attention: logits resolution is not a multiple of the feature grid");
  const int factor = logits_prev.height / features_t.height;
  require(logits_prev.width == features_t.width * factor,
          "temporal_attention: logits/feature aspect ratios differ");

  ad::Tape tape;
  ad::Var out = temporal_attention_taped(
      tape, tape.constant(addon.proj_q), tape.constant(addon.proj_k),
      tape.constant(features_t.values), tape.constant(features_prev.values),
      tape.constant(logits_prev.values), features_t.height, features_t.width, factor,
      scale_scores);

  Field aligned(logits_prev.height, logits_prev.width, logits_prev.channels());
  aligned.values = out.value();
  return aligned;
}

// ---------------------------------------------------------------------------
// Reliability on the tape
// ---------------------------------------------------------------------------

ad::Var reliability_taped(ad::Tape& tape, ad::Var logits) {
  if (!logits.value().allFinite()) throw NumericalError("reliability: non-finite logits");
  ad::Var logp = tape.log_softmax_rows(logits);
  ad::Var p = tape.softmax_rows(logits);
  ad::Var entropy = tape.scale(tape.rowwise_sum(tape.mul(p, logp)), -1.0);
  if (entropy.value().maxCoeff() < 1e-12) return tape.constant(Mat::Ones(logits.rows(), 1));
  ad::Var normalized = tape.scalar_div(entropy, tape.max_all(entropy));
  return tape.add_const(tape.scale(normalized, -1.0), 1.0);
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

namespace {

void check_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0))
    throw UsageError("fuse_logits: tau must lie in [0, 1], got " + std::to_string(tau));
}

}  // namespace

FusedLogits fuse_logits(const Field& logits_t, const Field& logits_addon, const ArrayXXd& rel_t,
                        const ArrayXXd& rel_addon, double tau) {
  require(logits_t.same_shape(logits_addon), "fuse_logits: logit field shapes differ");
  require(rel_t.rows() == logits_t.height && rel_t.cols() == logits_t.width,
          "fuse_logits: current reliability map shape mismatch");
  require(rel_addon.rows() == logits_t.height && rel_addon.cols() == logits_t.width,
          "fuse_logits: add-on reliability map shape mismatch");
  check_tau(tau);

  const int h = logits_t.height, w = logits_t.width;
  FusedLogits out;
  out.fused = Field(h, w, logits_t.channels());
  out.weight_current = ArrayXXd(h, w);
  out.weight_addon = ArrayXXd(h, w);
  out.passthrough = BoolMap(h, w);
  out.degenerate = BoolMap::Constant(h, w, false);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Index row = logits_t.index(x, y);
      const double rt = rel_t(y, x);
      const double ra = rel_addon(y, x);
      const bool keep_current = rt >= tau;
      out.passthrough(y, x) = keep_current;
      double wt = 1.0, wa = 0.0;
      if (!keep_current) {
        const double den = rt + ra;
        if (den < kFusionDegenerateEps) {
          out.degenerate(y, x) = true;
        } else {
          wt = rt / den;
          wa = ra / den;
        }
      }
      out.weight_current(y, x) = wt;
      out.weight_addon(y, x) = wa;
      if (wa == 0.0)
        out.fused.values.row(row) = logits_t.values.row(row);
      else
        out.fused.values.row(row) =
            wt * logits_t.values.row(row) + wa * logits_addon.values.row(row);
    }
  }
  return out;
}

TapedFusion fuse_logits_taped(ad::Tape& tape, ad::Var logits_t, ad::Var logits_addon,
                              ad::Var rel_t, ad::Var rel_addon, double tau) {
  require(logits_t.rows() == logits_addon.rows() && logits_t.cols() == logits_addon.cols(),
          "fuse_logits: logit shapes differ");
  require(rel_t.cols() == 1 && rel_t.rows() == logits_t.rows(),
          "fuse_logits: current reliability must be one column per pixel row");
  require(rel_addon.cols() == 1 && rel_addon.rows() == logits_t.rows(),
          "fuse_logits: add-on reliability must be one column per pixel row");
  check_tau(tau);

  const Eigen::Index n = logits_t.rows();
  const Mat& rt = rel_t.value();
  const Mat& ra = rel_addon.value();
  TapedFusion out;
  out.passthrough.resize(static_cast<size_t>(n));
  out.degenerate.resize(static_cast<size_t>(n));
  std::vector<uint8_t> keep_current(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool pass = rt(i, 0) >= tau;
    const bool degen = !pass && rt(i, 0) + ra(i, 0) < kFusionDegenerateEps;
    out.passthrough[static_cast<size_t>(i)] = pass;
    out.degenerate[static_cast<size_t>(i)] = degen;
    keep_current[static_cast<size_t>(i)] = pass || degen;
  }

  // Guard kept rows with a unit denominator so the discarded mix branch stays
  // finite (select_rows routes their gradients to the kept branch anyway).
  ad::Var den = tape.add(rel_t, rel_addon);
  ad::Var den_safe = tape.select_rows(keep_current, tape.constant(Mat::Ones(n, 1)), den);
  ad::Var mixed = tape.add(tape.row_broadcast_mul(logits_t, tape.div(rel_t, den_safe)),
                           tape.row_broadcast_mul(logits_addon, tape.div(rel_addon, den_safe)));
  out.fused = tape.select_rows(keep_current, logits_t, mixed);
  return out;
}

FusedLogits fused_step(const AddOnParams& addon, const SegmenterOutput& current,
                       const SegmenterOutput& previous, double tau, bool scale_scores) {
  const Field aligned = temporal_attention(addon, current.features, previous.features,
                                           previous.logits, scale_scores);
  return fuse_logits(current.logits, aligned, reliability_map(current.logits),
                     reliability_map(aligned), tau);
}

}  // namespace vseg
