// test_segmenter.cpp — forward behaviour, reliability, training fixture,
// gradient smoothness, and checkpoint round trips.

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "vseg/dataio.hpp"
#include "vseg/segmenter.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace vseg;
namespace fs = std::filesystem;

namespace {

SegmenterConfig tiny_config() {
  SegmenterConfig cfg;
  cfg.height = 8;
  cfg.width = 8;
  cfg.num_classes = 3;
  cfg.enc1_channels = 4;
  cfg.enc2_channels = 6;
  cfg.feature_dim = 8;
  return cfg;
}

Field random_frame(Rng& rng, int h, int w) {
  Field frame(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) frame(x, y, c) = rng.uniform_int(0, 255) / 255.0;
  return frame;
}

ClipSpec train_spec() {
  ClipSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.num_frames = 4;
  spec.num_classes = 4;
  spec.background_seed = 91;
  spec.noise_level = 0.2;
  ShapeSpec a;
  a.class_id = 1;
  a.size_min = 8;
  a.size_max = 12;
  a.vx_min = -1.0;
  a.vx_max = 1.0;
  a.kind = ShapeKind::rect;
  ShapeSpec b = a;
  b.class_id = 2;
  b.kind = ShapeKind::disk;
  ShapeSpec c = a;
  c.class_id = 3;
  c.kind = ShapeKind::triangle;
  spec.shapes = {a, b, c};
  return spec;
}

double pixel_accuracy(const SegmenterConfig& cfg, const SegmenterParams& params,
                      const VideoClip& clip) {
  int64_t hits = 0, total = 0;
  for (int t = 0; t < clip.num_frames(); ++t) {
    LabelMap pred = argmax_field(predict(cfg, params, clip.frames[t]).logits);
    hits += (pred == clip.gt_semantic[t]).count();
    total += pred.size();
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

bool params_identical(const SegmenterParams& a, const SegmenterParams& b) {
  if (a.encoder.size() != b.encoder.size() || a.decoder.size() != b.decoder.size()) return false;
  for (const auto& [name, mat] : a.encoder)
    if (!b.encoder.count(name) || mat != b.encoder.at(name)) return false;
  for (const auto& [name, mat] : a.decoder)
    if (!b.decoder.count(name) || mat != b.decoder.at(name)) return false;
  return true;
}

}  // namespace

TEST_CASE("zero parameters give spatially constant logits") {
  const SegmenterConfig cfg = tiny_config();
  SegmenterParams params = init_segmenter(cfg, 1);
  for (auto& [name, mat] : params.encoder) mat.setZero();
  for (auto& [name, mat] : params.decoder) mat.setZero();

  Rng rng(5);
  SegmenterOutput out = predict(cfg, params, random_frame(rng, 8, 8));
  CHECK(out.logits.values.cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.features.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("predict is deterministic and validates shapes") {
  const SegmenterConfig cfg = tiny_config();
  SegmenterParams params = init_segmenter(cfg, 7);
  Rng rng(6);
  Field frame = random_frame(rng, 8, 8);
  SegmenterOutput a = predict(cfg, params, frame);
  SegmenterOutput b = predict(cfg, params, frame);
  CHECK(a.logits.values == b.logits.values);
  CHECK(a.features.values == b.features.values);

  Field wrong = random_frame(rng, 16, 16);
  CHECK_THROWS_WITH_AS(predict(cfg, params, wrong), doctest::Contains("shape mismatch"), DataError);
}

TEST_CASE("feature map geometry: downsampling factor 4") {
  const SegmenterConfig cfg = tiny_config();
  SegmenterParams params = init_segmenter(cfg, 7);
  Rng rng(6);
  SegmenterOutput out = predict(cfg, params, random_frame(rng, 8, 8));
  CHECK(out.features.height == 2);
  CHECK(out.features.width == 2);
  CHECK(out.features.channels() == cfg.feature_dim);
  CHECK(out.logits_lowres.height == 2);
  CHECK(out.logits.height == 8);
  CHECK(out.logits.channels() == cfg.num_classes);
}

TEST_CASE("reliability: uniform, near-one-hot, and hand-evaluated entropies") {
  Field uniform(2, 2, 3);  // all-equal logits: entropy maximal everywhere
  uniform.values.setConstant(0.7);
  ArrayXXd r_uniform = reliability_map(uniform);
  CHECK(r_uniform.maxCoeff() == doctest::Approx(0.0));

  // One near-one-hot pixel among uniform ones.
  Field mixed(2, 2, 2);
  mixed.values.setZero();
  mixed.values(0, 0) = 40.0;  // pixel (x=0, y=0): p ~ (1, 4e-18)
  ArrayXXd r = reliability_map(mixed);
  CHECK(r(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r(0, 1) == doctest::Approx(0.0));
  CHECK(r(1, 0) == doctest::Approx(0.0));

  // Hand-set softmax probabilities {(0.9,0.1),(0.5,0.5),(0.8,0.2),(0.6,0.4)}.
  Field probs(2, 2, 2);
  const double ps[4][2] = {{0.9, 0.1}, {0.5, 0.5}, {0.8, 0.2}, {0.6, 0.4}};
  for (int pix = 0; pix < 4; ++pix)
    for (int c = 0; c < 2; ++c) probs.values(pix, c) = std::log(ps[pix][c]);
  ArrayXXd rel = reliability_map(probs);
  // Scalar entropy oracle.
  double entropy[4], max_e = 0.0;
  for (int pix = 0; pix < 4; ++pix) {
    entropy[pix] = -(ps[pix][0] * std::log(ps[pix][0]) + ps[pix][1] * std::log(ps[pix][1]));
    max_e = std::max(max_e, entropy[pix]);
  }
  // Pixel layout: row 0 = pixels 0,1; row 1 = pixels 2,3.
  CHECK(rel(0, 0) == doctest::Approx(1.0 - entropy[0] / max_e));
  CHECK(rel(0, 1) == doctest::Approx(0.0));  // the 0.5/0.5 pixel has max entropy
  CHECK(rel(1, 0) == doctest::Approx(1.0 - entropy[2] / max_e));
  CHECK(rel(1, 1) == doctest::Approx(1.0 - entropy[3] / max_e));
  // (0,0) is the most reliable pixel.
  CHECK(rel(0, 0) == doctest::Approx(rel.maxCoeff()));

  // Degenerate all-confident map: max entropy ~ 0 -> R = 1 everywhere.
  Field confident(2, 2, 2);
  confident.values.col(0).setConstant(60.0);
  confident.values.col(1).setConstant(-60.0);
  CHECK(reliability_map(confident).minCoeff() == 1.0);

  Field bad(1, 1, 2);
  bad.values(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(reliability_map(bad), NumericalError);
}

TEST_CASE("reliability is invariant to per-pixel logit shifts") {
  Rng rng(17);
  Field logits(4, 4, 5);
  for (Eigen::Index i = 0; i < logits.values.rows(); ++i)
    for (Eigen::Index j = 0; j < logits.values.cols(); ++j)
      logits.values(i, j) = rng.uniform(-2.0, 2.0);
  ArrayXXd base = reliability_map(logits);
  CHECK(base.minCoeff() >= 0.0);
  CHECK(base.maxCoeff() <= 1.0);

  Field shifted = logits;
  for (Eigen::Index i = 0; i < shifted.values.rows(); ++i)
    shifted.values.row(i).array() += rng.uniform(-5.0, 5.0);
  ArrayXXd after = reliability_map(shifted);
  CHECK((after - base).abs().maxCoeff() < 1e-9);
}

TEST_CASE("predict is C1 in decoder parameters") {
  const SegmenterConfig cfg = tiny_config();
  SegmenterParams params = init_segmenter(cfg, 11);
  Rng rng(12);
  Field frame = random_frame(rng, 8, 8);

  // Inputs: the four decoder parameter matrices, checked against FD.
  std::vector<Mat> inputs{params.decoder.at("dec.w"), params.decoder.at("dec.b"),
                          params.decoder.at("cls.w"), params.decoder.at("cls.b")};
  auto build = [&](ad::Tape& tape, const std::vector<ad::Var>& leaves) {
    std::map<std::string, ad::Var> vars;
    for (const auto& [name, mat] : params.encoder) vars[name] = tape.constant(mat);
    vars["dec.w"] = leaves[0];
    vars["dec.b"] = leaves[1];
    vars["cls.w"] = leaves[2];
    vars["cls.b"] = leaves[3];
    TapedSegmenterOutput out = forward_taped(tape, cfg, vars, frame);
    return tape.sum(tape.tanh(out.logits));
  };
  CHECK(vseg::testing::max_rel_grad_err(inputs, build) < 1e-4);
}

TEST_CASE("training: no-op at 0 steps, descent, determinism") {
  std::vector<VideoClip> clips;
  for (uint64_t s = 0; s < 3; ++s) clips.push_back(generate_clip(train_spec(), 100 + s));

  SegmenterConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  cfg.num_classes = 4;

  TrainConfig none;
  none.steps = 0;
  none.seed = 9;
  TrainResult untouched = train_reference(cfg, clips, none);
  CHECK(params_identical(untouched.params, init_segmenter(cfg, 9)));
  CHECK(untouched.initial_loss == untouched.final_loss);

  TrainConfig short_run;
  short_run.steps = 40;
  short_run.seed = 9;
  TrainResult a = train_reference(cfg, clips, short_run);
  CHECK(a.final_loss < a.initial_loss);

  TrainResult b = train_reference(cfg, clips, short_run);
  CHECK(params_identical(a.params, b.params));
  CHECK(a.final_loss == b.final_loss);

  CHECK_THROWS_WITH_AS(train_reference(cfg, {}, short_run), doctest::Contains("empty"), DataError);
}

TEST_CASE("recorded fixture: 200 steps reach >0.80 held-out accuracy") {
  std::vector<VideoClip> train_clips;
  for (uint64_t s = 0; s < 10; ++s) train_clips.push_back(generate_clip(train_spec(), 200 + s));

  SegmenterConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  cfg.num_classes = 4;

  TrainConfig train;
  train.steps = 200;
  train.seed = 4242;
  TrainResult result = train_reference(cfg, train_clips, train);
  CHECK(result.final_loss < result.initial_loss);

  double held_out = 0.0;
  for (uint64_t s = 0; s < 3; ++s)
    held_out += pixel_accuracy(cfg, result.params, generate_clip(train_spec(), 900 + s));
  held_out /= 3.0;
  CHECK(held_out > 0.80);
}

TEST_CASE("checkpoint round trip and digest validation") {
  const SegmenterConfig cfg = tiny_config();
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.seed = 77;
  ckpt.params = init_segmenter(cfg, 77);
  ckpt.addon["proj_q"] = Mat::Identity(cfg.feature_dim, cfg.feature_dim);
  ckpt.addon["proj_k"] = Mat::Identity(cfg.feature_dim, cfg.feature_dim) * 0.5;

  fs::path dir = fs::temp_directory_path() / "vseg_segmenter_test";
  fs::create_directories(dir);
  const fs::path path = dir / "ckpt.json";
  save_checkpoint(ckpt, path);

  Checkpoint back = load_checkpoint(path);
  CHECK(params_identical(back.params, ckpt.params));
  CHECK(back.addon.at("proj_q") == ckpt.addon.at("proj_q"));
  CHECK(back.seed == 77);
  CHECK(checkpoint_digest(back) == checkpoint_digest(ckpt));

  // Tampering with a stored value breaks the digest.
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const auto pos = text.find("\"seed\": 77");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 10, "\"seed\": 78");
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("digest mismatch"), DataError);
}
