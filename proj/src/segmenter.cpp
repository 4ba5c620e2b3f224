// segmenter.cpp — reference encoder/decoder segmenter, reliability maps,
// frame-wise training, and digest-validated checkpoints.

#include "vseg/segmenter.hpp"

#include "vseg/dataio.hpp"
#include "vseg/digest.hpp"
#include "vseg/rng.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace vseg {

using nlohmann::json;

namespace {

void validate_config(const SegmenterConfig& cfg) {
  require(cfg.height >= 8 && cfg.width >= 8, "segmenter: height and width must be >= 8");
  require(cfg.height % 8 == 0 && cfg.width % 8 == 0,
          "segmenter: height and width must be divisible by 8");
  require(cfg.num_classes >= 2, "segmenter: num_classes must be >= 2");
  require(cfg.feature_dim >= 1 && cfg.enc1_channels >= 1 && cfg.enc2_channels >= 1,
          "segmenter: channel counts must be >= 1");
}

// name -> (rows, cols) for every parameter, given the config.
std::map<std::string, std::pair<int, int>> encoder_shapes(const SegmenterConfig& cfg) {
  return {{"enc1.w", {9 * 3, cfg.enc1_channels}},
          {"enc1.b", {1, cfg.enc1_channels}},
          {"enc2.w", {9 * cfg.enc1_channels, cfg.enc2_channels}},
          {"enc2.b", {1, cfg.enc2_channels}},
          {"enc3.w", {9 * cfg.enc2_channels, cfg.feature_dim}},
          {"enc3.b", {1, cfg.feature_dim}}};
}

std::map<std::string, std::pair<int, int>> decoder_shapes(const SegmenterConfig& cfg) {
  return {{"dec.w", {9 * cfg.feature_dim, cfg.feature_dim}},
          {"dec.b", {1, cfg.feature_dim}},
          {"cls.w", {cfg.feature_dim, cfg.num_classes}},
          {"cls.b", {1, cfg.num_classes}}};
}

ParamSet init_section(const std::map<std::string, std::pair<int, int>>& shapes, Rng& rng) {
  ParamSet out;
  for (const auto& [name, shape] : shapes) {
    Mat m = Mat::Zero(shape.first, shape.second);
    if (name.ends_with(".w")) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(shape.first));
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = scale * rng.normal();
    }
    out[name] = std::move(m);
  }
  return out;
}

}  // namespace

SegmenterParams init_segmenter(const SegmenterConfig& cfg, uint64_t seed) {
  validate_config(cfg);
  SegmenterParams params;
  Rng enc_rng(mix64(seed ^ 0x656e636f646572ULL));
  Rng dec_rng(mix64(seed ^ 0x6465636f646572ULL));
  params.encoder = init_section(encoder_shapes(cfg), enc_rng);
  params.decoder = init_section(decoder_shapes(cfg), dec_rng);
  return params;
}

std::map<std::string, ad::Var> params_to_vars(ad::Tape& tape, const SegmenterParams& params,
                                              bool encoder_trainable, bool decoder_trainable) {
  std::map<std::string, ad::Var> vars;
  for (const auto& [name, mat] : params.encoder)
    vars[name] = encoder_trainable ? tape.leaf(mat) : tape.constant(mat);
  for (const auto& [name, mat] : params.decoder)
    vars[name] = decoder_trainable ? tape.leaf(mat) : tape.constant(mat);
  return vars;
}

TapedSegmenterOutput forward_taped(ad::Tape& tape, const SegmenterConfig& cfg,
                                   const std::map<std::string, ad::Var>& vars, const Field& frame) {
  validate_config(cfg);
  require(frame.height == cfg.height && frame.width == cfg.width,
          "segmenter: frame shape mismatch (" + std::to_string(frame.height) + "x" +
              std::to_string(frame.width) + " vs configured " + std::to_string(cfg.height) + "x" +
              std::to_string(cfg.width) + ")");
  require(frame.channels() == 3, "segmenter: frame must have 3 channels");
  for (const auto& shapes : {encoder_shapes(cfg), decoder_shapes(cfg)})
    for (const auto& [name, shape] : shapes) {
      require(vars.count(name) == 1, "segmenter: missing parameter " + name);
      const ad::Var& v = vars.at(name);
      require(v.rows() == shape.first && v.cols() == shape.second,
              "segmenter: parameter " + name + " has wrong shape");
    }
  const auto p = [&vars](const char* name) { return vars.at(name); };

  const int h = cfg.height, w = cfg.width;
  ad::Var x = tape.constant(frame.values);
  ad::Var e1 = tape.tanh(tape.conv2d(x, p("enc1.w"), p("enc1.b"), h, w, 3, 3, 2, 1));
  ad::Var e2 = tape.tanh(
      tape.conv2d(e1, p("enc2.w"), p("enc2.b"), h / 2, w / 2, cfg.enc1_channels, 3, 2, 1));
  ad::Var e3 = tape.tanh(
      tape.conv2d(e2, p("enc3.w"), p("enc3.b"), h / 4, w / 4, cfg.enc2_channels, 3, 2, 1));

  ad::Var up = tape.upsample_bilinear(e3, h / 8, w / 8, 2);
  ad::Var feat = tape.tanh(
      tape.conv2d(up, p("dec.w"), p("dec.b"), h / 4, w / 4, cfg.feature_dim, 3, 1, 1));
  ad::Var logits_low =
      tape.conv2d(feat, p("cls.w"), p("cls.b"), h / 4, w / 4, cfg.feature_dim, 1, 1, 0);
  ad::Var logits = tape.upsample_bilinear(logits_low, h / 4, w / 4, 4);

  return TapedSegmenterOutput{feat, logits_low, logits};
}

SegmenterOutput predict(const SegmenterConfig& cfg, const SegmenterParams& params,
                        const Field& frame) {
  ad::Tape tape;
  auto vars = params_to_vars(tape, params, false, false);
  TapedSegmenterOutput out = forward_taped(tape, cfg, vars, frame);

  SegmenterOutput result;
  result.features.height = cfg.feature_height();
  result.features.width = cfg.feature_width();
  result.features.values = out.features.value();
  result.logits_lowres.height = cfg.feature_height();
  result.logits_lowres.width = cfg.feature_width();
  result.logits_lowres.values = out.logits_lowres.value();
  result.logits.height = cfg.height;
  result.logits.width = cfg.width;
  result.logits.values = out.logits.value();
  return result;
}

ArrayXXd reliability_map(const Field& logits) {
  if (!logits.values.allFinite())
    throw NumericalError("reliability_map: non-finite logits");
  const Mat logp = ad::log_softmax_rows_value(logits.values);
  const Mat p = ad::softmax_rows_value(logits.values);
  // Natural-log Shannon entropy per pixel; the normalization below cancels
  // any base change anyway.
  Eigen::VectorXd entropy = -(p.array() * logp.array()).rowwise().sum().matrix();
  const double max_entropy = entropy.maxCoeff();

  ArrayXXd reliability(logits.height, logits.width);
  if (max_entropy < 1e-12) {
    reliability.setOnes();
    return reliability;
  }
  for (int y = 0; y < logits.height; ++y)
    for (int x = 0; x < logits.width; ++x)
      reliability(y, x) = 1.0 - entropy(logits.index(x, y)) / max_entropy;
  return reliability;
}

namespace {

double dataset_mean_loss(const SegmenterConfig& cfg, const SegmenterParams& params,
                         const std::vector<VideoClip>& clips) {
  double total = 0.0;
  int64_t frames = 0;
  for (const VideoClip& clip : clips) {
    for (int t = 0; t < clip.num_frames(); ++t) {
      SegmenterOutput out = predict(cfg, params, clip.frames[t]);
      const Mat logp = ad::log_softmax_rows_value(out.logits.values);
      double sum = 0.0;
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x)
          sum -= logp(static_cast<Eigen::Index>(y) * cfg.width + x, clip.gt_semantic[t](y, x));
      total += sum / (cfg.height * cfg.width);
      ++frames;
    }
  }
  return frames > 0 ? total / static_cast<double>(frames) : 0.0;
}

}  // namespace

TrainResult train_reference(const SegmenterConfig& cfg, const std::vector<VideoClip>& clips,
                            const TrainConfig& train) {
  validate_config(cfg);
  require(!clips.empty(), "train_reference: empty dataset");
  for (const VideoClip& clip : clips) {
    require(clip.height() == cfg.height && clip.width() == cfg.width,
            "train_reference: clip shape mismatch");
    require(clip.num_classes <= cfg.num_classes, "train_reference: clip classes exceed config");
  }

  TrainResult result;
  result.params = init_segmenter(cfg, train.seed);
  result.initial_loss = dataset_mean_loss(cfg, result.params, clips);

  // Adam moment state mirrors the parameter sets.
  SegmenterParams m, v;
  auto zero_like = [](const ParamSet& src) {
    ParamSet out;
    for (const auto& [name, mat] : src) out[name] = Mat::Zero(mat.rows(), mat.cols());
    return out;
  };
  m.encoder = zero_like(result.params.encoder);
  m.decoder = zero_like(result.params.decoder);
  v.encoder = zero_like(result.params.encoder);
  v.decoder = zero_like(result.params.decoder);

  Rng rng(mix64(train.seed ^ 0x747261696e5f5251ULL));
  const int pixels = cfg.height * cfg.width;

  for (int step = 1; step <= train.steps; ++step) {
    const VideoClip& clip = clips[rng.uniform_int(0, static_cast<int>(clips.size()) - 1)];
    const int t = rng.uniform_int(0, clip.num_frames() - 1);

    ad::Tape tape;
    auto vars = params_to_vars(tape, result.params, true, true);
    TapedSegmenterOutput out = forward_taped(tape, cfg, vars, clip.frames[t]);

    Mat onehot = Mat::Zero(pixels, cfg.num_classes);
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x)
        onehot(static_cast<Eigen::Index>(y) * cfg.width + x, clip.gt_semantic[t](y, x)) = 1.0;

    ad::Var loss = tape.scale(
        tape.sum(tape.mul(tape.log_softmax_rows(out.logits), tape.constant(onehot))),
        -1.0 / pixels);
    const double loss_value = loss.value()(0, 0);
    if (!std::isfinite(loss_value))
      throw NumericalError("train_reference: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);

    auto update_section = [&](ParamSet& section, ParamSet& m_sec, ParamSet& v_sec) {
      for (auto& [name, mat] : section) {
        const Mat grad = vars.at(name).grad();
        if (!train.use_adam) {
          mat -= train.learning_rate * grad;
          continue;
        }
        Mat& mm = m_sec[name];
        Mat& vv = v_sec[name];
        mm = train.adam_beta1 * mm + (1.0 - train.adam_beta1) * grad;
        vv = (train.adam_beta2 * vv.array() +
              (1.0 - train.adam_beta2) * grad.array().square()).matrix();
        const double bc1 = 1.0 - std::pow(train.adam_beta1, step);
        const double bc2 = 1.0 - std::pow(train.adam_beta2, step);
        mat.array() -= train.learning_rate * (mm.array() / bc1) /
                       ((vv.array() / bc2).sqrt() + train.adam_eps);
      }
    };
    update_section(result.params.encoder, m.encoder, v.encoder);
    update_section(result.params.decoder, m.decoder, v.decoder);
  }

  result.final_loss = dataset_mean_loss(cfg, result.params, clips);
  if (!std::isfinite(result.final_loss))
    throw NumericalError("train_reference: non-finite final loss");
  return result;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

json section_to_json(const ParamSet& section) {
  json out = json::object();
  for (const auto& [name, mat] : section) {
    json data = json::array();
    for (Eigen::Index i = 0; i < mat.rows(); ++i)
      for (Eigen::Index j = 0; j < mat.cols(); ++j) data.push_back(mat(i, j));
    out[name] = {{"rows", mat.rows()}, {"cols", mat.cols()}, {"data", std::move(data)}};
  }
  return out;
}

ParamSet section_from_json(const json& j, const std::string& what) {
  ParamSet out;
  for (const auto& [name, entry] : j.items()) {
    const Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
    const json& data = entry.at("data");
    if (rows <= 0 || cols <= 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
      throw DataError("checkpoint: " + what + " parameter " + name + " has inconsistent shape");
    Mat m(rows, cols);
    Eigen::Index idx = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[idx++].get<double>();
    out[name] = std::move(m);
  }
  return out;
}

void digest_section(Fnv1a& h, const ParamSet& section) {
  for (const auto& [name, mat] : section) {
    h.update(name);
    h.update(static_cast<uint64_t>(mat.rows()));
    h.update(static_cast<uint64_t>(mat.cols()));
    for (Eigen::Index i = 0; i < mat.rows(); ++i)
      for (Eigen::Index j = 0; j < mat.cols(); ++j) h.update(mat(i, j));
  }
}

json config_to_json(const SegmenterConfig& cfg) {
  return {{"height", cfg.height},
          {"width", cfg.width},
          {"num_classes", cfg.num_classes},
          {"enc1_channels", cfg.enc1_channels},
          {"enc2_channels", cfg.enc2_channels},
          {"feature_dim", cfg.feature_dim}};
}

SegmenterConfig config_from_json(const json& j) {
  SegmenterConfig cfg;
  cfg.height = j.at("height").get<int>();
  cfg.width = j.at("width").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.enc1_channels = j.at("enc1_channels").get<int>();
  cfg.enc2_channels = j.at("enc2_channels").get<int>();
  cfg.feature_dim = j.at("feature_dim").get<int>();
  return cfg;
}

}  // namespace

std::string checkpoint_digest(const Checkpoint& ckpt) {
  Fnv1a h;
  h.update(config_to_json(ckpt.config).dump());
  h.update(ckpt.seed);
  digest_section(h, ckpt.params.encoder);
  digest_section(h, ckpt.params.decoder);
  digest_section(h, ckpt.addon);
  return h.hex();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json j{{"kind", "vseg_checkpoint"},
         {"config", config_to_json(ckpt.config)},
         {"seed", ckpt.seed},
         {"digest", checkpoint_digest(ckpt)},
         {"encoder", section_to_json(ckpt.params.encoder)},
         {"decoder", section_to_json(ckpt.params.decoder)},
         {"addon", section_to_json(ckpt.addon)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << j.dump(1) << "\n";
  if (!out) throw DataError(path.string() + ": short write");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": missing checkpoint");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint: " + e.what());
  }

  Checkpoint ckpt;
  std::string stored_digest;
  try {
    require(j.at("kind").get<std::string>() == "vseg_checkpoint",
            path.string() + ": not a segmenter checkpoint");
    ckpt.config = config_from_json(j.at("config"));
    ckpt.seed = j.at("seed").get<uint64_t>();
    stored_digest = j.at("digest").get<std::string>();
    ckpt.params.encoder = section_from_json(j.at("encoder"), "encoder");
    ckpt.params.decoder = section_from_json(j.at("decoder"), "decoder");
    ckpt.addon = section_from_json(j.at("addon"), "addon");
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint: " + e.what());
  }

  if (checkpoint_digest(ckpt) != stored_digest)
    throw DataError(path.string() + ": checkpoint digest mismatch (stored " + stored_digest +
                    ", recomputed " + checkpoint_digest(ckpt) + ")");

  // Shape sanity against the embedded config.
  for (const auto& [name, shape] : encoder_shapes(ckpt.config)) {
    require(ckpt.params.encoder.count(name) == 1, path.string() + ": missing parameter " + name);
    const Mat& m = ckpt.params.encoder.at(name);
    require(m.rows() == shape.first && m.cols() == shape.second,
            path.string() + ": parameter " + name + " has wrong shape");
  }
  for (const auto& [name, shape] : decoder_shapes(ckpt.config)) {
    require(ckpt.params.decoder.count(name) == 1, path.string() + ": missing parameter " + name);
    const Mat& m = ckpt.params.decoder.at(name);
    require(m.rows() == shape.first && m.cols() == shape.second,
            path.string() + ": parameter " + name + " has wrong shape");
  }
  return ckpt;
}

}  // namespace vseg
