// dataio.cpp — synthetic clip generator and clip/prediction disk layout.

#include "vseg/dataio.hpp"

#include "vseg/image_io.hpp"
#include "vseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace vseg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// spec validation and (de)serialization
// ---------------------------------------------------------------------------

std::string shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::rect: return "rect";
    case ShapeKind::disk: return "disk";
    case ShapeKind::triangle: return "triangle";
  }
  throw DataError("unknown shape kind");
}

ShapeKind shape_kind_from_name(const std::string& name) {
  if (name == "rect") return ShapeKind::rect;
  if (name == "disk") return ShapeKind::disk;
  if (name == "triangle") return ShapeKind::triangle;
  throw DataError("unknown shape kind '" + name + "'");
}

void validate_spec(const ClipSpec& spec) {
  require(spec.height >= 4 && spec.width >= 4, "clip spec: height and width must be >= 4");
  require(spec.num_frames >= 2, "clip spec: num_frames must be >= 2");
  require(spec.num_classes >= 2, "clip spec: num_classes must be >= 2 (background + objects)");
  require(spec.noise_level >= 0.0 && spec.noise_level <= 1.0,
          "clip spec: noise_level must be in [0, 1]");
  require(spec.flicker_level >= 0.0 && spec.flicker_level <= 1.0,
          "clip spec: flicker_level must be in [0, 1]");
  const int limit = std::min(spec.height, spec.width) - 2;
  for (const ShapeSpec& s : spec.shapes) {
    require(s.class_id >= 1 && s.class_id < spec.num_classes,
            "clip spec: shape class_id " + std::to_string(s.class_id) + " outside [1, " +
                std::to_string(spec.num_classes) + ")");
    require(s.size_min >= 2, "clip spec: shape size_min must be >= 2");
    require(s.size_min <= s.size_max, "clip spec: shape size range inverted");
    require(s.size_max <= limit,
            "clip spec: shape size " + std::to_string(s.size_max) + " does not fit inside " +
                std::to_string(spec.height) + "x" + std::to_string(spec.width) + " frame");
    require(s.vx_min <= s.vx_max && s.vy_min <= s.vy_max, "clip spec: velocity range inverted");
    require(s.enter_frame >= 0 && s.enter_frame < spec.num_frames,
            "clip spec: shape enter_frame " + std::to_string(s.enter_frame) +
                " outside [0, " + std::to_string(spec.num_frames) + ")");
  }
}

json spec_to_json(const ClipSpec& spec) {
  json shapes = json::array();
  for (const ShapeSpec& s : spec.shapes) {
    shapes.push_back({{"class_id", s.class_id},
                      {"size_min", s.size_min},
                      {"size_max", s.size_max},
                      {"vx_min", s.vx_min},
                      {"vx_max", s.vx_max},
                      {"vy_min", s.vy_min},
                      {"vy_max", s.vy_max},
                      {"kind", shape_kind_name(s.kind)},
                      {"enter_frame", s.enter_frame}});
  }
  return json{{"height", spec.height},
              {"width", spec.width},
              {"num_frames", spec.num_frames},
              {"num_classes", spec.num_classes},
              {"shapes", shapes},
              {"background_seed", spec.background_seed},
              {"occlusion", spec.occlusion},
              {"noise_level", spec.noise_level},
              {"flicker_level", spec.flicker_level}};
}

ClipSpec spec_from_json(const json& j) {
  ClipSpec spec;
  try {
    spec.height = j.at("height").get<int>();
    spec.width = j.at("width").get<int>();
    spec.num_frames = j.at("num_frames").get<int>();
    spec.num_classes = j.at("num_classes").get<int>();
    spec.background_seed = j.at("background_seed").get<uint64_t>();
    spec.occlusion = j.at("occlusion").get<bool>();
    spec.noise_level = j.at("noise_level").get<double>();
    spec.flicker_level = j.value("flicker_level", 0.0);
    for (const json& s : j.at("shapes")) {
      ShapeSpec shape;
      shape.class_id = s.at("class_id").get<int>();
      shape.size_min = s.at("size_min").get<int>();
      shape.size_max = s.at("size_max").get<int>();
      shape.vx_min = s.at("vx_min").get<double>();
      shape.vx_max = s.at("vx_max").get<double>();
      shape.vy_min = s.at("vy_min").get<double>();
      shape.vy_max = s.at("vy_max").get<double>();
      shape.kind = shape_kind_from_name(s.at("kind").get<std::string>());
      shape.enter_frame = s.value("enter_frame", 0);
      spec.shapes.push_back(shape);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("clip spec json: ") + e.what());
  }
  validate_spec(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// trajectory planning
// ---------------------------------------------------------------------------

namespace {

uint64_t hash3(uint64_t seed, int64_t a, int64_t b, int64_t c) {
  uint64_t h = mix64(seed ^ 0x9e3779b97f4a7c15ULL);
  h = mix64(h ^ static_cast<uint64_t>(a));
  h = mix64(h ^ static_cast<uint64_t>(b));
  h = mix64(h ^ static_cast<uint64_t>(c));
  return h;
}

// Reflect c into [lo, hi], flipping the velocity each bounce.
void reflect_into(double& c, double& v, double lo, double hi) {
  while (c < lo || c > hi) {
    if (c < lo) {
      c = 2.0 * lo - c;
      v = -v;
    } else {
      c = 2.0 * hi - c;
      v = -v;
    }
  }
}

struct Box {
  int x0, y0, x1, y1;  // inclusive
  bool overlaps(const Box& o) const {
    return x0 <= o.x1 && o.x0 <= x1 && y0 <= o.y1 && o.y0 <= y1;
  }
};

Box shape_box(double cx, double cy, int size) {
  const int x0 = static_cast<int>(std::llround(cx - size / 2.0));
  const int y0 = static_cast<int>(std::llround(cy - size / 2.0));
  return Box{x0 - 1, y0 - 1, x0 + size, y0 + size};  // 1 px separation margin
}

bool shape_covers(ShapeKind kind, double cx, double cy, int size, int x, int y) {
  switch (kind) {
    case ShapeKind::rect: {
      const int x0 = static_cast<int>(std::llround(cx - size / 2.0));
      const int y0 = static_cast<int>(std::llround(cy - size / 2.0));
      return x >= x0 && x < x0 + size && y >= y0 && y < y0 + size;
    }
    case ShapeKind::disk: {
      const double r = size / 2.0;
      const double dx = x - cx, dy = y - cy;
      return dx * dx + dy * dy <= r * r + 1e-9;
    }
    case ShapeKind::triangle: {
      // Isoceles, apex up: width grows linearly from 0 at the top edge.
      const double top = cy - size / 2.0;
      const double t = (y - top) / size;
      if (t < -1e-9 || t > 1.0 + 1e-9) return false;
      const double halfw = t * size / 2.0;
      return std::abs(x - cx) <= halfw + 1e-9;
    }
  }
  return false;
}

}  // namespace

std::vector<ShapeTrack> plan_tracks(const ClipSpec& spec, uint64_t seed) {
  validate_spec(spec);
  Rng rng(mix64(seed ^ 0x706c616e5f74726bULL));
  std::vector<ShapeTrack> tracks;
  std::vector<Box> placed;

  for (size_t i = 0; i < spec.shapes.size(); ++i) {
    const ShapeSpec& s = spec.shapes[i];
    ShapeTrack track;
    track.instance_id = static_cast<int>(i) + 1;
    track.class_id = s.class_id;
    track.kind = s.kind;
    track.enter_frame = s.enter_frame;
    track.size = rng.uniform_int(s.size_min, s.size_max);

    const double half = track.size / 2.0;
    const int lo_x = static_cast<int>(std::ceil(half));
    const int hi_x = static_cast<int>(std::floor(spec.width - 1 - half));
    const int lo_y = static_cast<int>(std::ceil(half));
    const int hi_y = static_cast<int>(std::floor(spec.height - 1 - half));

    double cx = 0, cy = 0;
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      cx = rng.uniform_int(lo_x, hi_x);
      cy = rng.uniform_int(lo_y, hi_y);
      if (spec.occlusion) {
        ok = true;
        break;
      }
      const Box box = shape_box(cx, cy, track.size);
      ok = std::none_of(placed.begin(), placed.end(),
                        [&box](const Box& other) { return box.overlaps(other); });
    }
    if (!ok)
      throw DataError("clip spec: cannot place shape " + std::to_string(i) +
                      " without overlap; reduce sizes or enable occlusion");
    placed.push_back(shape_box(cx, cy, track.size));

    double vx = rng.uniform(s.vx_min, s.vx_max);
    double vy = rng.uniform(s.vy_min, s.vy_max);
    const double jx = 0.25 * (s.vx_max - s.vx_min);
    const double jy = 0.25 * (s.vy_max - s.vy_min);

    track.centers.reserve(spec.num_frames);
    track.centers.emplace_back(cx, cy);
    for (int t = 1; t < spec.num_frames; ++t) {
      cx += vx + jx * (2.0 * rng.uniform() - 1.0);
      cy += vy + jy * (2.0 * rng.uniform() - 1.0);
      reflect_into(cx, vx, lo_x, hi_x);
      reflect_into(cy, vy, lo_y, hi_y);
      track.centers.emplace_back(cx, cy);
    }
    tracks.push_back(std::move(track));
  }
  return tracks;
}

BoolMap rasterize_shape(ShapeKind kind, double cx, double cy, int size, int height, int width) {
  BoolMap mask = BoolMap::Constant(height, width, false);
  const int x_lo = std::max(0, static_cast<int>(std::floor(cx - size / 2.0)) - 1);
  const int x_hi = std::min(width - 1, static_cast<int>(std::ceil(cx + size / 2.0)) + 1);
  const int y_lo = std::max(0, static_cast<int>(std::floor(cy - size / 2.0)) - 1);
  const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(cy + size / 2.0)) + 1);
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x)
      if (shape_covers(kind, cx, cy, size, x, y)) mask(y, x) = true;
  return mask;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

namespace {

struct Color {
  int r, g, b;
};

// Bright, saturated anchors for object classes; background stays dark.
constexpr Color kPalette[] = {
    {230, 80, 80}, {80, 200, 90},  {90, 120, 235}, {235, 200, 70},
    {200, 90, 210}, {70, 210, 200}, {240, 140, 60}, {150, 230, 60},
};
constexpr int kPaletteSize = static_cast<int>(sizeof(kPalette) / sizeof(kPalette[0]));

int clamp255(int v) { return v < 0 ? 0 : (v > 255 ? 255 : v); }

int background_value(uint64_t bg_seed, int x, int y, int c, int noise_amp) {
  const int coarse = static_cast<int>(hash3(bg_seed, x >> 3, y >> 3, c) % 56);
  const int fine = static_cast<int>(hash3(bg_seed ^ 0xf1fe5eedULL, x, y, c) % 24);
  int v = 40 + coarse + fine;
  if (noise_amp > 0)
    v += static_cast<int>(hash3(bg_seed ^ 0xba5eba11ULL, x, y, c) % (2 * noise_amp + 1)) - noise_amp;
  return clamp255(v);
}

}  // namespace

VideoClip generate_clip(const ClipSpec& spec, uint64_t seed, const std::string& clip_id) {
  const std::vector<ShapeTrack> tracks = plan_tracks(spec, seed);

  VideoClip clip;
  clip.clip_id = clip_id.empty() ? "clip" + std::to_string(seed) : clip_id;
  clip.num_classes = spec.num_classes;
  clip.fps_nominal = 10.0;
  for (const ShapeTrack& track : tracks) clip.instance_classes[track.instance_id] = track.class_id;

  const int bg_noise = static_cast<int>(std::lround(spec.noise_level * 30));
  const int obj_noise = static_cast<int>(std::lround(spec.noise_level * 40));
  // Flicker splits into a frame-wide exposure wobble (spatially coherent,
  // like lighting or auto-gain drift) and fine per-pixel sensor noise.
  const int flicker_gain = static_cast<int>(std::lround(spec.flicker_level * 35));
  const int flicker_pix = static_cast<int>(std::lround(spec.flicker_level * 25));

  // Per-instance tint keeps objects of the same class distinguishable while
  // the class anchor color stays dominant.
  std::vector<Color> fill(tracks.size());
  for (size_t i = 0; i < tracks.size(); ++i) {
    const Color base = kPalette[(tracks[i].class_id - 1) % kPaletteSize];
    const auto tint = [&](int lane, int anchor) {
      return clamp255(anchor +
                      static_cast<int>(hash3(seed ^ 0x7171ULL, tracks[i].instance_id, lane, 0) % 33) -
                      16);
    };
    fill[i] = Color{tint(0, base.r), tint(1, base.g), tint(2, base.b)};
  }

  for (int t = 0; t < spec.num_frames; ++t) {
    Field frame(spec.height, spec.width, 3);
    LabelMap sem = LabelMap::Zero(spec.height, spec.width);
    LabelMap inst = LabelMap::Zero(spec.height, spec.width);

    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x)
        for (int c = 0; c < 3; ++c)
          frame(x, y, c) = background_value(spec.background_seed, x, y, c, bg_noise) / 255.0;

    // Later shapes draw on top (draw order resolves occlusion).
    for (size_t i = 0; i < tracks.size(); ++i) {
      const ShapeTrack& track = tracks[i];
      if (t < track.enter_frame) continue;
      const auto [cx, cy] = track.centers[t];
      const int ox = static_cast<int>(std::llround(cx));
      const int oy = static_cast<int>(std::llround(cy));
      const int x_lo = std::max(0, static_cast<int>(std::floor(cx - track.size / 2.0)) - 1);
      const int x_hi = std::min(spec.width - 1, static_cast<int>(std::ceil(cx + track.size / 2.0)) + 1);
      const int y_lo = std::max(0, static_cast<int>(std::floor(cy - track.size / 2.0)) - 1);
      const int y_hi = std::min(spec.height - 1, static_cast<int>(std::ceil(cy + track.size / 2.0)) + 1);
      const int anchors[3] = {fill[i].r, fill[i].g, fill[i].b};
      for (int y = y_lo; y <= y_hi; ++y) {
        for (int x = x_lo; x <= x_hi; ++x) {
          if (!shape_covers(track.kind, cx, cy, track.size, x, y)) continue;
          sem(y, x) = track.class_id;
          inst(y, x) = track.instance_id;
          for (int c = 0; c < 3; ++c) {
            int v = anchors[c];
            if (obj_noise > 0) {
              // Object-local coordinates: the texture rides with the shape.
              v += static_cast<int>(hash3(seed ^ 0x0b5e55ULL, track.instance_id,
                                          static_cast<int64_t>(y - oy) * 4096 + (x - ox), c) %
                                    (2 * obj_noise + 1)) -
                   obj_noise;
            }
            frame(x, y, c) = clamp255(v) / 255.0;
          }
        }
      }
    }

    // Frame-indexed noise on top of the rendered scene; unlike the static
    // texture grain it never repeats across frames, so predictions flicker
    // the way they would on real footage.
    if (flicker_gain > 0 || flicker_pix > 0) {
      int gain[3] = {0, 0, 0};
      for (int c = 0; c < 3; ++c)
        if (flicker_gain > 0)
          gain[c] = static_cast<int>(hash3(seed ^ 0x11fe5a17ULL, t, c, 0) %
                                     (2 * flicker_gain + 1)) -
                    flicker_gain;
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
          for (int c = 0; c < 3; ++c) {
            int v = static_cast<int>(std::lround(frame(x, y, c) * 255.0)) + gain[c];
            if (flicker_pix > 0)
              v += static_cast<int>(hash3(seed ^ 0xf11c4e70ULL, t,
                                          static_cast<int64_t>(y) * 8192 + x, c) %
                                    (2 * flicker_pix + 1)) -
                   flicker_pix;
            frame(x, y, c) = clamp255(v) / 255.0;
          }
        }
      }
    }

    clip.frames.push_back(std::move(frame));
    clip.gt_semantic.push_back(std::move(sem));
    clip.gt_instance.push_back(std::move(inst));
  }
  return clip;
}

// ---------------------------------------------------------------------------
// disk layout
// ---------------------------------------------------------------------------

namespace {

std::string frame_name(int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05d.%s", index, ext);
  return buf;
}

int count_regular_files(const fs::path& dir) {
  int n = 0;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) ++n;
  return n;
}

json read_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": missing " + what);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed " + what + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw DataError(path.string() + ": short write");
}

}  // namespace

void write_clip(const VideoClip& clip, const fs::path& clip_dir) {
  require(clip.num_frames() >= 1, "write_clip: clip has no frames");
  require(clip.gt_semantic.size() == clip.frames.size() &&
              clip.gt_instance.size() == clip.frames.size(),
          "write_clip: frame/label count mismatch");
  require(clip.num_classes >= 2, "write_clip: num_classes must be >= 2");

  int max_instance = 1;
  for (const auto& [id, cls] : clip.instance_classes) {
    require(id >= 1, "write_clip: instance ids must be >= 1");
    require(cls >= 0 && cls < clip.num_classes, "write_clip: instance class out of range");
    max_instance = std::max(max_instance, id);
  }

  fs::create_directories(clip_dir / "frames");
  fs::create_directories(clip_dir / "sem");
  fs::create_directories(clip_dir / "inst");

  for (int t = 0; t < clip.num_frames(); ++t) {
    write_ppm(clip_dir / "frames" / frame_name(t, "ppm"), clip.frames[t]);
    write_pgm(clip_dir / "sem" / frame_name(t, "pgm"), clip.gt_semantic[t], clip.num_classes - 1);
    write_pgm(clip_dir / "inst" / frame_name(t, "pgm"), clip.gt_instance[t], max_instance);
  }

  json instance_classes = json::array();
  for (const auto& [id, cls] : clip.instance_classes) instance_classes.push_back({id, cls});
  json meta{{"clip_id", clip.clip_id},
            {"height", clip.height()},
            {"width", clip.width()},
            {"num_frames", clip.num_frames()},
            {"num_classes", clip.num_classes},
            {"fps_nominal", clip.fps_nominal},
            {"max_instance_id", max_instance},
            {"instance_classes", instance_classes}};
  write_text_file(clip_dir / "meta", meta.dump(2) + "\n");
}

VideoClip read_clip(const fs::path& clip_dir) {
  const json meta = read_json_file(clip_dir / "meta", "clip meta file");

  VideoClip clip;
  int height = 0, width = 0, num_frames = 0;
  try {
    clip.clip_id = meta.at("clip_id").get<std::string>();
    height = meta.at("height").get<int>();
    width = meta.at("width").get<int>();
    num_frames = meta.at("num_frames").get<int>();
    clip.num_classes = meta.at("num_classes").get<int>();
    clip.fps_nominal = meta.at("fps_nominal").get<double>();
    for (const json& pair : meta.at("instance_classes"))
      clip.instance_classes[pair.at(0).get<int>()] = pair.at(1).get<int>();
  } catch (const json::exception& e) {
    throw DataError((clip_dir / "meta").string() + ": " + e.what());
  }
  require(num_frames >= 1, (clip_dir / "meta").string() + ": num_frames must be >= 1");
  require(clip.num_classes >= 2, (clip_dir / "meta").string() + ": num_classes must be >= 2");

  for (const char* sub : {"frames", "sem", "inst"}) {
    const fs::path dir = clip_dir / sub;
    if (!fs::is_directory(dir)) throw DataError(dir.string() + ": missing directory");
  }

  // Per-frame existence first, so a missing file is reported by frame index;
  // then a count check to catch stray extra files.
  for (int t = 0; t < num_frames; ++t) {
    for (const char* sub : {"frames", "sem", "inst"}) {
      const fs::path p = clip_dir / sub / frame_name(t, sub[0] == 'f' ? "ppm" : "pgm");
      if (!fs::exists(p))
        throw DataError(p.string() + ": missing file for frame " + std::to_string(t));
    }
  }
  for (const char* sub : {"frames", "sem", "inst"}) {
    const fs::path dir = clip_dir / sub;
    const int found = count_regular_files(dir);
    if (found != num_frames)
      throw DataError(dir.string() + ": expected " + std::to_string(num_frames) + " files, found " +
                      std::to_string(found));
  }

  for (int t = 0; t < num_frames; ++t) {
    const fs::path frame_path = clip_dir / "frames" / frame_name(t, "ppm");
    const fs::path sem_path = clip_dir / "sem" / frame_name(t, "pgm");
    const fs::path inst_path = clip_dir / "inst" / frame_name(t, "pgm");

    Field frame = read_ppm(frame_path);
    if (frame.height != height || frame.width != width)
      throw DataError(frame_path.string() + ": frame shape mismatch");

    LabelMap sem = read_pgm(sem_path);
    if (sem.rows() != height || sem.cols() != width)
      throw DataError(sem_path.string() + ": label shape mismatch");
    if (sem.maxCoeff() >= clip.num_classes)
      throw DataError(sem_path.string() + ": class index " + std::to_string(sem.maxCoeff()) +
                      " out of range for K=" + std::to_string(clip.num_classes));

    LabelMap inst = read_pgm(inst_path);
    if (inst.rows() != height || inst.cols() != width)
      throw DataError(inst_path.string() + ": label shape mismatch");
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (inst(y, x) != 0 && !clip.instance_classes.count(inst(y, x)))
          throw DataError(inst_path.string() + ": instance id " + std::to_string(inst(y, x)) +
                          " not declared in meta");

    clip.frames.push_back(std::move(frame));
    clip.gt_semantic.push_back(std::move(sem));
    clip.gt_instance.push_back(std::move(inst));
  }
  return clip;
}

void write_predictions(const std::vector<LabelMap>& preds, int num_classes, const fs::path& dir) {
  if (preds.empty()) throw DataError("write_predictions: no frames");
  require(num_classes >= 2, "write_predictions: num_classes must be >= 2");
  for (size_t t = 1; t < preds.size(); ++t)
    require(preds[t].rows() == preds[0].rows() && preds[t].cols() == preds[0].cols(),
            "write_predictions: frame " + std::to_string(t) + " shape mismatch");

  fs::create_directories(dir);
  for (size_t t = 0; t < preds.size(); ++t)
    write_pgm(dir / frame_name(static_cast<int>(t), "pgm"), preds[t], num_classes - 1);

  json meta{{"num_frames", preds.size()},
            {"num_classes", num_classes},
            {"height", preds[0].rows()},
            {"width", preds[0].cols()}};
  write_text_file(dir / "meta", meta.dump(2) + "\n");
}

std::vector<LabelMap> read_predictions(const fs::path& dir) {
  const json meta = read_json_file(dir / "meta", "prediction meta file");
  int num_frames = 0, num_classes = 0, height = 0, width = 0;
  try {
    num_frames = meta.at("num_frames").get<int>();
    num_classes = meta.at("num_classes").get<int>();
    height = meta.at("height").get<int>();
    width = meta.at("width").get<int>();
  } catch (const json::exception& e) {
    throw DataError((dir / "meta").string() + ": " + e.what());
  }

  std::vector<LabelMap> preds;
  for (int t = 0; t < num_frames; ++t) {
    const fs::path path = dir / frame_name(t, "pgm");
    if (!fs::exists(path))
      throw DataError(path.string() + ": missing prediction for frame " + std::to_string(t));
    LabelMap map = read_pgm(path);
    if (map.rows() != height || map.cols() != width)
      throw DataError(path.string() + ": prediction shape mismatch");
    if (map.maxCoeff() >= num_classes)
      throw DataError(path.string() + ": class index out of range");
    preds.push_back(std::move(map));
  }
  return preds;
}

}  // namespace vseg
