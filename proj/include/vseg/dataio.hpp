// dataio.hpp
//
// Synthetic video clips (moving labeled shapes over a textured background)
// and the on-disk clip layout. Generation is integer-hash based end to end,
// so a (spec, seed) pair reproduces the same clip bit-for-bit anywhere.

#pragma once

#include "vseg/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace vseg {

enum class ShapeKind { rect, disk, triangle };

std::string shape_kind_name(ShapeKind kind);
ShapeKind shape_kind_from_name(const std::string& name);

struct ShapeSpec {
  int class_id = 1;  // background is class 0
  int size_min = 8;
  int size_max = 8;
  // Per-component velocity ranges, px/frame. A zero-width range gives exact
  // linear motion; a wider range adds per-frame jitter around its midpoint.
  double vx_min = 0.0, vx_max = 0.0;
  double vy_min = 0.0, vy_max = 0.0;
  ShapeKind kind = ShapeKind::rect;
  int enter_frame = 0;  // first frame the shape is visible (0 = whole clip)
};

struct ClipSpec {
  int height = 64;
  int width = 64;
  int num_frames = 8;
  int num_classes = 2;  // includes background class 0
  std::vector<ShapeSpec> shapes;
  uint64_t background_seed = 0;
  bool occlusion = true;  // false: initial placements must not overlap
  double noise_level = 0.0;    // static texture grain (constant across frames)
  double flicker_level = 0.0;  // sensor-style noise resampled every frame
};

// Throws DataError naming the violated constraint.
void validate_spec(const ClipSpec& spec);

nlohmann::json spec_to_json(const ClipSpec& spec);
ClipSpec spec_from_json(const nlohmann::json& j);

struct VideoClip {
  std::string clip_id;
  int num_classes = 0;
  double fps_nominal = 10.0;
  std::vector<Field> frames;           // H x W x 3, values on the k/255 grid
  std::vector<LabelMap> gt_semantic;   // class ids in [0, num_classes)
  std::vector<LabelMap> gt_instance;   // 0 = background, ids stable over time
  std::map<int, int> instance_classes; // instance id -> class id

  int num_frames() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
};

// One shape's planned trajectory: per-frame centers after bouncing/jitter.
// Exposed so tests can re-rasterize shapes independently of the renderer.
struct ShapeTrack {
  int instance_id = 0;
  int class_id = 0;
  int size = 0;
  ShapeKind kind = ShapeKind::rect;
  int enter_frame = 0;                             // not rendered before this
  std::vector<std::pair<double, double>> centers;  // (cx, cy) per frame
};

std::vector<ShapeTrack> plan_tracks(const ClipSpec& spec, uint64_t seed);

// Pixel coverage of a single shape instance at one position.
BoolMap rasterize_shape(ShapeKind kind, double cx, double cy, int size, int height, int width);

VideoClip generate_clip(const ClipSpec& spec, uint64_t seed, const std::string& clip_id = "");

// Layout under clip_dir: frames/%05d.ppm, sem/%05d.pgm, inst/%05d.pgm, meta.
void write_clip(const VideoClip& clip, const std::filesystem::path& clip_dir);
VideoClip read_clip(const std::filesystem::path& clip_dir);

// Single-channel class-map dumps: %05d.pgm plus a meta file with the count
// and class range.
void write_predictions(const std::vector<LabelMap>& preds, int num_classes,
                       const std::filesystem::path& dir);
std::vector<LabelMap> read_predictions(const std::filesystem::path& dir);

}  // namespace vseg
