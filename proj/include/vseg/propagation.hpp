// propagation.hpp
//
// Mask propagation backends: given point prompts on a reference frame,
// produce object-consistent binary mask tracks across a frame window,
// extending both forward and backward from the prompt. The oracle backend
// reads ground-truth instance maps; the greedy backend tracks connected
// components of predicted class maps by IoU overlap and never sees ground
// truth (its interface carries none).

#pragma once

#include "vseg/dataio.hpp"
#include "vseg/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace vseg {

struct Prompt {
  int frame_index = 0;  // absolute clip frame index, inside the window
  int x = 0;
  int y = 0;
  int hint_class = -1;  // carried for later scoring; propagation ignores it
};

// Half-open frame range [begin, end).
struct FrameWindow {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
};

struct SpatioTemporalMask {
  int object_id = 0;        // index of the spawning prompt in the request order
  Prompt prompt;            // the surviving prompt after deduplication
  int assigned_class = -1;  // filled in by target labeling; -1 = unassigned
  FrameWindow window;
  std::vector<BoolMap> masks;  // masks[i] belongs to frame window.begin + i
};

struct PropagationRequest {
  FrameWindow window;
  std::vector<Prompt> prompts;
  // Predicted class maps, one per window frame. The greedy backend tracks
  // these; the oracle ignores them (it holds its own instance maps).
  std::vector<LabelMap> predicted_classes;
};

// Common entry point. propagate() validates the request, counts invocations
// (protocol tests assert exactly one call per adaptation run and none during
// evaluation), deduplicates prompts that resolve to near-identical masks on
// their prompt frame (IoU > 0.9, first prompt kept), and delegates to the
// backend for seeding and per-frame extension.
class PropagationBackend {
 public:
  virtual ~PropagationBackend() = default;

  std::vector<SpatioTemporalMask> propagate(const PropagationRequest& request);

  int calls() const { return calls_; }
  virtual std::string name() const = 0;

 protected:
  // Binary object mask seeding the track of `prompt` on its own frame.
  virtual BoolMap seed_mask(const PropagationRequest& request, const Prompt& prompt) = 0;
  // Extend a seeded track to every window frame (seed frame included).
  virtual std::vector<BoolMap> extend(const PropagationRequest& request, const Prompt& prompt,
                                      const BoolMap& seed) = 0;

 private:
  int calls_ = 0;
};

// Upper-bound backend: the track of a prompt is the ground-truth instance
// region under the prompt pixel, reproduced exactly on every window frame.
class OracleBackend : public PropagationBackend {
 public:
  explicit OracleBackend(const VideoClip& clip) : clip_(&clip) {}
  std::string name() const override { return "oracle"; }

 protected:
  BoolMap seed_mask(const PropagationRequest& request, const Prompt& prompt) override;
  std::vector<BoolMap> extend(const PropagationRequest& request, const Prompt& prompt,
                              const BoolMap& seed) override;

 private:
  const VideoClip* clip_;
};

// Realistic backend: tracks the 8-connected uniform-class component under
// the prompt through the predicted class maps by greedy IoU matching.
class GreedyIouBackend : public PropagationBackend {
 public:
  explicit GreedyIouBackend(double track_threshold = 0.4);
  std::string name() const override { return "greedy_iou"; }
  double track_threshold() const { return track_threshold_; }

 protected:
  BoolMap seed_mask(const PropagationRequest& request, const Prompt& prompt) override;
  std::vector<BoolMap> extend(const PropagationRequest& request, const Prompt& prompt,
                              const BoolMap& seed) override;

 private:
  double track_threshold_;
};

// ---------------------------------------------------------------------------
// Building blocks (exposed for tests and the zero-shot baseline)
// ---------------------------------------------------------------------------

// Maximal 8-connected regions of uniform class value. Labels are assigned in
// row-major order of each region's first pixel, starting at 0.
struct ComponentSet {
  LabelMap labels;  // (H, W) component index per pixel
  std::vector<int> component_class;
  std::vector<int> component_area;

  int count() const { return static_cast<int>(component_class.size()); }
  BoolMap mask_of(int component) const { return labels == component; }
};

ComponentSet connected_components(const LabelMap& classes);

// Intersection-over-union of two binary masks; 0 when both are empty.
double mask_iou(const BoolMap& a, const BoolMap& b);

enum class TrackDirection { forward, backward };

// Greedy component tracking. Forward: the seed aligns with segmaps.front()
// and the track walks toward the back; backward: the seed aligns with
// segmaps.back() and walks toward the front. Each step extends to the
// component of the next frame with maximal IoU against the previous mask
// (ties: larger area, then lower component label) if that IoU reaches
// track_threshold; otherwise the track terminates and the remaining frames
// stay empty. Returned masks align with segmaps.
std::vector<BoolMap> greedy_iou_track(const std::vector<LabelMap>& segmaps,
                                      const BoolMap& seed_mask, TrackDirection direction,
                                      double track_threshold);

// ---------------------------------------------------------------------------
// Debug dump: run-length-encoded tracks in a plain text file
// ---------------------------------------------------------------------------

void write_mask_tracks(const std::vector<SpatioTemporalMask>& tracks, int height, int width,
                       const std::filesystem::path& path);
std::vector<SpatioTemporalMask> read_mask_tracks(const std::filesystem::path& path);

}  // namespace vseg
