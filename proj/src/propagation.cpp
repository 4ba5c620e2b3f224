// propagation.cpp
//
// Connected-component tracking and the oracle/greedy propagation backends.

#include "vseg/propagation.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <utility>

namespace vseg {

// ---------------------------------------------------------------------------
// Components and IoU
// ---------------------------------------------------------------------------

ComponentSet connected_components(const LabelMap& classes) {
  const int h = static_cast<int>(classes.rows());
  const int w = static_cast<int>(classes.cols());
  require(h >= 1 && w >= 1, "connected_components: empty class map");

  ComponentSet set;
  set.labels = LabelMap::Constant(h, w, -1);
  std::vector<std::pair<int, int>> stack;
  for (int sy = 0; sy < h; ++sy) {
    for (int sx = 0; sx < w; ++sx) {
      if (set.labels(sy, sx) >= 0) continue;
      const int cls = classes(sy, sx);
      const int label = set.count();
      set.component_class.push_back(cls);
      int area = 0;
      set.labels(sy, sx) = label;
      stack.push_back({sy, sx});
      while (!stack.empty()) {
        const auto [y, x] = stack.back();
        stack.pop_back();
        ++area;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            if (set.labels(ny, nx) >= 0 || classes(ny, nx) != cls) continue;
            set.labels(ny, nx) = label;
            stack.push_back({ny, nx});
          }
      }
      set.component_area.push_back(area);
    }
  }
  return set;
}

double mask_iou(const BoolMap& a, const BoolMap& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mask_iou: shape mismatch");
  const auto inter = (a && b).count();
  const auto uni = (a || b).count();
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Greedy IoU tracking
// ---------------------------------------------------------------------------

std::vector<BoolMap> greedy_iou_track(const std::vector<LabelMap>& segmaps,
                                      const BoolMap& seed_mask, TrackDirection direction,
                                      double track_threshold) {
  require(!segmaps.empty(), "greedy_iou_track: no frames");
  const int h = static_cast<int>(segmaps.front().rows());
  const int w = static_cast<int>(segmaps.front().cols());
  for (const LabelMap& m : segmaps)
    require(m.rows() == h && m.cols() == w, "greedy_iou_track: class map shapes differ");
  require(seed_mask.rows() == h && seed_mask.cols() == w,
          "greedy_iou_track: seed mask shape mismatch");
  require(seed_mask.any(), "greedy_iou_track: empty seed mask");

  const int n = static_cast<int>(segmaps.size());
  std::vector<BoolMap> out(static_cast<size_t>(n), BoolMap::Constant(h, w, false));
  const bool forward = direction == TrackDirection::forward;
  const int start = forward ? 0 : n - 1;
  const int step = forward ? 1 : -1;
  out[static_cast<size_t>(start)] = seed_mask;

  BoolMap prev = seed_mask;
  double prev_area = static_cast<double>(prev.count());
  for (int i = start + step; i >= 0 && i < n; i += step) {
    const ComponentSet comps = connected_components(segmaps[i]);
    std::vector<long> inter(static_cast<size_t>(comps.count()), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (prev(y, x)) ++inter[static_cast<size_t>(comps.labels(y, x))];

    // Max IoU; ties by larger area, then lower label (labels ascend here, so
    // never replacing on a full tie keeps the lower label).
    int best = -1;
    double best_iou = -1.0;
    for (int c = 0; c < comps.count(); ++c) {
      const double ic = static_cast<double>(inter[static_cast<size_t>(c)]);
      const double iou = ic / (prev_area + comps.component_area[static_cast<size_t>(c)] - ic);
      if (iou > best_iou ||
          (iou == best_iou && comps.component_area[static_cast<size_t>(c)] >
                                  comps.component_area[static_cast<size_t>(best)]))
        best = c, best_iou = iou;
    }
    if (best < 0 || best_iou < track_threshold) break;  // later frames stay empty
    out[static_cast<size_t>(i)] = comps.mask_of(best);
    prev = out[static_cast<size_t>(i)];
    prev_area = static_cast<double>(comps.component_area[static_cast<size_t>(best)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

std::vector<SpatioTemporalMask> PropagationBackend::propagate(const PropagationRequest& request) {
  const FrameWindow win = request.window;
  require(win.size() >= 1, "propagate: empty frame window");
  require(win.begin >= 0, "propagate: negative window start");
  require(!request.prompts.empty(), "propagate: no prompts");
  require(static_cast<int>(request.predicted_classes.size()) == win.size(),
          "propagate: expected " + std::to_string(win.size()) + " predicted class maps, got " +
              std::to_string(request.predicted_classes.size()));
  const int h = static_cast<int>(request.predicted_classes.front().rows());
  const int w = static_cast<int>(request.predicted_classes.front().cols());
  require(h >= 1 && w >= 1, "propagate: empty class maps");
  for (const LabelMap& m : request.predicted_classes)
    require(m.rows() == h && m.cols() == w, "propagate: class map shapes differ");
  for (size_t i = 0; i < request.prompts.size(); ++i) {
    const Prompt& p = request.prompts[i];
    require(p.frame_index >= win.begin && p.frame_index < win.end,
            "propagate: prompt " + std::to_string(i) + " at frame " +
                std::to_string(p.frame_index) + " lies outside the window");
    require(p.x >= 0 && p.x < w && p.y >= 0 && p.y < h,
            "propagate: prompt " + std::to_string(i) + " location out of bounds");
  }
  ++calls_;

  // Seed in prompt order; a prompt whose seed nearly coincides with an
  // earlier one on the same frame resolves to the same object and is merged
  // into it (first prompt kept, original index preserved).
  struct Seeded {
    int index;
    Prompt prompt;
    BoolMap seed;
  };
  std::vector<Seeded> survivors;
  for (size_t i = 0; i < request.prompts.size(); ++i) {
    const Prompt& p = request.prompts[i];
    BoolMap seed = seed_mask(request, p);
    bool duplicate = false;
    for (const Seeded& s : survivors) {
      if (s.prompt.frame_index == p.frame_index && mask_iou(s.seed, seed) > 0.9) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) survivors.push_back(Seeded{static_cast<int>(i), p, std::move(seed)});
  }

  std::vector<SpatioTemporalMask> tracks;
  tracks.reserve(survivors.size());
  for (const Seeded& s : survivors) {
    SpatioTemporalMask track;
    track.object_id = s.index;
    track.prompt = s.prompt;
    track.window = win;
    track.masks = extend(request, s.prompt, s.seed);
    tracks.push_back(std::move(track));
  }
  return tracks;
}

BoolMap OracleBackend::seed_mask(const PropagationRequest& request, const Prompt& prompt) {
  require(request.window.end <= clip_->num_frames(),
          "oracle propagation: window extends past the clip");
  require(clip_->height() == static_cast<int>(request.predicted_classes.front().rows()) &&
              clip_->width() == static_cast<int>(request.predicted_classes.front().cols()),
          "oracle propagation: clip and request resolutions differ");
  const LabelMap& inst = clip_->gt_instance[static_cast<size_t>(prompt.frame_index)];
  return inst == inst(prompt.y, prompt.x);
}

std::vector<BoolMap> OracleBackend::extend(const PropagationRequest& request,
                                           const Prompt& prompt, const BoolMap&) {
  const LabelMap& at_prompt = clip_->gt_instance[static_cast<size_t>(prompt.frame_index)];
  const int id = at_prompt(prompt.y, prompt.x);
  std::vector<BoolMap> masks;
  masks.reserve(static_cast<size_t>(request.window.size()));
  for (int f = request.window.begin; f < request.window.end; ++f)
    masks.push_back(clip_->gt_instance[static_cast<size_t>(f)] == id);
  return masks;
}

GreedyIouBackend::GreedyIouBackend(double track_threshold) : track_threshold_(track_threshold) {
  require(track_threshold >= 0.0 && track_threshold <= 1.0,
          "greedy propagation: track threshold must lie in [0, 1]");
}

BoolMap GreedyIouBackend::seed_mask(const PropagationRequest& request, const Prompt& prompt) {
  const LabelMap& map =
      request.predicted_classes[static_cast<size_t>(prompt.frame_index - request.window.begin)];
  const ComponentSet comps = connected_components(map);
  return comps.mask_of(comps.labels(prompt.y, prompt.x));
}

std::vector<BoolMap> GreedyIouBackend::extend(const PropagationRequest& request,
                                              const Prompt& prompt, const BoolMap& seed) {
  const int rel = prompt.frame_index - request.window.begin;
  const auto& maps = request.predicted_classes;
  const std::vector<LabelMap> back_slice(maps.begin(), maps.begin() + rel + 1);
  const std::vector<LabelMap> fwd_slice(maps.begin() + rel, maps.end());
  std::vector<BoolMap> back =
      greedy_iou_track(back_slice, seed, TrackDirection::backward, track_threshold_);
  std::vector<BoolMap> fwd =
      greedy_iou_track(fwd_slice, seed, TrackDirection::forward, track_threshold_);

  std::vector<BoolMap> out;
  out.reserve(maps.size());
  for (int i = 0; i < rel; ++i) out.push_back(std::move(back[static_cast<size_t>(i)]));
  for (size_t i = 0; i < fwd.size(); ++i) out.push_back(std::move(fwd[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Track dumps
// ---------------------------------------------------------------------------

void write_mask_tracks(const std::vector<SpatioTemporalMask>& tracks, int height, int width,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << "vseg_mask_tracks 1\n";
  out << "tracks " << tracks.size() << " height " << height << " width " << width << "\n";
  for (const SpatioTemporalMask& track : tracks) {
    out << "track " << track.object_id << " window " << track.window.begin << " "
        << track.window.end << " prompt " << track.prompt.frame_index << " " << track.prompt.x
        << " " << track.prompt.y << " hint " << track.prompt.hint_class << " assigned "
        << track.assigned_class << "\n";
    require(static_cast<int>(track.masks.size()) == track.window.size(),
            "write_mask_tracks: track frame count does not match its window");
    for (int i = 0; i < track.window.size(); ++i) {
      const BoolMap& mask = track.masks[static_cast<size_t>(i)];
      require(static_cast<int>(mask.rows()) == height && static_cast<int>(mask.cols()) == width,
              "write_mask_tracks: mask resolution mismatch");
      // Row-major runs of set pixels as (start, length) pairs.
      std::vector<std::pair<long, long>> runs;
      long run_start = -1;
      for (long p = 0; p < static_cast<long>(height) * width; ++p) {
        const bool on = mask(p / width, p % width);
        if (on && run_start < 0) run_start = p;
        if (!on && run_start >= 0) {
          runs.push_back({run_start, p - run_start});
          run_start = -1;
        }
      }
      if (run_start >= 0)
        runs.push_back({run_start, static_cast<long>(height) * width - run_start});
      out << "frame " << track.window.begin + i << " runs " << runs.size();
      for (const auto& [start, len] : runs) out << " " << start << " " << len;
      out << "\n";
    }
  }
  if (!out) throw DataError(path.string() + ": write failed");
}

std::vector<SpatioTemporalMask> read_mask_tracks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  auto fail = [&path](const std::string& what) {
    return DataError(path.string() + ": " + what);
  };
  auto expect = [&](const std::string& keyword) {
    std::string token;
    if (!(in >> token) || token != keyword) throw fail("expected '" + keyword + "' token");
  };

  expect("vseg_mask_tracks");
  int version = 0;
  if (!(in >> version) || version != 1) throw fail("unsupported version");
  expect("tracks");
  long count = 0, height = 0, width = 0;
  if (!(in >> count) || count < 0) throw fail("bad track count");
  expect("height");
  if (!(in >> height) || height < 1) throw fail("bad height");
  expect("width");
  if (!(in >> width) || width < 1) throw fail("bad width");

  std::vector<SpatioTemporalMask> tracks;
  tracks.reserve(static_cast<size_t>(count));
  for (long t = 0; t < count; ++t) {
    SpatioTemporalMask track;
    expect("track");
    if (!(in >> track.object_id)) throw fail("bad object id");
    expect("window");
    if (!(in >> track.window.begin >> track.window.end) || track.window.size() < 1)
      throw fail("bad window");
    expect("prompt");
    if (!(in >> track.prompt.frame_index >> track.prompt.x >> track.prompt.y))
      throw fail("bad prompt");
    expect("hint");
    if (!(in >> track.prompt.hint_class)) throw fail("bad hint class");
    expect("assigned");
    if (!(in >> track.assigned_class)) throw fail("bad assigned class");
    for (int f = 0; f < track.window.size(); ++f) {
      expect("frame");
      long frame_index = 0, runs = 0;
      if (!(in >> frame_index) || frame_index != track.window.begin + f)
        throw fail("frame indices out of order");
      expect("runs");
      if (!(in >> runs) || runs < 0) throw fail("bad run count");
      BoolMap mask = BoolMap::Constant(height, width, false);
      long prev_end = -1;
      for (long r = 0; r < runs; ++r) {
        long start = 0, len = 0;
        if (!(in >> start >> len)) throw fail("truncated run list");
        if (start <= prev_end || len < 1 || start + len > height * width)
          throw fail("invalid run");
        for (long p = start; p < start + len; ++p) mask(p / width, p % width) = true;
        prev_end = start + len - 1;
      }
      track.masks.push_back(std::move(mask));
    }
    tracks.push_back(std::move(track));
  }
  return tracks;
}

}  // namespace vseg
