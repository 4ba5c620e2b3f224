// test_propagation.cpp — component labeling, greedy IoU tracking against
// closed-form overlap ratios, both backends end to end, and the track dump
// format.

#include "doctest.h"
#include "vseg/dataio.hpp"
#include "vseg/propagation.hpp"

#include <filesystem>
#include <fstream>

using namespace vseg;
namespace fs = std::filesystem;

namespace {

// Class map with a single foreground rectangle [x0, x1) x [y0, y1).
LabelMap box_map(int h, int w, int x0, int x1, int y0, int y1, int cls = 1) {
  LabelMap map = LabelMap::Zero(h, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) map(y, x) = cls;
  return map;
}

BoolMap box_mask(int h, int w, int x0, int x1, int y0, int y1) {
  BoolMap mask = BoolMap::Constant(h, w, false);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) mask(y, x) = true;
  return mask;
}

ClipSpec moving_rect_spec(double vx) {
  ClipSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.num_frames = 2;
  spec.num_classes = 2;
  spec.background_seed = 7;
  spec.noise_level = 0.0;
  ShapeSpec s;
  s.class_id = 1;
  s.size_min = 8;
  s.size_max = 8;
  s.vx_min = vx;
  s.vx_max = vx;
  s.vy_min = 0.0;
  s.vy_max = 0.0;
  s.kind = ShapeKind::rect;
  spec.shapes = {s};
  return spec;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("vseg_prop_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("connected components split by class with 8-connectivity") {
  // Two diagonal same-class pixels touch corner-to-corner: one component.
  LabelMap map = LabelMap::Zero(3, 4);
  map(0, 0) = 1;
  map(1, 1) = 1;
  map(2, 3) = 2;
  const ComponentSet comps = connected_components(map);
  REQUIRE(comps.count() == 3);  // diagonal pair, background, lone pixel
  CHECK(comps.labels(0, 0) == comps.labels(1, 1));
  CHECK(comps.labels(0, 0) != comps.labels(0, 1));
  CHECK(comps.component_class[static_cast<size_t>(comps.labels(2, 3))] == 2);
  CHECK(comps.component_area[static_cast<size_t>(comps.labels(0, 0))] == 2);
  CHECK(comps.component_area[static_cast<size_t>(comps.labels(0, 1))] == 9);
  // Labels follow first row-major appearance: (0,0) before background (0,1).
  CHECK(comps.labels(0, 0) == 0);
  CHECK(comps.labels(0, 1) == 1);
  CHECK(comps.labels(2, 3) == 2);
  // mask_of reproduces the pixel set.
  CHECK(comps.mask_of(0).count() == 2);

  // A straight class border (4-adjacent different classes) still separates.
  LabelMap halves(2, 2);
  halves << 1, 2, 1, 2;
  CHECK(connected_components(halves).count() == 2);
}

TEST_CASE("mask IoU counts overlap over union") {
  const BoolMap a = box_mask(4, 8, 0, 4, 0, 1);
  const BoolMap b = box_mask(4, 8, 2, 5, 0, 1);
  CHECK(mask_iou(a, b) == 2.0 / 5.0);
  CHECK(mask_iou(a, a) == 1.0);
  const BoolMap none = BoolMap::Constant(4, 8, false);
  CHECK(mask_iou(none, none) == 0.0);
  CHECK(mask_iou(a, none) == 0.0);
  CHECK_THROWS_AS(mask_iou(a, BoolMap::Constant(2, 2, false)), DataError);
}

TEST_CASE("identical frames carry the mask unchanged") {
  const LabelMap map = box_map(8, 8, 1, 4, 1, 4);
  const std::vector<LabelMap> maps{map, map, map};
  const BoolMap seed = box_mask(8, 8, 1, 4, 1, 4);
  const auto masks = greedy_iou_track(maps, seed, TrackDirection::forward, 0.4);
  REQUIRE(masks.size() == 3);
  for (const BoolMap& m : masks) CHECK((m == seed).all());
}

TEST_CASE("a shrinking square survives exactly while the area ratios allow") {
  // Concentric squares of side 8, 6, 4 in a 12x12 frame. Successive IoUs are
  // 36/64 and 16/36 by containment.
  const std::vector<LabelMap> maps{box_map(12, 12, 2, 10, 2, 10), box_map(12, 12, 3, 9, 3, 9),
                                   box_map(12, 12, 4, 8, 4, 8)};
  const BoolMap seed = box_mask(12, 12, 2, 10, 2, 10);

  const auto survive = greedy_iou_track(maps, seed, TrackDirection::forward, 0.4);
  CHECK((survive[0] == seed).all());
  CHECK((survive[1] == box_mask(12, 12, 3, 9, 3, 9)).all());
  CHECK((survive[2] == box_mask(12, 12, 4, 8, 4, 8)).all());

  // 16/36 = 0.444... falls below 0.45, so only the second step survives.
  const auto cut = greedy_iou_track(maps, seed, TrackDirection::forward, 0.45);
  CHECK((cut[1] == box_mask(12, 12, 3, 9, 3, 9)).all());
  CHECK(cut[2].count() == 0);

  // Backward tracking mirrors the walk: seed on the small square, growing.
  // IoUs are identical (same pairs), so the track survives at 0.4.
  const auto back = greedy_iou_track(maps, box_mask(12, 12, 4, 8, 4, 8),
                                     TrackDirection::backward, 0.4);
  CHECK((back[2] == box_mask(12, 12, 4, 8, 4, 8)).all());
  CHECK((back[0] == seed).all());
}

TEST_CASE("a track reaching exactly the threshold survives") {
  // Strips of 4 and 3 pixels overlapping in 2: IoU = 2/5 = 0.4 exactly.
  const std::vector<LabelMap> maps{box_map(3, 8, 0, 4, 0, 1), box_map(3, 8, 2, 5, 0, 1)};
  const BoolMap seed = box_mask(3, 8, 0, 4, 0, 1);
  const auto at = greedy_iou_track(maps, seed, TrackDirection::forward, 0.4);
  CHECK(at[1].count() == 3);
  const auto above = greedy_iou_track(maps, seed, TrackDirection::forward, 0.41);
  CHECK(above[1].count() == 0);
}

TEST_CASE("termination empties every later frame") {
  // Frame 2's square jumps across the frame (zero overlap); frame 3 would
  // overlap frame 1 again but must stay empty after termination.
  const std::vector<LabelMap> maps{box_map(10, 16, 0, 4, 0, 4), box_map(10, 16, 1, 5, 0, 4),
                                   box_map(10, 16, 11, 15, 5, 9), box_map(10, 16, 1, 5, 0, 4)};
  const BoolMap seed = box_mask(10, 16, 0, 4, 0, 4);
  const auto masks = greedy_iou_track(maps, seed, TrackDirection::forward, 0.4);
  CHECK(masks[1].count() == 16);
  CHECK(masks[2].count() == 0);
  CHECK(masks[3].count() == 0);

  CHECK_THROWS_AS(
      greedy_iou_track(maps, BoolMap::Constant(10, 16, false), TrackDirection::forward, 0.4),
      DataError);
  CHECK_THROWS_AS(greedy_iou_track({}, seed, TrackDirection::forward, 0.4), DataError);
}

TEST_CASE("greedy ties break by larger area, then lower component label") {
  // Previous mask: 10-pixel strip in row 0. Candidates in the next frame:
  //   A, a 2x2 block intersecting 2 pixels  -> IoU 2/12 = 1/6
  //   B, an 11-pixel region intersecting 3  -> IoU 3/18 = 1/6
  // Equal IoU, so the larger B must win.
  const BoolMap prev = box_mask(6, 20, 0, 10, 0, 1);
  LabelMap frame = LabelMap::Zero(6, 20);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) frame(y, x) = 1;  // A
  for (int x = 7; x < 10; ++x) frame(0, x) = 1;   // B: 3 pixels inside prev
  for (int y = 1; y < 3; ++y)
    for (int x = 7; x < 11; ++x) frame(y, x) = 1;  // B: 8 more below
  {
    const auto masks =
        greedy_iou_track({box_map(6, 20, 0, 10, 0, 1), frame}, prev, TrackDirection::forward, 0.1);
    CHECK(masks[1].count() == 11);
    CHECK(masks[1](1, 8));
    CHECK_FALSE(masks[1](0, 0));
  }

  // Equal IoU and equal area: two 2x2 blocks each intersecting 2 pixels; the
  // block first encountered in row-major order keeps the lower label.
  LabelMap even = LabelMap::Zero(6, 20);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) even(y, x) = 1;  // label 0 (first pixel (0,0))
  for (int y = 0; y < 2; ++y)
    for (int x = 4; x < 6; ++x) even(y, x) = 1;  // later label
  {
    const auto masks =
        greedy_iou_track({box_map(6, 20, 0, 10, 0, 1), even}, prev, TrackDirection::forward, 0.1);
    CHECK(masks[1].count() == 4);
    CHECK(masks[1](0, 0));
    CHECK_FALSE(masks[1](0, 4));
  }
}

TEST_CASE("oracle backend reproduces instance regions exactly") {
  ClipSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.num_frames = 4;
  spec.num_classes = 3;
  spec.background_seed = 21;
  spec.noise_level = 0.1;
  ShapeSpec a;
  a.class_id = 1;
  a.size_min = 8;
  a.size_max = 10;
  a.vx_min = -1.0;
  a.vx_max = 1.0;
  a.vy_min = -1.0;
  a.vy_max = 1.0;
  a.kind = ShapeKind::rect;
  ShapeSpec b = a;
  b.class_id = 2;
  b.kind = ShapeKind::disk;
  spec.shapes = {a, b};
  const VideoClip clip = generate_clip(spec, 31, "oracle_clip");

  // Prompt on a pixel of instance 2 and one on the background.
  int px = -1, py = -1, bx = -1, by = -1;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      if (clip.gt_instance[0](y, x) == 2 && px < 0) px = x, py = y;
      if (clip.gt_instance[0](y, x) == 0 && bx < 0) bx = x, by = y;
    }
  REQUIRE(px >= 0);
  REQUIRE(bx >= 0);

  PropagationRequest request;
  request.window = FrameWindow{0, 4};
  request.prompts = {Prompt{0, px, py, 2}, Prompt{0, bx, by, 0}};
  request.predicted_classes.assign(clip.gt_semantic.begin(), clip.gt_semantic.end());

  OracleBackend backend(clip);
  CHECK(backend.calls() == 0);
  const auto tracks = backend.propagate(request);
  CHECK(backend.calls() == 1);
  REQUIRE(tracks.size() == 2);
  CHECK(tracks[0].object_id == 0);
  CHECK(tracks[1].object_id == 1);
  for (int t = 0; t < 4; ++t) {
    CHECK((tracks[0].masks[static_cast<size_t>(t)] == (clip.gt_instance[static_cast<size_t>(t)] == 2)).all());
    CHECK((tracks[1].masks[static_cast<size_t>(t)] == (clip.gt_instance[static_cast<size_t>(t)] == 0)).all());
  }

  // Two prompts on the same instance resolve to one object.
  int qx = -1, qy = -1;
  for (int y = 31; y >= 0 && qx < 0; --y)
    for (int x = 31; x >= 0; --x)
      if (clip.gt_instance[0](y, x) == 2) {
        qx = x, qy = y;
        break;
      }
  PropagationRequest dup = request;
  dup.prompts = {Prompt{0, px, py, 2}, Prompt{0, qx, qy, 2}};
  const auto merged = backend.propagate(dup);
  CHECK(backend.calls() == 2);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].object_id == 0);

  // A sub-window restricts the returned frames.
  PropagationRequest sub = request;
  sub.window = FrameWindow{1, 3};
  sub.prompts = {Prompt{2, px, py, 2}};  // instance 2 may have moved; any pixel works
  sub.prompts[0].x = 0;
  sub.prompts[0].y = 0;
  sub.predicted_classes.assign(clip.gt_semantic.begin() + 1, clip.gt_semantic.begin() + 3);
  const auto windowed = backend.propagate(sub);
  REQUIRE(windowed.size() == 1);
  CHECK(windowed[0].masks.size() == 2);
  CHECK((windowed[0].masks[1] ==
         (clip.gt_instance[2] == clip.gt_instance[2](0, 0))).all());
}

TEST_CASE("zero-motion clips give identical greedy masks on every frame") {
  ClipSpec spec = moving_rect_spec(0.0);
  spec.num_frames = 3;
  const VideoClip clip = generate_clip(spec, 9, "static_clip");
  REQUIRE((clip.gt_semantic[0] == clip.gt_semantic[2]).all());

  int px = -1, py = -1;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (clip.gt_semantic[0](y, x) == 1 && px < 0) px = x, py = y;

  PropagationRequest request;
  request.window = FrameWindow{0, 3};
  request.prompts = {Prompt{0, px, py, 1}};
  request.predicted_classes.assign(clip.gt_semantic.begin(), clip.gt_semantic.end());

  GreedyIouBackend backend(0.4);
  const auto tracks = backend.propagate(request);
  REQUIRE(tracks.size() == 1);
  for (const BoolMap& m : tracks[0].masks) CHECK((m == tracks[0].masks[0]).all());
  CHECK((tracks[0].masks[0] == (clip.gt_semantic[0] == 1)).all());
}

TEST_CASE("greedy tracking follows a translated square to its analytic position") {
  const ClipSpec spec = moving_rect_spec(2.0);
  const uint64_t seed = 1;
  const auto plan = plan_tracks(spec, seed);
  REQUIRE(plan.size() == 1);
  // Precondition: the planned motion is a clean +2 px/frame with no bounce.
  REQUIRE(plan[0].centers[1].first == plan[0].centers[0].first + 2.0);
  REQUIRE(plan[0].centers[1].second == plan[0].centers[0].second);

  const VideoClip clip = generate_clip(spec, seed, "translate_clip");
  int px = -1, py = -1;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (clip.gt_semantic[0](y, x) == 1 && px < 0) px = x, py = y;

  PropagationRequest request;
  request.window = FrameWindow{0, 2};
  request.prompts = {Prompt{0, px, py, 1}};
  request.predicted_classes.assign(clip.gt_semantic.begin(), clip.gt_semantic.end());
  GreedyIouBackend backend(0.4);
  const auto tracks = backend.propagate(request);
  REQUIRE(tracks.size() == 1);

  // Frame masks equal the planner's analytic shape placements...
  for (int t = 0; t < 2; ++t) {
    const BoolMap expected =
        rasterize_shape(plan[0].kind, plan[0].centers[static_cast<size_t>(t)].first,
                        plan[0].centers[static_cast<size_t>(t)].second, plan[0].size, 32, 32);
    CHECK((tracks[0].masks[static_cast<size_t>(t)] == expected).all());
  }
  // ...and the second is the first shifted by exactly (2, 0).
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const bool shifted = x >= 2 && tracks[0].masks[0](y, x - 2);
      CHECK(tracks[0].masks[1](y, x) == shifted);
    }
}

TEST_CASE("propagation is bidirectional from a mid-window prompt") {
  // A 4x4 square slides right 1 px/frame; the prompt sits on frame 2 of 5.
  std::vector<LabelMap> maps;
  for (int t = 0; t < 5; ++t) maps.push_back(box_map(10, 16, 3 + t, 7 + t, 3, 7));

  PropagationRequest request;
  request.window = FrameWindow{0, 5};
  request.prompts = {Prompt{2, 6, 4, 1}};
  request.predicted_classes = maps;
  GreedyIouBackend backend(0.4);
  const auto tracks = backend.propagate(request);
  REQUIRE(tracks.size() == 1);
  REQUIRE(tracks[0].masks.size() == 5);
  for (int t = 0; t < 5; ++t)
    CHECK((tracks[0].masks[static_cast<size_t>(t)] == box_mask(10, 16, 3 + t, 7 + t, 3, 7)).all());
}

TEST_CASE("greedy prompts inside one component deduplicate") {
  LabelMap map = box_map(8, 12, 1, 4, 1, 4);
  for (int y = 5; y < 7; ++y)
    for (int x = 8; x < 11; ++x) map(y, x) = 2;

  PropagationRequest request;
  request.window = FrameWindow{0, 1};
  request.prompts = {Prompt{0, 1, 1, 1}, Prompt{0, 3, 3, 1}, Prompt{0, 9, 5, 2}};
  request.predicted_classes = {map};
  GreedyIouBackend backend(0.4);
  const auto tracks = backend.propagate(request);
  REQUIRE(tracks.size() == 2);
  CHECK(tracks[0].object_id == 0);  // second prompt merged into the first
  CHECK(tracks[1].object_id == 2);
  CHECK(tracks[0].masks[0].count() == 9);
  CHECK(tracks[1].masks[0].count() == 6);

  // Determinism: a repeated run yields identical tracks.
  const auto again = backend.propagate(request);
  REQUIRE(again.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(again[i].object_id == tracks[i].object_id);
    CHECK((again[i].masks[0] == tracks[i].masks[0]).all());
  }
  CHECK(backend.calls() == 2);
}

TEST_CASE("propagate validates its request") {
  const LabelMap map = box_map(8, 8, 1, 4, 1, 4);
  GreedyIouBackend backend(0.4);

  PropagationRequest ok;
  ok.window = FrameWindow{0, 1};
  ok.prompts = {Prompt{0, 2, 2, 1}};
  ok.predicted_classes = {map};

  PropagationRequest bad = ok;
  bad.prompts.clear();
  CHECK_THROWS_WITH_AS(backend.propagate(bad), "propagate: no prompts", DataError);

  bad = ok;
  bad.window = FrameWindow{2, 2};
  CHECK_THROWS_AS(backend.propagate(bad), DataError);

  bad = ok;
  bad.prompts[0].frame_index = 1;
  CHECK_THROWS_AS(backend.propagate(bad), DataError);

  bad = ok;
  bad.prompts[0].x = 8;
  CHECK_THROWS_AS(backend.propagate(bad), DataError);

  bad = ok;
  bad.predicted_classes = {map, map};
  CHECK_THROWS_AS(backend.propagate(bad), DataError);

  CHECK_THROWS_AS(GreedyIouBackend(1.5), DataError);
  CHECK(backend.calls() == 0);  // rejected requests are not counted
}

TEST_CASE("mask track dumps round-trip through the text format") {
  // Reuse a mid-window track so the dump includes a bidirectional window,
  // plus a second track with a terminated (empty) tail.
  std::vector<LabelMap> maps;
  for (int t = 0; t < 3; ++t) maps.push_back(box_map(6, 10, 1 + t, 4 + t, 1, 4));
  maps[2] = box_map(6, 10, 1, 4, 1, 4);
  maps[2](5, 9) = 3;

  SpatioTemporalMask a;
  a.object_id = 0;
  a.prompt = Prompt{1, 2, 2, 1};
  a.assigned_class = 1;
  a.window = FrameWindow{0, 3};
  a.masks = {box_mask(6, 10, 1, 4, 1, 4), box_mask(6, 10, 2, 5, 1, 4),
             BoolMap::Constant(6, 10, false)};
  SpatioTemporalMask b;
  b.object_id = 2;
  b.prompt = Prompt{0, 9, 5, 3};
  b.window = FrameWindow{0, 3};
  b.masks = {box_mask(6, 10, 9, 10, 5, 6), box_mask(6, 10, 9, 10, 5, 6),
             box_mask(6, 10, 9, 10, 5, 6)};

  const fs::path dir = fresh_dir("dump");
  const fs::path file = dir / "tracks.txt";
  write_mask_tracks({a, b}, 6, 10, file);
  const auto back = read_mask_tracks(file);
  REQUIRE(back.size() == 2);
  CHECK(back[0].object_id == 0);
  CHECK(back[0].assigned_class == 1);
  CHECK(back[0].prompt.frame_index == 1);
  CHECK(back[0].prompt.hint_class == 1);
  CHECK(back[1].object_id == 2);
  CHECK(back[1].assigned_class == -1);
  for (int t = 0; t < 3; ++t) {
    CHECK((back[0].masks[static_cast<size_t>(t)] == a.masks[static_cast<size_t>(t)]).all());
    CHECK((back[1].masks[static_cast<size_t>(t)] == b.masks[static_cast<size_t>(t)]).all());
  }

  // Malformed inputs are rejected.
  CHECK_THROWS_AS(read_mask_tracks(dir / "absent.txt"), DataError);
  {
    std::ofstream bad(dir / "magic.txt");
    bad << "not_a_track_file 1\n";
  }
  CHECK_THROWS_AS(read_mask_tracks(dir / "magic.txt"), DataError);
  {
    std::ofstream bad(dir / "runs.txt");
    bad << "vseg_mask_tracks 1\ntracks 1 height 2 width 2\n"
        << "track 0 window 0 1 prompt 0 0 0 hint -1 assigned -1\n"
        << "frame 0 runs 1 3 4\n";  // run past the end of the frame
  }
  CHECK_THROWS_AS(read_mask_tracks(dir / "runs.txt"), DataError);
  fs::remove_all(dir);
}
