#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "solar_ar/camera_source.hpp"
#include "solar_ar/marker_tracker.hpp"
#include "support.hpp"

using namespace solar_ar;
using solar_ar::fixtures::Rng;

namespace {

const Intrinsics kCam{600, 600, 319.5, 239.5, 640, 480};
const MarkerCode kCode7 = MarkerCode::parse("1101001011000110");
const MarkerCode kCode3 = MarkerCode::parse("1000011100101101");

MarkerBase demo_base() { return {"default", {{3, kCode3, 0.1}, {7, kCode7, 0.1}}, true}; }

/// GRAY8 canvas with the marker image pasted at (x0, y0) after `turns`
/// clockwise quarter turns.
Frame canvas_with_marker(const MarkerSpec& spec, int side, int x0, int y0, int turns, std::uint8_t bg = 220) {
  const Frame m = render_marker(spec, side);
  Frame f(200, 200, PixelFormat::kGray8, bg);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      // Clockwise turn of an image: out(x, y) = in(y, side - 1 - x).
      int sx = x, sy = y;
      for (int t = 0; t < turns; ++t) {
        const int nx = sy, ny = side - 1 - sx;
        sx = nx;
        sy = ny;
      }
      f.gray(x0 + x, y0 + y) = m.gray(sx, sy);
    }
  return f;
}

Quad square_quad(double x0, double y0, double side) {
  return {Vec2{x0 - 0.5, y0 - 0.5}, Vec2{x0 + side - 0.5, y0 - 0.5}, Vec2{x0 + side - 0.5, y0 + side - 0.5},
          Vec2{x0 - 0.5, y0 + side - 0.5}};
}

Frame render(const SyntheticWorld& w, const Pose& camera_to_world = Pose::identity()) {
  return render_world(w, kCam, camera_to_world);
}

const Mat3 kFrontal{{1, 0, 0, 0, 0, 1, 0, -1, 0}};

}  // namespace

// ---------------------------------------------------------------------------
// Marker base

TEST(MarkerBase, ParseAndRotate) {
  EXPECT_EQ(MarkerCode::parse("1101001011000110").to_string(), "1101001011000110");
  EXPECT_THROW(MarkerCode::parse("110"), Error);
  EXPECT_THROW(MarkerCode::parse("110100101100011x"), Error);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(kCode7.rotated_cw(k).rotated_cw(4 - k), kCode7);
  // One clockwise turn: the first row becomes the last column.
  const MarkerCode top_row = MarkerCode::parse("1111000000000000");
  EXPECT_EQ(top_row.rotated_cw().to_string(), "0001000100010001");
}

TEST(MarkerBase, Validation) {
  EXPECT_NO_THROW(validate(demo_base()));
  MarkerBase dup = demo_base();
  dup.markers[1].id = 3;
  try {
    validate(dup);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateId);
  }
  MarkerBase rot = demo_base();
  rot.markers[1].code = kCode3.rotated_cw(2);
  try {
    validate(rot);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRotationAmbiguity);
  }
  MarkerBase bad = demo_base();
  bad.markers[0].size_m = 0.0;
  EXPECT_THROW(validate(bad), Error);
}

TEST(MarkerBase, JsonRoundTripAndActivation) {
  const MarkerBase b = demo_base();
  const MarkerBase back = marker_base_from_json(to_json(b));
  ASSERT_EQ(back.markers.size(), 2u);
  EXPECT_EQ(back.markers[1].code, kCode7);
  EXPECT_FALSE(set_active(b, false).active);
  EXPECT_TRUE(b.active);
  EXPECT_THROW(marker_base_from_json(Json::parse(R"({"name":"x","markers":[{"id":1,"size_m":0.1}]})")), Error);
}

TEST(MarkerBase, RenderMarkerCells) {
  const Frame m = render_marker({7, kCode7, 0.1}, 60);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) EXPECT_EQ(m.gray(c * 10 + 5, r * 10 + 5), marker_cell_white(kCode7, r, c) ? 255 : 0);
  EXPECT_THROW(render_marker({7, kCode7, 0.1}, 50), Error);
}

// ---------------------------------------------------------------------------
// Candidate search

TEST(FindQuads, BlankFrameHasNone) {
  EXPECT_TRUE(find_quads(Frame(64, 64, PixelFormat::kGray8, std::uint8_t{255})).empty());
}

TEST(FindQuads, FrontalMarkerCornersWithinHalfPixel) {
  SyntheticWorld w;
  w.markers.push_back({7, 0.1, kCode7, {kFrontal, {0.01, -0.02, 0.5}}});
  const Frame gray = to_gray(render(w));
  const auto quads = find_quads(binarize(gray, 128));
  ASSERT_EQ(quads.size(), 1u);
  const MarkerSpec spec{7, kCode7, 0.1};
  const Pose m2c{kFrontal, {0.01, -0.02, 0.5}};
  for (Vec3 c : spec.corners()) {
    const Vec2 truth = project(kCam, m2c, c);
    double best = 1e9;
    for (Vec2 q : quads[0]) best = std::min(best, norm(q - truth));
    EXPECT_LT(best, 0.5);
  }
}

TEST(FindQuads, DarkDiskRejected) {
  Frame f(120, 120, PixelFormat::kGray8, std::uint8_t{255});
  for (int y = 0; y < 120; ++y)
    for (int x = 0; x < 120; ++x)
      if ((x - 60) * (x - 60) + (y - 60) * (y - 60) <= 35 * 35) f.gray(x, y) = 0;
  EXPECT_TRUE(find_quads(f).empty());
}

// ---------------------------------------------------------------------------
// Decoding

TEST(Decode, QuarterTurnsAreReported) {
  const std::vector<MarkerBase> bases{demo_base()};
  for (int turns = 0; turns < 4; ++turns) {
    const Frame f = canvas_with_marker({7, kCode7, 0.1}, 96, 50, 40, turns);
    const auto r = decode(f, square_quad(50, 40, 96), bases);
    ASSERT_TRUE(r) << "turns " << turns;
    EXPECT_EQ(r->spec.id, 7);
    EXPECT_EQ(r->rotation, turns);
    EXPECT_DOUBLE_EQ(r->confidence, 1.0);
  }
}

TEST(Decode, StartingCornerShiftsRotation) {
  // Rotation equivariance: relabelling the quad start by one corner is a
  // quarter turn of the reading frame.
  const std::vector<MarkerBase> bases{demo_base()};
  const Frame f = canvas_with_marker({3, kCode3, 0.1}, 60, 70, 70, 0);
  const Quad q = square_quad(70, 70, 60);
  for (int s = 0; s < 4; ++s) {
    Quad shifted;
    for (int i = 0; i < 4; ++i) shifted[static_cast<std::size_t>(i)] = q[static_cast<std::size_t>((i + s) % 4)];
    const auto r = decode(f, shifted, bases);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->spec.id, 3);
    EXPECT_EQ(r->rotation, (4 - s) % 4);
  }
}

TEST(Decode, BlankDarkSquareAndUnknownCode) {
  const std::vector<MarkerBase> bases{demo_base()};
  Frame dark(200, 200, PixelFormat::kGray8, std::uint8_t{220});
  for (int y = 50; y < 110; ++y)
    for (int x = 50; x < 110; ++x) dark.gray(x, y) = 0;
  EXPECT_FALSE(decode(dark, square_quad(50, 50, 60), bases));

  std::vector<MarkerBase> with_zero = bases;
  with_zero[0].markers.push_back({0, MarkerCode(0), 0.1});
  const auto zero = decode(dark, square_quad(50, 50, 60), with_zero);
  ASSERT_TRUE(zero);
  EXPECT_EQ(zero->spec.id, 0);

  const Frame other = canvas_with_marker({9, MarkerCode::parse("0100111000010010"), 0.1}, 60, 50, 50, 0);
  EXPECT_FALSE(decode(other, square_quad(50, 50, 60), bases));
}

TEST(Decode, InactiveBaseIgnored) {
  const std::vector<MarkerBase> bases{set_active(demo_base(), false)};
  const Frame f = canvas_with_marker({7, kCode7, 0.1}, 60, 50, 50, 0);
  EXPECT_FALSE(decode(f, square_quad(50, 50, 60), bases));
}

TEST(Decode, SelfSymmetricCodeReportsNoTurn) {
  // A code equal to its own quarter turn cannot carry orientation.
  const MarkerSpec sym{7, MarkerCode::parse("0110100110010110"), 0.1};
  ASSERT_EQ(sym.code.rotated_cw(), sym.code);
  const std::vector<MarkerBase> bases{{"sym", {sym}, true}};
  for (int turns = 0; turns < 4; ++turns) {
    const auto r = decode(canvas_with_marker(sym, 60, 50, 50, turns), square_quad(50, 50, 60), bases);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->rotation, 0);
  }
}

// ---------------------------------------------------------------------------
// Detection

TEST(Detect, FrontalExample) {
  SyntheticWorld w;
  const Pose truth{kFrontal, {0, 0, 0.5}};
  w.markers.push_back({7, 0.1, kCode7, truth});
  const std::vector<MarkerBase> bases{demo_base()};
  const auto dets = detect(build_pyramid(render(w), 3), bases, kCam);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].marker_id, 7);
  EXPECT_EQ(dets[0].rotation, 0);
  EXPECT_LT(fixtures::rotation_error_deg(dets[0].pose.rotation, truth.rotation), 1.0);
  EXPECT_LT(norm(dets[0].pose.translation - truth.translation), 0.02 * norm(truth.translation));
}

TEST(Detect, LinearPathAlsoMeetsFrontalExample) {
  SyntheticWorld w;
  const Pose truth{kFrontal, {0, 0, 0.5}};
  w.markers.push_back({7, 0.1, kCode7, truth});
  const std::vector<MarkerBase> bases{demo_base()};
  DetectorParams p;
  p.model_refinement = false;
  const auto dets = detect(build_pyramid(render(w), 3), bases, kCam, p);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_LT(fixtures::rotation_error_deg(dets[0].pose.rotation, truth.rotation), 1.0);
  EXPECT_LT(norm(dets[0].pose.translation - truth.translation), 0.02 * norm(truth.translation));
}

TEST(Detect, BlankFrame) {
  const std::vector<MarkerBase> bases{demo_base()};
  EXPECT_TRUE(detect(build_pyramid(Frame::filled_rgba(640, 480, {255, 255, 255}), 3), bases, kCam).empty());
}

TEST(Detect, TwoMarkersSortedById) {
  SyntheticWorld w;
  w.markers.push_back({7, 0.1, kCode7, {kFrontal, {-0.09, 0, 0.6}}});
  w.markers.push_back({3, 0.1, kCode3, {kFrontal, {0.09, 0, 0.6}}});
  const std::vector<MarkerBase> bases{demo_base()};
  const auto dets = detect(build_pyramid(render(w), 3), bases, kCam);
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_EQ(dets[0].marker_id, 3);
  EXPECT_EQ(dets[1].marker_id, 7);
  EXPECT_GT(dets[0].pose.translation.x, 0.0);
  EXPECT_LT(dets[1].pose.translation.x, 0.0);
}

TEST(Detect, InPlaneTurnsKeepPoseAndReportRotation) {
  const std::vector<MarkerBase> bases{demo_base()};
  for (int turns = 0; turns < 4; ++turns) {
    // Turning the marker about its own +Y by -90 degrees turns the printed
    // face clockwise on screen for a camera looking down -Y.
    // A small tilt and an in-plane offset: an axis-aligned frontal square
    // renders identical pixels for a range of tilts.
    const Mat3 tilt = axis_angle(Vec3{1, 0, 0.3}, 0.35) * rotation_y(0.2);
    const Pose truth{kFrontal * tilt * rotation_y(-turns * std::numbers::pi / 2), {0.02, 0.01, 0.45}};
    SyntheticWorld w;
    w.markers.push_back({7, 0.1, kCode7, truth});
    const auto dets = detect(build_pyramid(render(w), 3), bases, kCam);
    ASSERT_EQ(dets.size(), 1u);
    EXPECT_EQ(dets[0].rotation, turns);
    EXPECT_LT(fixtures::rotation_error_deg(dets[0].pose.rotation, truth.rotation), 1.0);
  }
}

TEST(Detect, IsDeterministic) {
  SyntheticWorld w;
  w.markers.push_back({7, 0.1, kCode7, {kFrontal * rotation_y(0.3), {0.05, 0.02, 0.7}}});
  const std::vector<MarkerBase> bases{demo_base()};
  const FramePyramid p = build_pyramid(render(w), 3);
  const auto a = detect(p, bases, kCam);
  const auto b = detect(p, bases, kCam);
  ASSERT_EQ(a.size(), 1u);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(a[0].pose, b[0].pose);
  EXPECT_EQ(a[0].corners_px, b[0].corners_px);
  EXPECT_EQ(a[0].homography.m, b[0].homography.m);
}

TEST(Detect, NoiseFramesGiveNoDetections) {
  Rng rng(99);
  const std::vector<MarkerBase> bases{demo_base()};
  for (int i = 0; i < 10; ++i) {
    Frame f(640, 480, PixelFormat::kRgba8);
    for (auto& b : f.mutable_pixels()) b = rng.byte();
    EXPECT_TRUE(detect(build_pyramid(f, 3), bases, kCam).empty());
  }
}

TEST(Detect, RandomPoseRoundTrip) {
  // The strict rotation gate of the acceptance run is reported there; this
  // suite pins the parts that hold for every sampled pose.
  Rng rng(2024);
  const std::vector<MarkerBase> bases{demo_base()};
  const MarkerSpec spec{7, kCode7, 0.1};
  int n = 0;
  double worst_rot = 0.0;
  while (n < 30) {
    Pose truth;
    if (!fixtures::random_marker_pose(rng, kCam, 0.1, 4.0, 20.0, 60.0, 3.0, truth)) continue;
    ++n;
    SyntheticWorld w;
    w.markers.push_back({7, 0.1, kCode7, truth});
    const auto dets = detect(build_pyramid(render(w), 1), bases, kCam);
    ASSERT_EQ(dets.size(), 1u) << "pose " << n;
    const double rot = fixtures::rotation_error_deg(dets[0].pose.rotation, truth.rotation);
    worst_rot = std::max(worst_rot, rot);
    EXPECT_LT(rot, 2.0);
    EXPECT_LT(norm(dets[0].pose.translation - truth.translation), 0.02 * norm(truth.translation));
    const auto corners = spec.corners();
    for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(norm(dets[0].corners_px[i] - project(kCam, truth, corners[i])), 0.75);
  }
  RecordProperty("worst_rotation_deg", std::to_string(worst_rot));
}

TEST(Detect, ReportedFieldsAreConsistent) {
  SyntheticWorld w;
  w.markers.push_back({7, 0.1, kCode7, {kFrontal * axis_angle({1, 0, 0}, 0.5), {-0.03, 0.02, 0.8}}});
  const std::vector<MarkerBase> bases{demo_base()};
  const auto dets = detect(build_pyramid(render(w), 3), bases, kCam);
  ASSERT_EQ(dets.size(), 1u);
  const auto corners = MarkerSpec{7, kCode7, 0.1}.corners();
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_LT(norm(project(kCam, dets[0].pose, corners[i]) - dets[0].corners_px[i]), 1e-9);
    EXPECT_LT(norm(apply_homography(dets[0].homography, {corners[i].x, corners[i].z}) - dets[0].corners_px[i]), 1e-6);
  }
}
