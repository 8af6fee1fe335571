#include "trackstitch/sim.h"

#include <cmath>
#include <cstring>
#include <numbers>

#include <gtest/gtest.h>

#include "test_util.h"
#include "trackstitch/error.h"
#include "trackstitch/eval.h"
#include "trackstitch/stitch.h"

namespace trackstitch {
namespace {

constexpr double kPi = std::numbers::pi;

TrackSpec Stadium() {
  TrackSpec s;
  s.segments = {TrackSegment::Straight(100.0), TrackSegment::Arc(10.0, kPi),
                TrackSegment::Straight(100.0), TrackSegment::Arc(10.0, kPi)};
  return s;
}

TrackSpec Circle(double r) {
  TrackSpec s;
  s.segments = {TrackSegment::Arc(r, 2 * kPi)};
  return s;
}

TEST(TrackModel, SquareCloses) {
  const ClosureGap gap = ComputeClosureGap(SquareSpec());
  EXPECT_LT(gap.displacement.norm(), 1e-9);
  EXPECT_LT(std::abs(gap.heading), 1e-12);
  EXPECT_NO_THROW(TrackModel::Make(SquareSpec()));
}

TEST(TrackModel, ThreeTurnsDoNotClose) {
  TrackSpec s = SquareSpec();
  s.segments.pop_back();
  s.segments.pop_back();
  s.segments.push_back(TrackSegment::Straight(20.0));
  const ClosureGap gap = ComputeClosureGap(s);
  EXPECT_NEAR(std::abs(gap.heading), kPi / 2, 1e-12);
  try {
    TrackModel::Make(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidArgument);
    EXPECT_NE(std::string(e.what()).find("heading"), std::string::npos) << e.what();
  }
}

TEST(TrackModel, AutoCloseProducesClosedCircuit) {
  // Three sides of the square plus a long fourth straight: closing needs an
  // r5 quarter turn then 5 m back along +x.
  TrackSpec s;
  for (int i = 0; i < 3; ++i) {
    s.segments.push_back(TrackSegment::Straight(20.0));
    s.segments.push_back(TrackSegment::Arc(10.0, kPi / 2));
  }
  s.segments.push_back(TrackSegment::Straight(25.0));
  s.auto_close = true;
  const TrackModel m = TrackModel::Make(s);
  const std::vector<TrackSegment>& segs = m.spec().segments;
  ASSERT_EQ(segs.size(), 9u);
  EXPECT_NEAR(segs[7].radius, 5.0, 1e-9);
  EXPECT_NEAR(segs[7].angle, kPi / 2, 1e-12);
  EXPECT_NEAR(segs[8].length, 5.0, 1e-9);
  const ClosureGap gap = ComputeClosureGap(m.spec());
  EXPECT_LT(gap.displacement.norm(), 1e-9);
  EXPECT_LT(std::abs(gap.heading), 1e-12);
}

TEST(TrackModel, MonacoLikeLength) {
  const TrackSpec spec = MonacoLikeSpec();
  EXPECT_EQ(spec.segments.size(), 19u);
  const TrackModel m = TrackModel::Make(spec);
  EXPECT_NEAR(m.length(), 3338.0, 0.01 * 3338.0);
  bool hairpin = false;
  for (const TrackSegment& seg : spec.segments) {
    hairpin = hairpin || (seg.kind == TrackSegment::Kind::kArc && std::abs(seg.angle) > 2.5);
  }
  EXPECT_TRUE(hairpin);
}

TEST(TrackModel, SpecFileRoundTrip) {
  const auto dir = testing::ScratchDir("trackspec");
  TrackSpec spec = MonacoLikeSpec();
  spec.elevation = 3.5;
  WriteTrackSpec((dir / "t.txt").string(), spec);
  const TrackSpec back = ParseTrackSpec((dir / "t.txt").string());
  ASSERT_EQ(back.segments.size(), spec.segments.size());
  for (size_t i = 0; i < spec.segments.size(); ++i) {
    EXPECT_EQ(back.segments[i].kind, spec.segments[i].kind);
    EXPECT_EQ(back.segments[i].length, spec.segments[i].length);
    EXPECT_EQ(back.segments[i].radius, spec.segments[i].radius);
    EXPECT_EQ(back.segments[i].angle, spec.segments[i].angle);
  }
  EXPECT_EQ(back.elevation, 3.5);
  EXPECT_EQ(TrackModel::Make(TrackSpecByName("file:" + (dir / "t.txt").string())).length(),
            TrackModel::Make(spec).length());
}

TEST(SampleTrajectory, StraightIsUniform) {
  const TrackModel m = TrackModel::Make(Stadium());
  const Trajectory t = SampleTrajectory(m, SpeedProfile::Constant(10.0), 10.0);
  for (int f = 1; f <= 100; ++f) {
    EXPECT_NEAR((t[f].pose.translation - t[f - 1].pose.translation).norm(), 1.0, 1e-12);
    EXPECT_LT(AngularDistance(t[f].pose.rotation, t[0].pose.rotation), 1e-12);
  }
  // Camera looks along the heading (+x) with y pointing down.
  EXPECT_LT((t[0].pose.rotation * Eigen::Vector3d::UnitZ() - Eigen::Vector3d::UnitX()).norm(), 1e-12);
  EXPECT_LT((t[0].pose.rotation * Eigen::Vector3d::UnitY() + Eigen::Vector3d::UnitZ()).norm(), 1e-12);
}

TEST(SampleTrajectory, CircleReturnsToStart) {
  const double r = 20.0;
  const TrackModel m = TrackModel::Make(Circle(r));
  // 100 frames per lap so the closing frame is sampled.
  const double v = 2 * kPi * r * 10.0 / 100.0;
  const Trajectory t = SampleTrajectory(m, SpeedProfile::Constant(v), 10.0);
  ASSERT_EQ(t.size(), 101u);
  EXPECT_LT((t.back().pose.translation - t.front().pose.translation).norm(), 1e-6);
  EXPECT_LT(AngularDistance(t.back().pose.rotation, t.front().pose.rotation), 1e-6);
}

TEST(SampleTrajectory, SlowInTurns) {
  const TrackModel m = TrackModel::Make(Stadium());
  const std::vector<double> s = FrameArcLengths(m, SpeedProfile::SlowInTurns(20.0, 8.0), 10.0);
  const double arc1 = m.segment_start(1), arc2 = m.segment_start(2);
  int arc_frames = 0;
  for (size_t f = 1; f < s.size(); ++f) {
    const double step = s[f] - s[f - 1];
    if (s[f - 1] >= arc1 && s[f] <= arc2) {
      EXPECT_NEAR(step, 0.8, 1e-9);
      ++arc_frames;
    } else if (s[f] <= arc1) {
      EXPECT_NEAR(step, 2.0, 1e-9);
    }
  }
  EXPECT_GT(arc_frames, 30);
}

TEST(CurvatureOf, ArcAndStraightValues) {
  const CurvatureProfile circle =
      CurvatureOf(TrackModel::Make(Circle(20.0)), SpeedProfile::Constant(10.0), 24.0);
  for (size_t f = 0; f + 1 < circle.size(); ++f) EXPECT_NEAR(circle[f], 10.0 / (20.0 * 24.0), 1e-12);
  EXPECT_NEAR(circle[0], 0.0208333333333, 1e-12);

  const TrackModel m = TrackModel::Make(Stadium());
  const std::vector<double> s = FrameArcLengths(m, SpeedProfile::Constant(10.0), 10.0);
  const CurvatureProfile k = CurvatureOf(m, SpeedProfile::Constant(10.0), 10.0);
  for (size_t f = 0; f + 1 < k.size(); ++f) {
    const bool on_straight = s[f + 1] <= m.segment_start(1) ||
                             (s[f] >= m.segment_start(2) && s[f + 1] <= m.segment_start(3));
    const bool on_arc = (s[f] >= m.segment_start(1) && s[f + 1] <= m.segment_start(2)) ||
                        s[f] >= m.segment_start(3);
    if (on_straight) EXPECT_EQ(k[f], 0.0) << f;
    if (on_arc) EXPECT_NEAR(k[f], 1.0 / 10.0, 1e-12) << f;
  }
}

TEST(SynthChunks, ZeroNoiseIdentityGaugeMatchesGroundTruth) {
  Scenario sc;
  sc.noise = NoiseModel::Preset("none");
  sc.noise.randomize_gauges = false;
  const SimulatedRun run = Simulate(sc);
  for (const ChunkReconstruction& c : run.synth.chunks) {
    for (const FrameRecord& r : c.frames) {
      const Pose& gt = run.ground_truth[r.frame_index].pose;
      EXPECT_LT((r.pose.translation - gt.translation).norm(), 1e-9);
      EXPECT_LT(AngularDistance(r.pose.rotation, gt.rotation), 1e-12);
    }
  }
}

TEST(SynthChunks, RandomGaugesAreRecoverable) {
  Scenario sc;
  sc.noise = NoiseModel::Preset("none");
  sc.noise.log_scale_sigma = 0.3;
  const SimulatedRun run = Simulate(sc);
  // Centres on a straight are collinear, so only chunks that include a turn
  // pin the gauge down.
  int checked = 0;
  for (size_t k = 0; k < run.synth.chunks.size(); ++k) {
    std::vector<Eigen::Vector3d> src, dst;
    for (const FrameRecord& r : run.synth.chunks[k].frames) {
      src.push_back(r.pose.translation);
      dst.push_back(run.ground_truth[r.frame_index].pose.translation);
    }
    Sim3 inv;
    try {
      inv = Umeyama(src, dst);
    } catch (const Error&) {
      continue;
    }
    ++checked;
    const Sim3 expected = run.synth.world_to_chunk[k].Inverse();
    EXPECT_LT(AngularDistance(inv.rotation, expected.rotation), 1e-9);
    EXPECT_LT(std::abs(inv.scale / expected.scale - 1.0), 1e-9);
    EXPECT_LT((inv.translation - expected.translation).norm(), 1e-6);
  }
  EXPECT_GE(checked, 8);
}

TEST(SynthChunks, DriftIntegratesOverTheChunk) {
  Scenario sc;
  sc.noise = NoiseModel::Preset("none");
  sc.noise.rotational_drift = 0.001;
  const SimulatedRun run = Simulate(sc);
  const ChunkReconstruction& c = run.synth.chunks[2];
  ASSERT_EQ(c.frames.size(), 120u);
  const FrameRecord& last = c.frames.back();
  const Pose aligned =
      TransformPose(run.synth.world_to_chunk[2], run.ground_truth[last.frame_index].pose);
  const double err = AngularDistance(last.pose.rotation, aligned.rotation);
  EXPECT_NEAR(err, 0.12, 0.012);
  // First frame of the chunk carries no drift.
  const Pose first =
      TransformPose(run.synth.world_to_chunk[2], run.ground_truth[c.first_frame()].pose);
  EXPECT_LT(AngularDistance(c.frames.front().pose.rotation, first.rotation), 1e-12);
}

TEST(SynthChunks, PointsLieOnSurfacesWithRangeConfidence) {
  Scenario sc;
  sc.noise = NoiseModel::Preset("none");
  sc.noise.randomize_gauges = false;
  const SimulatedRun run = Simulate(sc);
  std::vector<CloudPoint> pts;
  for (const FrameRecord& r : run.synth.chunks[3].frames) {
    for (const CloudPoint& p : r.points) {
      pts.push_back(p);
      const double d = (r.pose.Inverse() * p.position).norm();
      EXPECT_NEAR(p.confidence, std::exp(-d / 20.0), 1e-12);
      EXPECT_GE(p.pixel.x(), 0.0);
      EXPECT_LT(p.pixel.x(), sc.camera.width);
      EXPECT_GE(p.pixel.y(), 0.0);
      EXPECT_LT(p.pixel.y(), sc.camera.height);
    }
  }
  ASSERT_GT(pts.size(), 1000u);
  EXPECT_LT(CloudError(pts, run.track), 1e-9);
}

TEST(SynthChunks, SeedDeterminism) {
  Scenario sc;
  sc.noise = NoiseModel::Preset("severe");
  sc.noise.seed = 99;
  const SimulatedRun a = Simulate(sc);
  const SimulatedRun b = Simulate(sc);
  sc.noise.seed = 100;
  const SimulatedRun c = Simulate(sc);
  ASSERT_EQ(a.synth.chunks.size(), b.synth.chunks.size());
  bool any_difference = false;
  for (size_t k = 0; k < a.synth.chunks.size(); ++k) {
    for (size_t i = 0; i < a.synth.chunks[k].frames.size(); ++i) {
      const FrameRecord& x = a.synth.chunks[k].frames[i];
      const FrameRecord& y = b.synth.chunks[k].frames[i];
      ASSERT_EQ(std::memcmp(x.pose.translation.data(), y.pose.translation.data(), 24), 0);
      ASSERT_EQ(x.points.size(), y.points.size());
      for (size_t j = 0; j < x.points.size(); ++j) {
        ASSERT_EQ(std::memcmp(x.points[j].position.data(), y.points[j].position.data(), 24), 0);
      }
      any_difference = any_difference ||
                       x.pose.translation != c.synth.chunks[k].frames[i].pose.translation;
    }
  }
  EXPECT_TRUE(any_difference);
}

TEST(NoiseModel, PresetsAndFiles) {
  const NoiseModel m = NoiseModel::Preset("moderate");
  EXPECT_EQ(m.log_scale_sigma, 0.01);
  EXPECT_EQ(m.pose_sigma_t, 0.05);
  EXPECT_EQ(m.point_sigma, 0.05);
  EXPECT_THROW(NoiseModel::Preset("extreme"), Error);
  const auto dir = testing::ScratchDir("noise");
  testing::WriteFileBytes(dir / "n.txt", "# custom\npreset = mild\npoint_sigma = 0.3\nseed = 5\n");
  const NoiseModel f = NoiseModelByName((dir / "n.txt").string());
  EXPECT_EQ(f.point_sigma, 0.3);
  EXPECT_EQ(f.pose_sigma_t, 0.02);
  EXPECT_EQ(f.seed, 5u);
  testing::WriteFileBytes(dir / "bad.txt", "point_sigma = -1\n");
  EXPECT_THROW(NoiseModelByName((dir / "bad.txt").string()), Error);
}

}  // namespace
}  // namespace trackstitch
