#include "trackstitch/stitch.h"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_util.h"
#include "trackstitch/chunkio.h"
#include "trackstitch/error.h"
#include "trackstitch/eval.h"
#include "trackstitch/sim.h"

namespace trackstitch {
namespace {

using testing::RandomSim3;
using testing::RandomVector;

void ExpectSim3Near(const Sim3& a, const Sim3& b, double tol) {
  EXPECT_NEAR(a.scale / b.scale, 1.0, tol);
  EXPECT_LT(AngularDistance(a.rotation, b.rotation), tol);
  EXPECT_LT((a.translation - b.translation).norm(), tol * std::max(1.0, b.translation.norm()));
}

TEST(Umeyama, IdenticalSetsGiveIdentity) {
  std::mt19937_64 rng(1);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 10; ++i) pts.push_back(RandomVector(rng, 3.0));
  const Sim3 t = Umeyama(pts, pts);
  ExpectSim3Near(t, Sim3::Identity(), 1e-12);
}

TEST(Umeyama, RecoversKnownSimilarity) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Sim3 truth = RandomSim3(rng);
    std::vector<Eigen::Vector3d> src, dst;
    for (int i = 0; i < 100; ++i) {
      src.push_back(RandomVector(rng, 5.0));
      dst.push_back(truth * src.back());
    }
    const Sim3 t = Umeyama(src, dst);
    EXPECT_LT(AngularDistance(t.rotation, truth.rotation), 1e-9);
    EXPECT_LT(std::abs(t.scale / truth.scale - 1.0), 1e-9);
    EXPECT_LT((t.translation - truth.translation).norm(), 1e-9);
  }
}

TEST(Umeyama, WithoutScaleKeepsUnitScale) {
  std::mt19937_64 rng(3);
  const Sim3 truth(1.7, testing::RandomRotation(rng), RandomVector(rng));
  std::vector<Eigen::Vector3d> src, dst;
  for (int i = 0; i < 30; ++i) {
    src.push_back(RandomVector(rng, 5.0));
    dst.push_back(truth * src.back());
  }
  const Sim3 t = Umeyama(src, dst, {.with_scale = false});
  EXPECT_EQ(t.scale, 1.0);
  EXPECT_LT(AngularDistance(t.rotation, truth.rotation), 1e-9);
}

TEST(Umeyama, TranslationOnlyNeedsOnePair) {
  const std::vector<Eigen::Vector3d> src = {{1, 2, 3}};
  const std::vector<Eigen::Vector3d> dst = {{4, 4, 4}};
  const Sim3 t = Umeyama(src, dst, {.with_scale = false, .with_rotation = false});
  EXPECT_LT((t.translation - Eigen::Vector3d(3, 2, 1)).norm(), 1e-15);
}

TEST(Umeyama, CollinearIsRankDeficient) {
  const std::vector<Eigen::Vector3d> src = {{0, 0, 0}, {1, 1, 1}, {2, 2, 2}};
  const std::vector<Eigen::Vector3d> dst = {{1, 0, 0}, {2, 1, 1}, {3, 2, 2}};
  try {
    Umeyama(src, dst);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumerical);
    EXPECT_NE(std::string(e.what()).find("rank-deficient alignment"), std::string::npos);
  }
}

// A chunk whose frames see a fixed set of landmarks, each tagged with the
// pixel it projects to, so the depth-ratio mode has matches.
ChunkReconstruction LandmarkChunk(int id, int start, int end, const Sim3& world_to_chunk) {
  const TrackModel track = TrackModel::Make(SquareSpec());
  const Trajectory gt = SampleTrajectory(track, SpeedProfile::Constant(10.0), 10.0);
  const CameraModel camera;
  ChunkReconstruction c;
  c.chunk_id = id;
  for (int f = start; f <= end; ++f) {
    FrameRecord r;
    r.frame_index = f;
    r.timestamp = gt[f].timestamp;
    r.pose = TransformPose(world_to_chunk, gt[f].pose);
    r.intrinsics = camera.intrinsics;
    for (const CloudPoint& w : VisibleLandmarks(track, f * 1.0, camera)) {
      const Eigen::Vector3d cam = gt[f].pose.Inverse() * w.position;
      if (cam.z() <= 0.1) continue;
      CloudPoint p;
      p.position = world_to_chunk * w.position;
      p.pixel = Eigen::Vector2d(camera.intrinsics.fx * cam.x() / cam.z() + camera.intrinsics.cx,
                                camera.intrinsics.fy * cam.y() / cam.z() + camera.intrinsics.cy);
      p.frame = f;
      r.points.push_back(p);
    }
    c.frames.push_back(r);
  }
  return c;
}

TEST(AlignOverlap, IdenticalChunksGiveIdentity) {
  const ChunkReconstruction a = LandmarkChunk(0, 0, 9, Sim3());
  const int shared[] = {9};
  const OverlapAlignment out = AlignOverlap(a, a, shared, ScaleMode::kUnit);
  ExpectSim3Near(out.transform, Sim3::Identity(), 1e-12);
}

TEST(AlignOverlap, RecoversExactCopyInEveryMode) {
  std::mt19937_64 rng(4);
  const Sim3 prev_gauge = RandomSim3(rng);
  for (ScaleMode mode : {ScaleMode::kUnit, ScaleMode::kDepthRatio, ScaleMode::kUmeyama}) {
    Sim3 next_gauge = RandomSim3(rng);
    if (mode == ScaleMode::kUnit) next_gauge.scale = prev_gauge.scale;
    const ChunkReconstruction prev = LandmarkChunk(0, 0, 9, prev_gauge);
    const ChunkReconstruction next = LandmarkChunk(1, 8, 17, next_gauge);
    const int shared[] = {8, 9};
    const OverlapAlignment out = AlignOverlap(prev, next, shared, mode);
    EXPECT_EQ(out.used_mode, mode);
    // next-local -> world -> prev-local.
    ExpectSim3Near(out.transform, prev_gauge * next_gauge.Inverse(), 1e-9);
  }
}

TEST(AlignOverlap, DepthRatioHalvesDoubledChunk) {
  const ChunkReconstruction prev = LandmarkChunk(0, 0, 9, Sim3());
  const ChunkReconstruction next = LandmarkChunk(1, 9, 18, Sim3::FromScale(2.0));
  const int shared[] = {9};
  const OverlapAlignment out = AlignOverlap(prev, next, shared, ScaleMode::kDepthRatio);
  EXPECT_GE(out.depth_matches, kMinDepthMatches);
  EXPECT_NEAR(out.transform.scale, 0.5, 0.005);
}

TEST(AlignOverlap, DepthRatioFallsBackWithoutMatches) {
  ChunkReconstruction prev = LandmarkChunk(0, 0, 9, Sim3());
  ChunkReconstruction next = LandmarkChunk(1, 9, 18, Sim3::FromScale(2.0));
  next.frames[0].points.resize(5);
  const int shared[] = {9};
  const OverlapAlignment out = AlignOverlap(prev, next, shared, ScaleMode::kDepthRatio);
  EXPECT_EQ(out.used_mode, ScaleMode::kUnit);
  EXPECT_EQ(out.transform.scale, 1.0);
  ASSERT_EQ(out.warnings.size(), 1u);
}

TEST(AlignOverlap, Preconditions) {
  const ChunkReconstruction prev = LandmarkChunk(0, 0, 9, Sim3());
  const ChunkReconstruction next = LandmarkChunk(1, 9, 18, Sim3());
  EXPECT_THROW(AlignOverlap(prev, next, {}, ScaleMode::kUnit), Error);
  const int missing[] = {8};
  EXPECT_THROW(AlignOverlap(prev, next, missing, ScaleMode::kUnit), Error);
  const int one[] = {9};
  EXPECT_THROW(AlignOverlap(prev, next, one, ScaleMode::kUmeyama), Error);
}

Scenario NoiselessScenario(double chunk_seconds = 5.0, int overlap = 1) {
  Scenario s;
  s.noise = NoiseModel::Preset("none");
  s.noise.seed = 17;
  s.chunk_seconds = chunk_seconds;
  s.overlap = overlap;
  return s;
}

TEST(StitchChunks, SingleChunkIsItsOwnTrajectory) {
  const ChunkReconstruction c = LandmarkChunk(0, 0, 9, Sim3(2.0, Rotation(), {1, 2, 3}));
  ChunkPlan plan;
  plan.chunks = {ChunkSpec{0, 0, 9, false}};
  const StitchResult r = StitchChunks({c}, plan, ScaleMode::kUnit);
  ASSERT_EQ(r.gauges.size(), 1u);
  ExpectSim3Near(r.gauges[0], Sim3::Identity(), 1e-15);
  ASSERT_EQ(r.trajectory.size(), c.frames.size());
  for (size_t i = 0; i < c.frames.size(); ++i) {
    EXPECT_EQ(r.trajectory[i].pose.translation, c.frames[i].pose.translation);
  }
  EXPECT_TRUE(r.seams.empty());
}

TEST(StitchChunks, NoiselessRandomGaugesReproduceGroundTruth) {
  const SimulatedRun run = Simulate(NoiselessScenario(100.0 / 24.0));
  ASSERT_GE(run.plan.chunks.size(), 20u);
  const StitchResult r = StitchChunks(run.synth.chunks, run.plan, ScaleMode::kUnit);
  ASSERT_EQ(r.trajectory.size(), run.ground_truth.size());
  const AteResult ate = Ate(r.trajectory, run.ground_truth, Alignment::kSim3);
  EXPECT_LT(ate.rmse, 1e-6 * run.track.length());
  // Gauge k maps chunk k into chunk 0, i.e. W_0 W_k^-1.
  const Sim3& w0 = run.synth.world_to_chunk[0];
  for (size_t k = 0; k < r.gauges.size(); ++k) {
    ExpectSim3Near(r.gauges[k], w0 * run.synth.world_to_chunk[k].Inverse(), 1e-9);
  }
  for (const SeamDiagnostics& s : r.seams) EXPECT_LT(s.residual, 1e-9);
}

TEST(StitchChunks, IncrementalGaugesEqualFromScratchComposition) {
  Scenario s = NoiselessScenario();
  s.noise = NoiseModel::Preset("moderate");
  const SimulatedRun run = Simulate(s);
  const StitchResult r = StitchChunks(run.synth.chunks, run.plan, ScaleMode::kUnit);
  for (size_t k = 1; k < r.gauges.size(); ++k) {
    Sim3 g;
    for (size_t j = 1; j <= k; ++j) {
      const int shared[] = {run.plan.chunks[j].start_frame};
      g = g * AlignOverlap(run.synth.chunks[j - 1], run.synth.chunks[j], shared, ScaleMode::kUnit)
                  .transform;
    }
    ExpectSim3Near(g, r.gauges[k], 1e-10);
  }
}

TEST(StitchChunks, DedupKeepsOnePosePerTimestamp) {
  const SimulatedRun run = Simulate(NoiselessScenario(2.0, 3));
  const StitchResult r = StitchChunks(run.synth.chunks, run.plan, ScaleMode::kUmeyama);
  ASSERT_EQ(static_cast<int>(r.trajectory.size()), run.meta.num_frames);
  for (size_t i = 1; i < r.trajectory.size(); ++i) {
    EXPECT_GT(r.trajectory[i].timestamp, r.trajectory[i - 1].timestamp);
  }
  // Earlier chunk wins: the first shared frame comes from chunk 0.
  const int f = run.plan.chunks[1].start_frame;
  const Pose expected =
      (r.gauges[0] * Sim3(run.synth.chunks[0].Find(f)->pose)).ToPose();
  EXPECT_EQ(r.trajectory[f].pose.translation, expected.translation);
}

TEST(StitchChunks, SeamResidualGrowsWithRotationNoise) {
  std::vector<double> mean_residual;
  for (double sigma : {0.0005, 0.002, 0.008}) {
    double total = 0.0;
    int count = 0;
    for (uint64_t seed : {1, 2, 3}) {
      Scenario s = NoiselessScenario(2.0, 3);
      s.noise.pose_sigma_r = sigma;
      s.noise.seed = seed;
      const SimulatedRun run = Simulate(s);
      const StitchResult r = StitchChunks(run.synth.chunks, run.plan, ScaleMode::kUmeyama);
      for (const SeamDiagnostics& d : r.seams) {
        total += d.residual;
        ++count;
      }
    }
    mean_residual.push_back(total / count);
  }
  EXPECT_GT(mean_residual[0], 0.0);
  EXPECT_LT(mean_residual[0], mean_residual[1]);
  EXPECT_LT(mean_residual[1], mean_residual[2]);
}

TEST(StitchChunks, ErrorsNameTheSeam) {
  const SimulatedRun run = Simulate(NoiselessScenario());
  std::vector<ChunkReconstruction> chunks = run.synth.chunks;
  chunks[4].frames.erase(chunks[4].frames.begin());
  try {
    StitchChunks(chunks, run.plan, ScaleMode::kUnit);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("chunk 3 and 4"), std::string::npos) << e.what();
  }
}

TEST(Gauges, FileRoundTrip) {
  std::mt19937_64 rng(9);
  std::vector<Sim3> gauges = {Sim3::Identity()};
  for (int i = 0; i < 16; ++i) gauges.push_back(RandomSim3(rng));
  const auto dir = testing::ScratchDir("gauges");
  WriteGauges((dir / "g.txt").string(), gauges);
  const std::vector<Sim3> back = ReadGauges((dir / "g.txt").string());
  ASSERT_EQ(back.size(), gauges.size());
  for (size_t k = 0; k < gauges.size(); ++k) {
    EXPECT_EQ(back[k].scale, gauges[k].scale);
    EXPECT_EQ(back[k].translation, gauges[k].translation);
    EXPECT_LT(AngularDistance(back[k].rotation, gauges[k].rotation), 1e-15);
  }
}

}  // namespace
}  // namespace trackstitch
