#include "trackstitch/chunkio.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "test_util.h"
#include "trackstitch/error.h"
#include "trackstitch/stitch.h"

namespace trackstitch {
namespace {

namespace fs = std::filesystem;
using testing::RandomPose;
using testing::ReadFileBytes;
using testing::ScratchDir;
using testing::WriteFileBytes;

const fs::path kMalformedDir = fs::path(TRACKSTITCH_TEST_DATA_DIR) / "data" / "malformed";

TEST(FormatDouble, RoundTripsExactly) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 10000; ++i) {
    const double v = u(rng) * std::pow(10.0, (i % 13) - 6);
    EXPECT_EQ(std::stod(FormatDouble(v)), v);
  }
  EXPECT_EQ(FormatDouble(0.5), "0.5");
  EXPECT_EQ(FormatDouble(24.0), "24");
}

Manifest SampleManifest(const fs::path& dir, int num_frames = 1920) {
  Manifest m;
  m.video = VideoMeta{num_frames, 24.0, 512, 144};
  m.plan = PlanFixedChunks(m.video, 5.0, 1);
  m.mask = BuildMask(MaskMode::kBottomFraction, {0.5, {}}, m.video);
  m.ground_truth = "gt.tum";
  for (const ChunkSpec& c : m.plan.chunks) {
    const std::string stem = "chunks/c" + std::to_string(c.chunk_id);
    m.payloads.push_back({stem + ".frames", stem + ".ply"});
    fs::create_directories(dir / "chunks");
    WriteFileBytes(dir / (stem + ".frames"), "");
    WriteFileBytes(dir / (stem + ".ply"), "");
  }
  return m;
}

void ExpectManifestEq(const Manifest& a, const Manifest& b) {
  EXPECT_EQ(a.video.num_frames, b.video.num_frames);
  EXPECT_EQ(a.video.fps, b.video.fps);
  EXPECT_EQ(a.video.width, b.video.width);
  EXPECT_EQ(a.video.height, b.video.height);
  EXPECT_EQ(a.plan, b.plan);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.payloads, b.payloads);
  EXPECT_EQ(a.ground_truth, b.ground_truth);
  EXPECT_EQ(a.track, b.track);
}

TEST(Manifest, RoundTripSeventeenChunks) {
  const fs::path dir = ScratchDir("manifest_rt");
  const Manifest m = SampleManifest(dir);
  ASSERT_EQ(m.plan.chunks.size(), 17u);
  WriteManifest(dir / "manifest.txt", m);
  ExpectManifestEq(ReadManifest(dir / "manifest.txt"), m);
}

TEST(Manifest, RoundTripFlagsAndPolygon) {
  const fs::path dir = ScratchDir("manifest_poly");
  Manifest m = SampleManifest(dir, 600);
  m.plan.chunks[2].boundary_flagged = true;
  m.plan.chunks[4].boundary_flagged = true;
  m.mask = BuildMask(MaskMode::kPolygon, {0.0, {{0.1, 0.6}, {0.9, 0.6}, {0.7, 1.0}, {0.3, 1.0}}},
                     m.video);
  m.ground_truth.clear();
  m.track = "track.txt";
  WriteManifest(dir / "manifest.txt", m);
  ExpectManifestEq(ReadManifest(dir / "manifest.txt"), m);
}

TEST(Manifest, GappedPlanIsRejected) {
  const fs::path dir = ScratchDir("manifest_gap");
  Manifest m = SampleManifest(dir);
  m.plan.chunks[5].start_frame += 3;
  WriteManifest(dir / "manifest.txt", m);
  try {
    ReadManifest(dir / "manifest.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("coverage gap"), std::string::npos) << e.what();
  }
}

TEST(Manifest, MissingPayloadNamesTheChunk) {
  const fs::path dir = ScratchDir("manifest_missing");
  const Manifest m = SampleManifest(dir);
  WriteManifest(dir / "manifest.txt", m);
  fs::remove(dir / "chunks" / "c3.ply");
  try {
    ReadManifest(dir / "manifest.txt");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("missing chunk payload"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("chunk 3"), std::string::npos);
    EXPECT_GT(e.line(), 0);
  }
}

ChunkReconstruction RandomChunk(std::mt19937_64& rng, int id, int start, int end) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ChunkReconstruction c;
  c.chunk_id = id;
  for (int f = start; f <= end; ++f) {
    FrameRecord r;
    r.frame_index = f;
    r.timestamp = f / 24.0;
    r.pose = RandomPose(rng);
    r.intrinsics = Intrinsics{300.0 + u(rng), 301.0, 256.0, 72.0};
    for (int i = 0; i < 5; ++i) {
      CloudPoint p;
      p.position = testing::RandomVector(rng, 20.0);
      p.confidence = u(rng);
      p.pixel = Eigen::Vector2d(512 * u(rng), 144 * u(rng));
      p.frame = f;
      r.points.push_back(p);
    }
    c.frames.push_back(r);
  }
  return c;
}

TEST(Chunk, WriteReadRoundTrip) {
  const fs::path dir = ScratchDir("chunk_rt");
  std::mt19937_64 rng(4);
  Manifest m;
  m.video = VideoMeta{30, 24.0, 512, 144};
  m.plan = PlanFixedChunks(m.video, 20.0 / 24.0, 1);
  ASSERT_EQ(m.plan.chunks.size(), 2u);
  std::vector<ChunkReconstruction> chunks;
  for (const ChunkSpec& c : m.plan.chunks) {
    chunks.push_back(RandomChunk(rng, c.chunk_id, c.start_frame, c.end_frame));
    const ChunkPayload payload{"c" + std::to_string(c.chunk_id) + ".frames",
                               "c" + std::to_string(c.chunk_id) + ".ply"};
    m.payloads.push_back(payload);
    WriteChunk(dir, chunks.back(), payload);
  }
  WriteManifest(dir / "manifest.txt", m);
  const Manifest read = ReadManifest(dir / "manifest.txt");
  const std::vector<ChunkReconstruction> back = ReadAllChunks(dir / "manifest.txt", read);
  ASSERT_EQ(back.size(), chunks.size());
  for (size_t k = 0; k < chunks.size(); ++k) {
    ASSERT_EQ(back[k].frames.size(), chunks[k].frames.size());
    for (size_t i = 0; i < chunks[k].frames.size(); ++i) {
      const FrameRecord& a = chunks[k].frames[i];
      const FrameRecord& b = back[k].frames[i];
      EXPECT_EQ(a.frame_index, b.frame_index);
      EXPECT_EQ(a.timestamp, b.timestamp);
      EXPECT_EQ(a.pose.translation, b.pose.translation);
      EXPECT_LT(AngularDistance(a.pose.rotation, b.pose.rotation), 1e-12);
      EXPECT_EQ(a.intrinsics.fx, b.intrinsics.fx);
      ASSERT_EQ(a.points.size(), b.points.size());
      for (size_t j = 0; j < a.points.size(); ++j) {
        EXPECT_EQ(a.points[j].position, b.points[j].position);
        EXPECT_EQ(a.points[j].confidence, b.points[j].confidence);
        EXPECT_EQ(a.points[j].pixel, b.points[j].pixel);
      }
    }
  }
}

TEST(Chunk, ValidateRejectsBadRecords) {
  std::mt19937_64 rng(5);
  const ChunkSpec spec{0, 10, 19, false};
  const ChunkReconstruction good = RandomChunk(rng, 0, 10, 19);
  EXPECT_NO_THROW(ValidateChunk(good, spec));
  ChunkReconstruction short_chunk = good;
  short_chunk.frames.pop_back();
  EXPECT_THROW(ValidateChunk(short_chunk, spec), Error);
  ChunkReconstruction bad_focal = good;
  bad_focal.frames[3].intrinsics.fx = 0.0;
  EXPECT_THROW(ValidateChunk(bad_focal, spec), Error);
  ChunkReconstruction bad_conf = good;
  bad_conf.frames[2].points[0].confidence = 1.5;
  EXPECT_THROW(ValidateChunk(bad_conf, spec), Error);
}

TEST(Trajectory, IdentityLine) {
  const fs::path dir = ScratchDir("tum_identity");
  WriteFileBytes(dir / "t.tum", "# comment\n0.0 0 0 0 0 0 0 1\n");
  const Trajectory t = ReadTrajectory(dir / "t.tum");
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].timestamp, 0.0);
  EXPECT_EQ(t[0].pose.translation, Eigen::Vector3d::Zero());
  EXPECT_EQ(t[0].pose.rotation.angle(), 0.0);
}

TEST(Trajectory, RandomRoundTrip) {
  const fs::path dir = ScratchDir("tum_rt");
  std::mt19937_64 rng(6);
  Trajectory t;
  for (int i = 0; i < 1000; ++i) t.push_back({i * 0.0416667 + 3.0, RandomPose(rng)});
  WriteTrajectory(dir / "t.tum", t);
  const Trajectory back = ReadTrajectory(dir / "t.tum");
  ASSERT_EQ(back.size(), t.size());
  double worst = 0.0;
  for (size_t i = 0; i < t.size(); ++i) {
    worst = std::max(worst, std::abs(back[i].timestamp - t[i].timestamp));
    worst = std::max(worst, (back[i].pose.translation - t[i].pose.translation).cwiseAbs().maxCoeff());
    const Eigen::Quaterniond a = t[i].pose.rotation.Canonical();
    const Eigen::Quaterniond b = back[i].pose.rotation.Canonical();
    worst = std::max(worst, (a.coeffs() - b.coeffs()).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-9);
  // Writing what was read gives the same bytes.
  WriteTrajectory(dir / "u.tum", back);
  EXPECT_EQ(ReadFileBytes(dir / "t.tum"), ReadFileBytes(dir / "u.tum"));
}

TEST(Trajectory, CanonicalizesAndRenormalizes) {
  const fs::path dir = ScratchDir("tum_canon");
  WriteFileBytes(dir / "t.tum", "0 1 2 3 0 0 0 -1.0005\n");
  const Trajectory t = ReadTrajectory(dir / "t.tum");
  EXPECT_NEAR(t[0].pose.rotation.quaternion().norm(), 1.0, 1e-15);
  WriteTrajectory(dir / "u.tum", t);
  EXPECT_EQ(ReadFileBytes(dir / "u.tum").find("-1"), std::string::npos);
}

TEST(Trajectory, QuaternionNormErrorHasLine) {
  const fs::path dir = ScratchDir("tum_norm");
  WriteFileBytes(dir / "t.tum", "0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1.01\n");
  try {
    ReadTrajectory(dir / "t.tum");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(PointCloud, AsciiThreePoints) {
  const fs::path dir = ScratchDir("ply_ascii");
  WriteFileBytes(dir / "c.ply",
                 "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                 "property float z\nproperty float confidence\nend_header\n"
                 "1 2 3 0.5\n-4.25 0 7 1\n0.125 1e3 -2 0\n");
  const PointCloud c = ReadPointCloud(dir / "c.ply");
  ASSERT_EQ(c.points.size(), 3u);
  EXPECT_EQ(c.points[0].position, Eigen::Vector3d(1, 2, 3));
  EXPECT_EQ(c.points[1].position, Eigen::Vector3d(-4.25, 0, 7));
  EXPECT_EQ(c.points[2].position, Eigen::Vector3d(0.125, 1000, -2));
  EXPECT_EQ(c.points[0].confidence, 0.5);
  EXPECT_FALSE(c.has_pixels);
}

TEST(PointCloud, MissingConfidenceDefaultsToOne) {
  const fs::path dir = ScratchDir("ply_noconf");
  WriteFileBytes(dir / "c.ply",
                 "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\n"
                 "property double z\nend_header\n1 2 3\n");
  EXPECT_EQ(ReadPointCloud(dir / "c.ply").points[0].confidence, 1.0);
}

PointCloud RandomCloud(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> idx(0, 5000);
  PointCloud c;
  c.has_pixels = c.has_frames = c.has_chunks = true;
  for (int i = 0; i < n; ++i) {
    CloudPoint p;
    p.position = testing::RandomVector(rng, 100.0);
    p.confidence = u(rng);
    p.pixel = Eigen::Vector2d(512 * u(rng), 144 * u(rng));
    p.frame = idx(rng);
    p.chunk = idx(rng) % 17;
    c.points.push_back(p);
  }
  return c;
}

void ExpectCloudEq(const PointCloud& a, const PointCloud& b) {
  ASSERT_EQ(a.points.size(), b.points.size());
  EXPECT_EQ(a.has_confidence, b.has_confidence);
  EXPECT_EQ(a.has_pixels, b.has_pixels);
  EXPECT_EQ(a.has_frames, b.has_frames);
  EXPECT_EQ(a.has_chunks, b.has_chunks);
  for (size_t i = 0; i < a.points.size(); ++i) {
    const CloudPoint& p = a.points[i];
    const CloudPoint& q = b.points[i];
    ASSERT_EQ(std::memcmp(p.position.data(), q.position.data(), 3 * sizeof(double)), 0) << i;
    ASSERT_EQ(p.confidence, q.confidence);
    ASSERT_EQ(p.pixel, q.pixel);
    ASSERT_EQ(p.frame, q.frame);
    ASSERT_EQ(p.chunk, q.chunk);
  }
}

TEST(PointCloud, BinaryRoundTripIsBitIdentical) {
  const fs::path dir = ScratchDir("ply_bin");
  std::mt19937_64 rng(7);
  const PointCloud c = RandomCloud(rng, 100000);
  WritePointCloud(dir / "a.ply", c);
  const PointCloud back = ReadPointCloud(dir / "a.ply");
  ExpectCloudEq(c, back);
  WritePointCloud(dir / "b.ply", back);
  EXPECT_EQ(ReadFileBytes(dir / "a.ply"), ReadFileBytes(dir / "b.ply"));
}

TEST(PointCloud, AsciiRoundTrip) {
  const fs::path dir = ScratchDir("ply_ascii_rt");
  std::mt19937_64 rng(8);
  PointCloud c = RandomCloud(rng, 2000);
  c.has_chunks = false;
  for (CloudPoint& p : c.points) p.chunk = -1;
  WritePointCloud(dir / "a.ply", c, PlyFormat::kAscii);
  ExpectCloudEq(c, ReadPointCloud(dir / "a.ply"));
}

TEST(PointCloud, FloatPropertiesAreWidened) {
  const fs::path dir = ScratchDir("ply_float");
  std::string bytes =
      "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\n"
      "property float y\nproperty float z\nproperty uchar confidence\nend_header\n";
  const float xyz[3] = {1.5f, -2.25f, 3.0f};
  bytes.append(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  bytes.push_back(static_cast<char>(255));
  WriteFileBytes(dir / "c.ply", bytes);
  const PointCloud c = ReadPointCloud(dir / "c.ply");
  EXPECT_EQ(c.points[0].position, Eigen::Vector3d(1.5, -2.25, 3.0));
}

// Each file in the corpus must fail with a typed data error whose message
// contains the expected fragment.
TEST(MalformedCorpus, EveryFileIsRejectedWithTypedError) {
  std::ifstream index(kMalformedDir / "expected.txt");
  ASSERT_TRUE(index) << kMalformedDir;
  std::string line;
  int checked = 0;
  while (std::getline(index, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto bar = line.find(" | ");
    const std::string file = line.substr(0, bar);
    const std::string fragment = line.substr(bar + 3);
    const fs::path path = kMalformedDir / file;
    const std::string ext = path.extension().string();
    try {
      if (ext == ".tum") {
        ReadTrajectory(path);
      } else if (ext == ".ply") {
        ReadPointCloud(path);
      } else if (ext == ".manifest") {
        ReadManifest(path);
      } else if (ext == ".gauges") {
        ReadGauges(path.string());
      } else {
        FAIL() << "unknown corpus extension " << ext;
      }
      ADD_FAILURE() << file << " was accepted";
    } catch (const ParseError& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kData) << file;
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos)
          << file << ": " << e.what();
      EXPECT_NE(e.path().find(file), std::string::npos) << file;
    } catch (const std::exception& e) {
      ADD_FAILURE() << file << ": untyped error " << e.what();
    }
    ++checked;
  }
  EXPECT_GE(checked, 10);
}

TEST(MalformedCorpus, RandomTruncationNeverCrashes) {
  const fs::path dir = ScratchDir("ply_trunc");
  std::mt19937_64 rng(9);
  PointCloud c = RandomCloud(rng, 50);
  WritePointCloud(dir / "full.ply", c);
  const std::string bytes = ReadFileBytes(dir / "full.ply");
  std::uniform_int_distribution<size_t> cut(0, bytes.size() - 1);
  for (int i = 0; i < 200; ++i) {
    WriteFileBytes(dir / "cut.ply", bytes.substr(0, cut(rng)));
    EXPECT_THROW(ReadPointCloud(dir / "cut.ply"), ParseError);
  }
}

}  // namespace
}  // namespace trackstitch
