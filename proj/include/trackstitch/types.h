#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "trackstitch/geometry.h"

namespace trackstitch {

struct CloudPoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double confidence = 1.0;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  int frame = -1;  // global frame index, -1 when unknown
  int chunk = -1;  // source chunk id, -1 when unknown
};

// Which optional per-point attributes a cloud carries. Absent attributes are
// neither written nor expected when reading.
struct PointCloud {
  std::vector<CloudPoint> points;
  bool has_confidence = true;
  bool has_pixels = false;
  bool has_frames = false;
  bool has_chunks = false;
};

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

struct FrameRecord {
  int frame_index = 0;
  double timestamp = 0.0;
  Pose pose;  // camera-to-world, chunk-local frame
  Intrinsics intrinsics;
  std::vector<CloudPoint> points;  // chunk-local coordinates
};

struct ChunkReconstruction {
  int chunk_id = 0;
  std::vector<FrameRecord> frames;  // strictly increasing frame_index

  const FrameRecord* Find(int frame_index) const;
  int first_frame() const { return frames.front().frame_index; }
  int last_frame() const { return frames.back().frame_index; }
};

struct TrajectorySample {
  double timestamp = 0.0;
  Pose pose;
};

using Trajectory = std::vector<TrajectorySample>;

// Throws kData when timestamps are not strictly increasing.
void CheckTrajectory(const Trajectory& trajectory);

}  // namespace trackstitch
