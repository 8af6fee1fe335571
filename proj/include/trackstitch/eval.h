#pragma once

// Trajectory and cloud metrics against simulator ground truth.

#include <span>
#include <string>
#include <vector>

#include "trackstitch/geometry.h"
#include "trackstitch/preprocess.h"
#include "trackstitch/sim.h"
#include "trackstitch/types.h"

namespace trackstitch {

enum class Alignment { kNone, kSE3, kSim3 };

std::string AlignmentName(Alignment align);
Alignment ParseAlignment(const std::string& name);

struct Association {
  std::vector<int> est_index;  // sorted ascending
  std::vector<int> gt_index;
  std::vector<double> dt;  // est - gt timestamp
  int size() const { return static_cast<int>(est_index.size()); }
};

// Nearest-timestamp pairing, each sample used at most once. Throws kData
// "no temporal overlap" when nothing pairs.
Association Associate(const Trajectory& est, const Trajectory& gt, double max_dt);

// Maps a camera-to-world pose through a similarity acting on the world.
Pose TransformPose(const Sim3& transform, const Pose& pose);

struct AteResult {
  double rmse = 0.0;
  double max = 0.0;
  Sim3 alignment;  // est -> gt
  int pairs = 0;
};

AteResult Ate(const Trajectory& est, const Trajectory& gt, Alignment align,
              double max_dt = 0.01);

struct RpeResult {
  double trans = 0.0;  // RMSE, metres (est units)
  double rot = 0.0;    // RMSE, rad
  int windows = 0;
};

// Relative motions over `delta` associated samples.
RpeResult Rpe(const Trajectory& est, const Trajectory& gt, int delta,
              double max_dt = 0.01);

double EndpointGap(const Trajectory& trajectory);

// Signed yaw change of the forward axis from each frame to the next, seen
// from the earlier frame (camera x right, y down, z forward). The last
// entry repeats its predecessor.
CurvatureProfile CurvatureFromTrajectory(const Trajectory& trajectory);

// RMS distance of the points (after `alignment`) to the track surfaces.
double CloudError(std::span<const CloudPoint> points, const TrackModel& track,
                  const Sim3& alignment = Sim3());

struct TrajectoryMetrics {
  Alignment align = Alignment::kSim3;
  AteResult ate;
  double ate_se3_rmse = 0.0;  // exposes scale error
  RpeResult rpe;              // on the aligned estimate
  int delta = 1;
  double endpoint_gap = 0.0;  // aligned estimate, ground-truth units
  double gt_endpoint_gap = 0.0;
};

TrajectoryMetrics Evaluate(const Trajectory& est, const Trajectory& gt, Alignment align,
                           int delta, double max_dt = 0.01);

// "ate_rmse=... ate_max=... ..." on one line.
std::string FormatMetricsRecord(const TrajectoryMetrics& m);
std::string FormatMetricsSummary(const TrajectoryMetrics& m);

}  // namespace trackstitch
