#pragma once

// Synthetic ground truth: closed planar circuits built from straights and
// arcs, centerline trajectories, and an emulator that turns a trajectory
// into noisy per-chunk reconstructions (random gauge, drift, pose and point
// noise) the way a monocular backend would.
//
// World frame: z up, track in the xy plane (plus an optional sinusoidal
// elevation). Camera frame: x right, y down, z forward.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trackstitch/preprocess.h"
#include "trackstitch/types.h"

namespace trackstitch {

struct TrackSegment {
  enum class Kind { kStraight, kArc };
  Kind kind = Kind::kStraight;
  double length = 0.0;  // straights
  double radius = 0.0;  // arcs
  double angle = 0.0;   // arcs, signed (positive turns left)

  static TrackSegment Straight(double length) { return {Kind::kStraight, length, 0.0, 0.0}; }
  static TrackSegment Arc(double radius, double angle) { return {Kind::kArc, 0.0, radius, angle}; }
  double ArcLength() const;
};

struct TrackSpec {
  std::vector<TrackSegment> segments;
  double half_width = 6.0;     // m, centerline to wall
  double wall_height = 2.0;    // m
  double elevation = 0.0;      // m, amplitude of one sinusoid per lap
  bool auto_close = false;     // append one arc + one straight to close
};

// Planar displacement and wrapped heading left over after all segments.
struct ClosureGap {
  Eigen::Vector2d displacement = Eigen::Vector2d::Zero();
  double heading = 0.0;
};
ClosureGap ComputeClosureGap(const TrackSpec& spec);

// Text spec: one entry per line, '#' comments:
//   straight <length>
//   arc <radius> <angle_rad>
//   half_width <m> | wall_height <m> | elevation <m> | auto_close
TrackSpec ParseTrackSpec(const std::string& path);
void WriteTrackSpec(const std::string& path, const TrackSpec& spec);

TrackSpec MonacoLikeSpec();  // 3338 m, 19 segments, includes a hairpin
TrackSpec SquareSpec();      // four 90 deg arcs (r = 10) and four 20 m straights
// "monaco-like", "square" or "file:<path>".
TrackSpec TrackSpecByName(const std::string& name);

struct CenterlinePoint {
  Eigen::Vector3d position;  // ground level
  double heading = 0.0;      // unwrapped, rad
  int segment = 0;
};

class TrackModel {
 public:
  // Validates closure (1e-6 m, 1e-9 rad), or closes the spec first when
  // spec.auto_close is set. Throws kInvalidArgument otherwise.
  static TrackModel Make(const TrackSpec& spec);

  const TrackSpec& spec() const { return spec_; }
  double length() const { return length_; }
  double segment_start(int i) const { return starts_[i]; }

  // Arc length s may exceed one lap; headings keep accumulating per lap.
  CenterlinePoint At(double s) const;
  double GroundHeight(double s) const;
  // Distance from p to the nearest surface (ground strip or either wall).
  double DistanceToSurface(const Eigen::Vector3d& p) const;

 private:
  struct SegmentState {
    Eigen::Vector2d start;
    double heading = 0.0;
  };

  TrackSpec spec_;
  double length_ = 0.0;
  double total_turn_ = 0.0;
  std::vector<double> starts_;
  std::vector<SegmentState> states_;
};

struct SpeedProfile {
  double straight_speed = 40.0;  // m/s
  double turn_speed = 40.0;      // m/s, used on arcs

  static SpeedProfile Constant(double v) { return {v, v}; }
  static SpeedProfile SlowInTurns(double straight, double turn) { return {straight, turn}; }
};

// Arc length of every frame, t = f / fps, over `laps` laps (endpoint
// included when it falls on a frame).
std::vector<double> FrameArcLengths(const TrackModel& track, const SpeedProfile& speed,
                                    double fps, double laps = 1.0);

// Camera-to-world pose on the centerline at arc length s.
Pose CameraPoseAt(const TrackModel& track, double s);

Trajectory SampleTrajectory(const TrackModel& track, const SpeedProfile& speed,
                            double fps, double laps = 1.0);

// Ground-truth yaw change from each frame to the next; the last frame
// repeats its predecessor.
CurvatureProfile CurvatureOf(const TrackModel& track, const SpeedProfile& speed,
                             double fps, double laps = 1.0);

struct NoiseModel {
  bool randomize_gauges = true;
  double gauge_rotation_max = 3.14159265358979323846;  // rad
  double gauge_translation_max = 100.0;                // m
  double log_scale_sigma = 0.0;
  double pose_sigma_t = 0.0;       // m
  double pose_sigma_r = 0.0;       // rad
  double rotational_drift = 0.0;   // rad/frame yaw bias (turns left)
  double drift_walk_sigma = 0.0;   // rad/frame, per-frame random walk
  double scale_drift = 0.0;        // log-scale change per frame
  double point_sigma = 0.0;        // m
  uint64_t seed = 42;

  // "none", "mild", "moderate", "severe".
  static NoiseModel Preset(const std::string& name);
};

// "key = value" file with NoiseModel field names, or a preset name.
NoiseModel NoiseModelByName(const std::string& name_or_path);

struct CameraModel {
  int width = 512;
  int height = 144;
  Intrinsics intrinsics{180.0, 180.0, 256.0, 72.0};
  double max_range = 40.0;   // m ahead along the track
  double min_range = 2.0;
  double station_spacing = 1.0;  // m between landmark stations
};

struct SimulatedChunks {
  std::vector<ChunkReconstruction> chunks;
  // Per chunk: world -> chunk-local similarity that was drawn.
  std::vector<Sim3> world_to_chunk;
};

// World-frame landmarks visible from arc length s (deterministic per
// station, independent of the frame that sees them).
std::vector<CloudPoint> VisibleLandmarks(const TrackModel& track, double s,
                                         const CameraModel& camera);

SimulatedChunks SynthChunks(const Trajectory& ground_truth,
                            const std::vector<double>& arc_lengths,
                            const TrackModel& track, const ChunkPlan& plan,
                            const NoiseModel& noise, const CameraModel& camera = {});

// Convenience bundle for tests and the CLI.
struct Scenario {
  std::string track = "monaco-like";
  double fps = 24.0;
  SpeedProfile speed = SpeedProfile::Constant(40.0);
  double laps = 1.0;
  double chunk_seconds = 5.0;
  int overlap = 1;
  NoiseModel noise;
  CameraModel camera;
};

struct SimulatedRun {
  TrackModel track;
  VideoMeta meta;
  Trajectory ground_truth;
  std::vector<double> arc_lengths;
  ChunkPlan plan;
  SimulatedChunks synth;
};

SimulatedRun Simulate(const Scenario& scenario);

}  // namespace trackstitch
