#pragma once

// Chunk planning, frame masks and downsampling recipes.

#include <string>
#include <vector>

#include <Eigen/Core>

#include "trackstitch/types.h"

namespace trackstitch {

struct VideoMeta {
  int num_frames = 0;
  double fps = 0.0;
  int width = 0;
  int height = 0;

  void Validate() const;
};

struct ChunkSpec {
  int chunk_id = 0;
  int start_frame = 0;  // inclusive
  int end_frame = 0;    // inclusive
  // Set by the turn-aware planner when no straight frame existed near this
  // chunk's start boundary.
  bool boundary_flagged = false;

  int length() const { return end_frame - start_frame + 1; }
  bool operator==(const ChunkSpec&) const = default;
};

struct ChunkPlan {
  std::vector<ChunkSpec> chunks;
  int overlap_frames = 1;

  int num_flagged() const;
  bool operator==(const ChunkPlan&) const = default;
};

// Throws kData with "coverage gap" / "overlap mismatch" / ... when the plan
// does not tile [0, num_frames-1] with the declared overlap.
void ValidatePlan(const ChunkPlan& plan, int num_frames);

// Signed yaw change per frame (rad/frame), one entry per frame.
using CurvatureProfile = std::vector<double>;

ChunkPlan PlanFixedChunks(const VideoMeta& meta, double chunk_seconds,
                          int overlap_frames);

struct TurnAwareOptions {
  double target_seconds = 5.0;
  int overlap_frames = 1;
  double straight_threshold = 0.002;  // rad/frame
  int search_window = 48;             // frames, each side
};

ChunkPlan PlanTurnAwareChunks(const VideoMeta& meta,
                              const CurvatureProfile& curvature,
                              const TurnAwareOptions& options);

enum class MaskMode { kNone, kBottomFraction, kTopFraction, kPolygon };

struct MaskSpec {
  MaskMode mode = MaskMode::kNone;
  double fraction = 0.0;
  std::vector<Eigen::Vector2d> polygon;  // normalized (u, v) in [0,1]^2
  int width = 0;
  int height = 0;

  // Pixel coordinates; fractional modes act on whole rows (row = floor(v)),
  // polygons on the pixel center.
  bool IsMasked(double u, double v) const;
  long long MaskedPixelCount() const;
  // First and last masked row, or {-1, -1} for row masks that cover nothing.
  std::pair<int, int> MaskedRows() const;
  bool operator==(const MaskSpec&) const = default;
};

struct MaskParams {
  double fraction = 0.0;
  std::vector<Eigen::Vector2d> polygon;
};

MaskSpec BuildMask(MaskMode mode, const MaskParams& params,
                   const VideoMeta& meta);

// Parses the CLI form "bottom:0.5", "top:0.3", "poly:<file>" or "none".
MaskSpec ParseMaskArgument(const std::string& argument, const VideoMeta& meta);

std::string MaskModeName(MaskMode mode);
MaskMode ParseMaskMode(const std::string& name);

// Keeps points whose pixel is not masked; order preserved.
std::vector<CloudPoint> MaskPoints(const MaskSpec& mask,
                                   const std::vector<CloudPoint>& points);

struct DownsampleRecipe {
  double scale_x = 1.0;
  double scale_y = 1.0;
  // Keep `keep` source frames out of every `period`, chosen by `selected`.
  int keep = 1;
  int period = 1;
  std::vector<int> selected;  // offsets within one period
  bool low_fps_warning = false;
  std::vector<std::string> warnings;

  // Number of source frames kept out of the first `source_frames`.
  int KeptAmong(int source_frames) const;
};

// Frame rates below this degrade reconstruction quality badly.
inline constexpr double kLowFpsThreshold = 12.0;

DownsampleRecipe MakeDownsampleRecipe(const VideoMeta& source,
                                      int target_width, int target_height,
                                      double target_fps);

}  // namespace trackstitch
