#pragma once

// Overlap-based stitching of per-chunk reconstructions into one trajectory.
//
// Every chunk lives in its own gauge (rotation, translation and, because the
// reconstructions are monocular, scale). Consecutive chunks share
// `overlap_frames` frames; aligning the shared frames gives the similarity
// that maps the next chunk into the previous chunk's coordinates, and
// composing those seam transforms from chunk 0 expresses every chunk in
// chunk 0's frame.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trackstitch/geometry.h"
#include "trackstitch/preprocess.h"
#include "trackstitch/types.h"

namespace trackstitch {

struct UmeyamaOptions {
  bool with_scale = true;
  bool with_rotation = true;
};

// Closed-form least-squares similarity minimizing
// sum_i |dst_i - (s R src_i + t)|^2. Throws kNumerical
// "rank-deficient alignment" for collinear/degenerate input.
Sim3 Umeyama(std::span<const Eigen::Vector3d> src,
             std::span<const Eigen::Vector3d> dst,
             const UmeyamaOptions& options = {});

enum class ScaleMode { kUnit, kDepthRatio, kUmeyama };

std::string ScaleModeName(ScaleMode mode);
ScaleMode ParseScaleMode(const std::string& name);

// Minimum number of pixel matches for the depth-ratio scale estimate.
inline constexpr int kMinDepthMatches = 20;

struct OverlapAlignment {
  Sim3 transform;  // next-chunk coordinates -> prev-chunk coordinates
  ScaleMode used_mode = ScaleMode::kUnit;
  int depth_matches = 0;
  std::vector<std::string> warnings;
};

OverlapAlignment AlignOverlap(const ChunkReconstruction& prev,
                              const ChunkReconstruction& next,
                              std::span<const int> shared_frames,
                              ScaleMode scale_mode);

struct SeamDiagnostics {
  int prev_chunk = 0;
  int next_chunk = 0;
  double residual = 0.0;  // RMS distance of shared-frame positions, global units
  double scale_ratio = 1.0;
  ScaleMode used_mode = ScaleMode::kUnit;
  std::vector<std::string> warnings;
};

struct StitchResult {
  std::vector<Sim3> gauges;  // chunk-local -> global; gauges[0] == identity
  Trajectory trajectory;     // deduplicated, earlier chunk wins at seams
  std::vector<SeamDiagnostics> seams;
};

StitchResult StitchChunks(const std::vector<ChunkReconstruction>& chunks,
                          const ChunkPlan& plan, ScaleMode scale_mode);

// Gauge file: one "chunk_id s tx ty tz qx qy qz qw" line per chunk.
void WriteGauges(const std::string& path, const std::vector<Sim3>& gauges);
std::vector<Sim3> ReadGauges(const std::string& path);

}  // namespace trackstitch
