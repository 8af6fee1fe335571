#pragma once

// Global point clouds and voxel deduplication.

#include <optional>
#include <string>
#include <vector>

#include "trackstitch/geometry.h"
#include "trackstitch/types.h"

namespace trackstitch {

// Per global frame index: camera (chunk units) -> global similarity.
using FramePoses = std::vector<std::optional<Sim3>>;

// Maps a chunk's points into the global frame. Without `refined` every
// point goes through `gauge`; with it, each frame's points ride on that
// frame's refined pose (refined * T_local^-1). Frames without a refined
// pose fall back to the gauge and add a warning.
std::vector<CloudPoint> ToGlobal(const ChunkReconstruction& chunk, const Sim3& gauge,
                                 const FramePoses* refined = nullptr,
                                 std::vector<std::string>* warnings = nullptr);

struct FusedCloud {
  std::vector<CloudPoint> points;
  double voxel = 0.25;
};

// Drops points below `min_confidence`, buckets the rest into voxels
// anchored at the origin and keeps the most confident point per voxel
// (ties: lower chunk id, then earlier input position). Output is sorted by
// voxel index. voxel == 0 deduplicates identical positions only.
FusedCloud Fuse(const std::vector<CloudPoint>& points, double voxel, double min_confidence);

}  // namespace trackstitch
