#include "trackstitch/fusion.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <unordered_map>

#include "trackstitch/error.h"

namespace trackstitch {
namespace {

using VoxelKey = std::array<int64_t, 3>;

struct KeyHash {
  size_t operator()(const VoxelKey& k) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (int64_t v : k) {
      h ^= static_cast<uint64_t>(v);
      h *= 0x100000001b3ULL;
      h ^= h >> 29;
    }
    return h;
  }
};

// Order-preserving integer image of a double, so exact-position keys sort
// like the coordinates themselves.
int64_t OrderedBits(double v) {
  if (v == 0.0) v = 0.0;  // fold -0
  const int64_t bits = std::bit_cast<int64_t>(v);
  return bits >= 0 ? bits : std::numeric_limits<int64_t>::min() - bits;
}

VoxelKey KeyOf(const Eigen::Vector3d& p, double voxel) {
  if (voxel == 0.0) return {OrderedBits(p.x()), OrderedBits(p.y()), OrderedBits(p.z())};
  return {static_cast<int64_t>(std::floor(p.x() / voxel)),
          static_cast<int64_t>(std::floor(p.y() / voxel)),
          static_cast<int64_t>(std::floor(p.z() / voxel))};
}

bool Better(const CloudPoint& a, size_t ia, const CloudPoint& b, size_t ib) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.chunk != b.chunk) return a.chunk < b.chunk;
  return ia < ib;
}

}  // namespace

std::vector<CloudPoint> ToGlobal(const ChunkReconstruction& chunk, const Sim3& gauge,
                                 const FramePoses* refined, std::vector<std::string>* warnings) {
  std::vector<CloudPoint> out;
  int missing = 0;
  for (const FrameRecord& rec : chunk.frames) {
    Sim3 transform = gauge;
    if (refined != nullptr) {
      const int f = rec.frame_index;
      if (f >= 0 && f < static_cast<int>(refined->size()) && (*refined)[f].has_value()) {
        transform = *(*refined)[f] * Sim3(rec.pose).Inverse();
      } else {
        ++missing;
      }
    }
    for (const CloudPoint& p : rec.points) {
      CloudPoint q = p;
      q.position = transform * p.position;
      if (q.chunk < 0) q.chunk = chunk.chunk_id;
      if (q.frame < 0) q.frame = rec.frame_index;
      out.push_back(q);
    }
  }
  if (missing > 0 && warnings != nullptr) {
    warnings->push_back("chunk " + std::to_string(chunk.chunk_id) + ": " +
                        std::to_string(missing) +
                        " frames without a refined pose use the chunk gauge");
  }
  return out;
}

FusedCloud Fuse(const std::vector<CloudPoint>& points, double voxel, double min_confidence) {
  if (!(voxel >= 0.0) || !std::isfinite(voxel)) throw InvalidArgument("voxel size must be >= 0");
  std::unordered_map<VoxelKey, size_t, KeyHash> best;
  best.reserve(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    const CloudPoint& p = points[i];
    if (p.confidence < min_confidence) continue;
    if (!p.position.allFinite()) continue;
    const auto [it, inserted] = best.try_emplace(KeyOf(p.position, voxel), i);
    if (!inserted && Better(p, i, points[it->second], it->second)) it->second = i;
  }
  std::vector<std::pair<VoxelKey, size_t>> kept(best.begin(), best.end());
  std::sort(kept.begin(), kept.end());
  FusedCloud out;
  out.voxel = voxel;
  out.points.reserve(kept.size());
  for (const auto& [key, index] : kept) out.points.push_back(points[index]);
  return out;
}

}  // namespace trackstitch
