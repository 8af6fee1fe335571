#pragma once

// File formats at the pipeline boundary.
//
//  * Manifest: "key = value" text, one entry per line, '#' comments.
//      version = 1
//      video.num_frames = 1920       video.fps = 24
//      video.width = 512             video.height = 144
//      plan.overlap_frames = 1
//      plan.flagged = 3 7            (optional; chunk ids)
//      mask.mode = none|bottom|top|poly
//      mask.fraction = 0.5           (bottom/top)
//      mask.polygon = u0 v0 u1 v1 …  (poly; normalized coordinates)
//      ground_truth = gt.tum         (optional)
//      track = track.txt             (optional; simulator track spec)
//      chunk = <id> <start> <end> <frames file> <cloud file>
//    Paths are relative to the manifest's directory.
//  * Chunk frames file: "frame timestamp tx ty tz qx qy qz qw fx fy cx cy".
//  * Trajectories: TUM "timestamp tx ty tz qx qy qz qw".
//  * Point clouds: PLY (ascii or binary_little_endian), vertex properties
//    x y z [confidence] [u v] [frame] [chunk].

#include <filesystem>
#include <string>
#include <vector>

#include "trackstitch/preprocess.h"
#include "trackstitch/types.h"

namespace trackstitch {

// Shortest text that parses back to the same double.
std::string FormatDouble(double value);

struct ChunkPayload {
  std::string frames_path;
  std::string cloud_path;
  bool operator==(const ChunkPayload&) const = default;
};

struct Manifest {
  VideoMeta video;
  ChunkPlan plan;
  MaskSpec mask;
  std::vector<ChunkPayload> payloads;  // parallel to plan.chunks
  std::string ground_truth;
  std::string track;
};

// Validates the schema, the plan invariants and that every payload exists.
Manifest ReadManifest(const std::filesystem::path& path);
void WriteManifest(const std::filesystem::path& path, const Manifest& manifest);

std::filesystem::path ResolveRelative(const std::filesystem::path& manifest_path,
                                      const std::string& relative);

// Checks a reconstruction against its chunk spec: frames exactly cover
// [start, end], confidences in [0,1], positive focal lengths.
void ValidateChunk(const ChunkReconstruction& chunk, const ChunkSpec& spec);

ChunkReconstruction ReadChunk(const std::filesystem::path& manifest_path,
                              const Manifest& manifest, int chunk_id);
std::vector<ChunkReconstruction> ReadAllChunks(
    const std::filesystem::path& manifest_path, const Manifest& manifest);
// Writes the frames table and the cloud (with per-point frame indices).
void WriteChunk(const std::filesystem::path& directory,
                const ChunkReconstruction& chunk, const ChunkPayload& payload);

Trajectory ReadTrajectory(const std::filesystem::path& path);
void WriteTrajectory(const std::filesystem::path& path,
                     const Trajectory& trajectory);

enum class PlyFormat { kAscii, kBinaryLittleEndian };

PointCloud ReadPointCloud(const std::filesystem::path& path);
void WritePointCloud(const std::filesystem::path& path, const PointCloud& cloud,
                     PlyFormat format = PlyFormat::kBinaryLittleEndian);

}  // namespace trackstitch
