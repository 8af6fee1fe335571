#include "trackstitch/chunkio.h"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "trackstitch/error.h"

namespace trackstitch {
namespace fs = std::filesystem;

std::string FormatDouble(double value) {
  std::array<char, 64> buffer{};
  const auto result =
      std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  return std::string(buffer.data(), result.ptr);
}

namespace {

std::vector<std::string> SplitWhitespace(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string token;
  while (in >> token) out.push_back(token);
  return out;
}

std::string Trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string StripComment(const std::string& line) {
  const auto hash = line.find('#');
  return hash == std::string::npos ? line : line.substr(0, hash);
}

std::optional<double> ToDouble(const std::string& token) {
  double value = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  if (begin != end && *begin == '+') ++begin;
  const auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc() || result.ptr != end) return std::nullopt;
  return value;
}

std::optional<long long> ToInteger(const std::string& token) {
  long long value = 0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  const auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc() || result.ptr != end) return std::nullopt;
  return value;
}

class LineParser {
 public:
  LineParser(std::string path, int line) : path_(std::move(path)), line_(line) {}

  double Double(const std::string& token, const std::string& field) const {
    const auto v = ToDouble(token);
    if (!v || !std::isfinite(*v)) Fail("field '" + field + "': bad number '" + token + "'");
    return *v;
  }

  int Int(const std::string& token, const std::string& field) const {
    const auto v = ToInteger(token);
    if (!v || *v < INT32_MIN || *v > INT32_MAX) {
      Fail("field '" + field + "': bad integer '" + token + "'");
    }
    return static_cast<int>(*v);
  }

  [[noreturn]] void Fail(const std::string& message) const {
    throw ParseError(path_, line_, message);
  }

 private:
  std::string path_;
  int line_;
};

std::ifstream OpenInput(const fs::path& path, std::ios::openmode mode = {}) {
  std::ifstream in(path, std::ios::in | mode);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  return in;
}

std::ofstream OpenOutput(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::out | std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  return out;
}

Rotation ParseQuaternion(const LineParser& parser, double qx, double qy,
                         double qz, double qw) {
  const double norm = std::sqrt(qx * qx + qy * qy + qz * qz + qw * qw);
  if (std::abs(norm - 1.0) > 1e-3) {
    std::ostringstream msg;
    msg << "quaternion norm " << norm << " deviates from 1 by more than 1e-3";
    parser.Fail(msg.str());
  }
  return Rotation::FromQuaternion(Eigen::Quaterniond(qw, qx, qy, qz));
}

void AppendPose(std::string& out, const Pose& pose) {
  const Eigen::Quaterniond q = pose.rotation.Canonical();
  for (double v : {pose.translation.x(), pose.translation.y(),
                   pose.translation.z(), q.x(), q.y(), q.z(), q.w()}) {
    out += ' ';
    out += FormatDouble(v);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

fs::path ResolveRelative(const fs::path& manifest_path,
                         const std::string& relative) {
  const fs::path rel(relative);
  if (rel.is_absolute()) return rel;
  return manifest_path.parent_path() / rel;
}

Manifest ReadManifest(const fs::path& path) {
  std::ifstream in = OpenInput(path);
  const std::string name = path.string();
  Manifest manifest;
  std::map<std::string, int> seen;
  std::string raw;
  int line_no = 0;
  std::vector<int> flagged;
  int flagged_line = 0;
  std::string mask_mode = "none";
  std::optional<double> mask_fraction;
  std::vector<double> polygon_coords;
  int mask_line = 0;

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = Trim(StripComment(raw));
    if (line.empty()) continue;
    const LineParser parser(name, line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) parser.Fail("expected 'key = value'");
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    const auto tokens = SplitWhitespace(value);
    if (tokens.empty()) parser.Fail("field '" + key + "': missing value");
    if (key != "chunk" && seen.count(key)) parser.Fail("duplicate field '" + key + "'");
    seen[key] = line_no;

    auto single = [&]() -> const std::string& {
      if (tokens.size() != 1) parser.Fail("field '" + key + "': expected one value");
      return tokens[0];
    };

    if (key == "version") {
      if (parser.Int(single(), key) != 1) parser.Fail("unsupported manifest version");
    } else if (key == "video.num_frames") {
      manifest.video.num_frames = parser.Int(single(), key);
    } else if (key == "video.fps") {
      manifest.video.fps = parser.Double(single(), key);
    } else if (key == "video.width") {
      manifest.video.width = parser.Int(single(), key);
    } else if (key == "video.height") {
      manifest.video.height = parser.Int(single(), key);
    } else if (key == "plan.overlap_frames") {
      manifest.plan.overlap_frames = parser.Int(single(), key);
    } else if (key == "plan.flagged") {
      flagged_line = line_no;
      for (const auto& t : tokens) flagged.push_back(parser.Int(t, key));
    } else if (key == "mask.mode") {
      mask_mode = single();
      mask_line = line_no;
    } else if (key == "mask.fraction") {
      mask_fraction = parser.Double(single(), key);
    } else if (key == "mask.polygon") {
      if (tokens.size() % 2 != 0) parser.Fail("field 'mask.polygon': odd number of coordinates");
      for (const auto& t : tokens) polygon_coords.push_back(parser.Double(t, key));
    } else if (key == "ground_truth") {
      manifest.ground_truth = single();
    } else if (key == "track") {
      manifest.track = single();
    } else if (key == "chunk") {
      if (tokens.size() != 5) {
        parser.Fail("field 'chunk': expected '<id> <start> <end> <frames> <cloud>'");
      }
      ChunkSpec spec;
      spec.chunk_id = parser.Int(tokens[0], "chunk.id");
      spec.start_frame = parser.Int(tokens[1], "chunk.start");
      spec.end_frame = parser.Int(tokens[2], "chunk.end");
      if (spec.chunk_id != static_cast<int>(manifest.plan.chunks.size())) {
        parser.Fail("field 'chunk.id': expected " +
                    std::to_string(manifest.plan.chunks.size()));
      }
      manifest.plan.chunks.push_back(spec);
      manifest.payloads.push_back({tokens[3], tokens[4]});
      const fs::path frames = ResolveRelative(path, tokens[3]);
      const fs::path cloud = ResolveRelative(path, tokens[4]);
      for (const fs::path& p : {frames, cloud}) {
        if (!fs::exists(p)) {
          parser.Fail("missing chunk payload '" + p.string() + "' for chunk " +
                      std::to_string(spec.chunk_id));
        }
      }
    } else {
      parser.Fail("unknown field '" + key + "'");
    }
  }

  for (const char* required :
       {"version", "video.num_frames", "video.fps", "video.width",
        "video.height", "plan.overlap_frames"}) {
    if (!seen.count(required)) {
      throw ParseError(name, 0, std::string("missing required field '") + required + "'");
    }
  }
  if (manifest.plan.chunks.empty()) {
    throw ParseError(name, 0, "missing required field 'chunk'");
  }

  try {
    manifest.video.Validate();
    ValidatePlan(manifest.plan, manifest.video.num_frames);
  } catch (const Error& e) {
    throw ParseError(name, 0, e.what());
  }
  for (int id : flagged) {
    if (id < 0 || id >= static_cast<int>(manifest.plan.chunks.size())) {
      throw ParseError(name, flagged_line, "field 'plan.flagged': unknown chunk id " +
                                               std::to_string(id));
    }
    manifest.plan.chunks[id].boundary_flagged = true;
  }

  try {
    MaskParams params;
    const MaskMode mode = ParseMaskMode(mask_mode);
    if (mode == MaskMode::kBottomFraction || mode == MaskMode::kTopFraction) {
      if (!mask_fraction) throw InvalidArgument("mask.fraction required for mode " + mask_mode);
      params.fraction = *mask_fraction;
    }
    for (size_t i = 0; i + 1 < polygon_coords.size(); i += 2) {
      params.polygon.emplace_back(polygon_coords[i], polygon_coords[i + 1]);
    }
    manifest.mask = BuildMask(mode, params, manifest.video);
  } catch (const Error& e) {
    throw ParseError(name, mask_line, std::string("field 'mask': ") + e.what());
  }
  return manifest;
}

void WriteManifest(const fs::path& path, const Manifest& manifest) {
  if (manifest.payloads.size() != manifest.plan.chunks.size()) {
    throw InvalidArgument("manifest needs one payload per chunk");
  }
  std::string out = "# trackstitch manifest\nversion = 1\n";
  out += "video.num_frames = " + std::to_string(manifest.video.num_frames) + "\n";
  out += "video.fps = " + FormatDouble(manifest.video.fps) + "\n";
  out += "video.width = " + std::to_string(manifest.video.width) + "\n";
  out += "video.height = " + std::to_string(manifest.video.height) + "\n";
  out += "plan.overlap_frames = " + std::to_string(manifest.plan.overlap_frames) + "\n";
  if (manifest.plan.num_flagged() > 0) {
    out += "plan.flagged =";
    for (const auto& c : manifest.plan.chunks) {
      if (c.boundary_flagged) out += " " + std::to_string(c.chunk_id);
    }
    out += "\n";
  }
  out += "mask.mode = " + MaskModeName(manifest.mask.mode) + "\n";
  if (manifest.mask.mode == MaskMode::kBottomFraction ||
      manifest.mask.mode == MaskMode::kTopFraction) {
    out += "mask.fraction = " + FormatDouble(manifest.mask.fraction) + "\n";
  }
  if (manifest.mask.mode == MaskMode::kPolygon) {
    out += "mask.polygon =";
    for (const auto& v : manifest.mask.polygon) {
      out += " " + FormatDouble(v.x()) + " " + FormatDouble(v.y());
    }
    out += "\n";
  }
  if (!manifest.ground_truth.empty()) out += "ground_truth = " + manifest.ground_truth + "\n";
  if (!manifest.track.empty()) out += "track = " + manifest.track + "\n";
  for (size_t k = 0; k < manifest.plan.chunks.size(); ++k) {
    const ChunkSpec& c = manifest.plan.chunks[k];
    out += "chunk = " + std::to_string(c.chunk_id) + " " +
           std::to_string(c.start_frame) + " " + std::to_string(c.end_frame) +
           " " + manifest.payloads[k].frames_path + " " +
           manifest.payloads[k].cloud_path + "\n";
  }
  std::ofstream file = OpenOutput(path);
  file << out;
}

// ---------------------------------------------------------------------------
// Chunk payloads

void ValidateChunk(const ChunkReconstruction& chunk, const ChunkSpec& spec) {
  const std::string where = "chunk " + std::to_string(chunk.chunk_id);
  if (chunk.frames.size() < 2) throw DataError(where + ": needs at least 2 frames");
  if (static_cast<int>(chunk.frames.size()) != spec.length()) {
    throw DataError(where + ": has " + std::to_string(chunk.frames.size()) +
                    " frames, plan expects " + std::to_string(spec.length()));
  }
  for (size_t i = 0; i < chunk.frames.size(); ++i) {
    const FrameRecord& f = chunk.frames[i];
    if (f.frame_index != spec.start_frame + static_cast<int>(i)) {
      throw DataError(where + ": frame indices must run " +
                      std::to_string(spec.start_frame) + ".." +
                      std::to_string(spec.end_frame));
    }
    if (!(f.intrinsics.fx > 0.0) || !(f.intrinsics.fy > 0.0)) {
      throw DataError(where + ": non-positive focal length at frame " +
                      std::to_string(f.frame_index));
    }
    for (const CloudPoint& p : f.points) {
      if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) {
        throw DataError(where + ": confidence outside [0,1] at frame " +
                        std::to_string(f.frame_index));
      }
    }
  }
}

ChunkReconstruction ReadChunk(const fs::path& manifest_path,
                              const Manifest& manifest, int chunk_id) {
  if (chunk_id < 0 || chunk_id >= static_cast<int>(manifest.plan.chunks.size())) {
    throw InvalidArgument("unknown chunk id " + std::to_string(chunk_id));
  }
  const ChunkPayload& payload = manifest.payloads[chunk_id];
  const fs::path frames_path = ResolveRelative(manifest_path, payload.frames_path);
  ChunkReconstruction chunk;
  chunk.chunk_id = chunk_id;

  std::ifstream in = OpenInput(frames_path);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto tokens = SplitWhitespace(StripComment(raw));
    if (tokens.empty()) continue;
    const LineParser parser(frames_path.string(), line_no);
    if (tokens.size() != 13) parser.Fail("expected 13 fields per frame");
    FrameRecord f;
    f.frame_index = parser.Int(tokens[0], "frame");
    f.timestamp = parser.Double(tokens[1], "timestamp");
    f.pose.translation = Eigen::Vector3d(parser.Double(tokens[2], "tx"),
                                         parser.Double(tokens[3], "ty"),
                                         parser.Double(tokens[4], "tz"));
    f.pose.rotation = ParseQuaternion(parser, parser.Double(tokens[5], "qx"),
                                      parser.Double(tokens[6], "qy"),
                                      parser.Double(tokens[7], "qz"),
                                      parser.Double(tokens[8], "qw"));
    f.intrinsics = {parser.Double(tokens[9], "fx"), parser.Double(tokens[10], "fy"),
                    parser.Double(tokens[11], "cx"), parser.Double(tokens[12], "cy")};
    if (!chunk.frames.empty() && f.frame_index <= chunk.frames.back().frame_index) {
      parser.Fail("frame indices must be strictly increasing");
    }
    chunk.frames.push_back(std::move(f));
  }

  const fs::path cloud_path = ResolveRelative(manifest_path, payload.cloud_path);
  PointCloud cloud = ReadPointCloud(cloud_path);
  if (!cloud.has_frames && !cloud.points.empty()) {
    throw ParseError(cloud_path.string(), 0, "chunk cloud needs a 'frame' property");
  }
  for (CloudPoint& p : cloud.points) {
    FrameRecord* record = nullptr;
    const int offset = p.frame - (chunk.frames.empty() ? 0 : chunk.frames.front().frame_index);
    if (offset >= 0 && offset < static_cast<int>(chunk.frames.size()) &&
        chunk.frames[offset].frame_index == p.frame) {
      record = &chunk.frames[offset];
    }
    if (record == nullptr) {
      throw ParseError(cloud_path.string(), 0,
                       "point references unknown frame " + std::to_string(p.frame));
    }
    if (!cloud.has_confidence) p.confidence = 1.0;
    p.chunk = chunk_id;
    record->points.push_back(p);
  }
  try {
    ValidateChunk(chunk, manifest.plan.chunks[chunk_id]);
  } catch (const Error& e) {
    throw ParseError(frames_path.string(), 0, e.what());
  }
  return chunk;
}

std::vector<ChunkReconstruction> ReadAllChunks(const fs::path& manifest_path,
                                               const Manifest& manifest) {
  std::vector<ChunkReconstruction> chunks;
  chunks.reserve(manifest.plan.chunks.size());
  for (size_t k = 0; k < manifest.plan.chunks.size(); ++k) {
    chunks.push_back(ReadChunk(manifest_path, manifest, static_cast<int>(k)));
  }
  return chunks;
}

void WriteChunk(const fs::path& directory, const ChunkReconstruction& chunk,
                const ChunkPayload& payload) {
  std::string out = "# frame timestamp tx ty tz qx qy qz qw fx fy cx cy\n";
  PointCloud cloud;
  cloud.has_confidence = true;
  cloud.has_pixels = true;
  cloud.has_frames = true;
  for (const FrameRecord& f : chunk.frames) {
    out += std::to_string(f.frame_index) + " " + FormatDouble(f.timestamp);
    AppendPose(out, f.pose);
    for (double v : {f.intrinsics.fx, f.intrinsics.fy, f.intrinsics.cx, f.intrinsics.cy}) {
      out += " " + FormatDouble(v);
    }
    out += "\n";
    for (CloudPoint p : f.points) {
      p.frame = f.frame_index;
      cloud.points.push_back(p);
    }
  }
  std::ofstream file = OpenOutput(directory / payload.frames_path);
  file << out;
  file.close();
  WritePointCloud(directory / payload.cloud_path, cloud);
}

// ---------------------------------------------------------------------------
// TUM trajectories

Trajectory ReadTrajectory(const fs::path& path) {
  std::ifstream in = OpenInput(path);
  Trajectory trajectory;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto tokens = SplitWhitespace(StripComment(raw));
    if (tokens.empty()) continue;
    const LineParser parser(path.string(), line_no);
    if (tokens.size() != 8) {
      parser.Fail("expected 8 fields 'timestamp tx ty tz qx qy qz qw', got " +
                  std::to_string(tokens.size()));
    }
    TrajectorySample sample;
    sample.timestamp = parser.Double(tokens[0], "timestamp");
    sample.pose.translation = Eigen::Vector3d(parser.Double(tokens[1], "tx"),
                                              parser.Double(tokens[2], "ty"),
                                              parser.Double(tokens[3], "tz"));
    sample.pose.rotation = ParseQuaternion(parser, parser.Double(tokens[4], "qx"),
                                           parser.Double(tokens[5], "qy"),
                                           parser.Double(tokens[6], "qz"),
                                           parser.Double(tokens[7], "qw"));
    if (!trajectory.empty() && !(sample.timestamp > trajectory.back().timestamp)) {
      parser.Fail("timestamps must be strictly increasing");
    }
    trajectory.push_back(sample);
  }
  return trajectory;
}

void WriteTrajectory(const fs::path& path, const Trajectory& trajectory) {
  CheckTrajectory(trajectory);
  std::string out = "# timestamp tx ty tz qx qy qz qw\n";
  for (const TrajectorySample& s : trajectory) {
    out += FormatDouble(s.timestamp);
    AppendPose(out, s.pose);
    out += "\n";
  }
  std::ofstream file = OpenOutput(path);
  file << out;
}

// ---------------------------------------------------------------------------
// PLY

namespace {

enum class PlyType { kInt8, kUInt8, kInt16, kUInt16, kInt32, kUInt32, kFloat32, kFloat64 };

std::optional<PlyType> ParsePlyType(const std::string& name) {
  static const std::map<std::string, PlyType> kTypes = {
      {"char", PlyType::kInt8},     {"int8", PlyType::kInt8},
      {"uchar", PlyType::kUInt8},   {"uint8", PlyType::kUInt8},
      {"short", PlyType::kInt16},   {"int16", PlyType::kInt16},
      {"ushort", PlyType::kUInt16}, {"uint16", PlyType::kUInt16},
      {"int", PlyType::kInt32},     {"int32", PlyType::kInt32},
      {"uint", PlyType::kUInt32},   {"uint32", PlyType::kUInt32},
      {"float", PlyType::kFloat32}, {"float32", PlyType::kFloat32},
      {"double", PlyType::kFloat64}, {"float64", PlyType::kFloat64}};
  const auto it = kTypes.find(name);
  if (it == kTypes.end()) return std::nullopt;
  return it->second;
}

size_t PlyTypeSize(PlyType type) {
  switch (type) {
    case PlyType::kInt8:
    case PlyType::kUInt8:
      return 1;
    case PlyType::kInt16:
    case PlyType::kUInt16:
      return 2;
    case PlyType::kInt32:
    case PlyType::kUInt32:
    case PlyType::kFloat32:
      return 4;
    case PlyType::kFloat64:
      return 8;
  }
  return 0;
}

template <typename T>
T LoadLittleEndian(const unsigned char* data) {
  static_assert(std::endian::native == std::endian::little,
                "big-endian hosts are not supported");
  T value;
  std::memcpy(&value, data, sizeof(T));
  return value;
}

double DecodeBinary(PlyType type, const unsigned char* data) {
  switch (type) {
    case PlyType::kInt8:
      return LoadLittleEndian<int8_t>(data);
    case PlyType::kUInt8:
      return LoadLittleEndian<uint8_t>(data);
    case PlyType::kInt16:
      return LoadLittleEndian<int16_t>(data);
    case PlyType::kUInt16:
      return LoadLittleEndian<uint16_t>(data);
    case PlyType::kInt32:
      return LoadLittleEndian<int32_t>(data);
    case PlyType::kUInt32:
      return LoadLittleEndian<uint32_t>(data);
    case PlyType::kFloat32:
      return LoadLittleEndian<float>(data);
    case PlyType::kFloat64:
      return LoadLittleEndian<double>(data);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type;
};

enum Slot { kX, kY, kZ, kConfidence, kU, kV, kFrame, kChunk, kNumSlots };

int SlotFor(const std::string& name) {
  static const std::map<std::string, int> kSlots = {
      {"x", kX}, {"y", kY}, {"z", kZ}, {"confidence", kConfidence},
      {"u", kU}, {"v", kV}, {"frame", kFrame}, {"chunk", kChunk}};
  const auto it = kSlots.find(name);
  return it == kSlots.end() ? -1 : it->second;
}

}  // namespace

PointCloud ReadPointCloud(const fs::path& path) {
  std::ifstream in = OpenInput(path, std::ios::binary);
  const std::string name = path.string();
  std::string line;
  int line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line() || line != "ply") throw ParseError(name, 1, "not a PLY file (missing 'ply' magic)");
  bool binary = false;
  bool have_format = false;
  long long vertex_count = -1;
  bool in_vertex = false;
  std::vector<PlyProperty> properties;
  bool ended = false;
  while (next_line()) {
    const auto tokens = SplitWhitespace(line);
    if (tokens.empty()) continue;
    const LineParser parser(name, line_no);
    if (tokens[0] == "comment" || tokens[0] == "obj_info") continue;
    if (tokens[0] == "format") {
      if (tokens.size() != 3) parser.Fail("malformed format line");
      if (tokens[1] == "ascii") {
        binary = false;
      } else if (tokens[1] == "binary_little_endian") {
        binary = true;
      } else {
        parser.Fail("unsupported PLY format '" + tokens[1] + "'");
      }
      have_format = true;
    } else if (tokens[0] == "element") {
      if (tokens.size() != 3) parser.Fail("malformed element line");
      const auto count = ToInteger(tokens[2]);
      if (!count || *count < 0) parser.Fail("bad element count '" + tokens[2] + "'");
      if (tokens[1] == "vertex") {
        if (vertex_count >= 0) parser.Fail("duplicate vertex element");
        vertex_count = *count;
        in_vertex = true;
      } else {
        if (*count > 0) {
          parser.Fail("unknown element layout: element '" + tokens[1] +
                      "' is not supported (only 'vertex')");
        }
        in_vertex = false;
      }
    } else if (tokens[0] == "property") {
      if (!in_vertex) continue;
      if (tokens.size() >= 2 && tokens[1] == "list") {
        parser.Fail("unknown element layout: list property in vertex element");
      }
      if (tokens.size() != 3) parser.Fail("malformed property line");
      const auto type = ParsePlyType(tokens[1]);
      if (!type) parser.Fail("unknown property type '" + tokens[1] + "'");
      properties.push_back({tokens[2], *type});
    } else if (tokens[0] == "end_header") {
      ended = true;
      break;
    } else {
      parser.Fail("unexpected header line '" + tokens[0] + "'");
    }
  }
  if (!ended) throw ParseError(name, line_no, "missing end_header");
  if (!have_format) throw ParseError(name, 0, "missing format line");
  if (vertex_count < 0) throw ParseError(name, 0, "missing vertex element");

  std::array<int, kNumSlots> slot_index;
  slot_index.fill(-1);
  std::string found;
  for (size_t i = 0; i < properties.size(); ++i) {
    found += (i ? "," : "") + properties[i].name;
    const int slot = SlotFor(properties[i].name);
    if (slot >= 0) {
      if (slot_index[slot] >= 0) {
        throw ParseError(name, 0, "duplicate property '" + properties[i].name + "'");
      }
      slot_index[slot] = static_cast<int>(i);
    }
  }
  if (slot_index[kX] < 0 || slot_index[kY] < 0 || slot_index[kZ] < 0 ||
      (slot_index[kU] < 0) != (slot_index[kV] < 0)) {
    throw ParseError(name, 0,
                     "unknown element layout: need x,y,z[,confidence][,u,v]; found "
                     "properties [" + found + "]");
  }

  PointCloud cloud;
  cloud.has_confidence = slot_index[kConfidence] >= 0;
  cloud.has_pixels = slot_index[kU] >= 0;
  cloud.has_frames = slot_index[kFrame] >= 0;
  cloud.has_chunks = slot_index[kChunk] >= 0;
  cloud.points.reserve(static_cast<size_t>(std::min<long long>(vertex_count, 1 << 24)));
  std::vector<double> values(properties.size());

  auto store = [&](long long index) {
    CloudPoint p;
    p.position = {values[slot_index[kX]], values[slot_index[kY]], values[slot_index[kZ]]};
    if (!p.position.allFinite()) {
      throw ParseError(name, 0, "non-finite coordinate in vertex " + std::to_string(index));
    }
    if (cloud.has_confidence) p.confidence = values[slot_index[kConfidence]];
    if (cloud.has_pixels) p.pixel = {values[slot_index[kU]], values[slot_index[kV]]};
    if (cloud.has_frames) p.frame = static_cast<int>(values[slot_index[kFrame]]);
    if (cloud.has_chunks) p.chunk = static_cast<int>(values[slot_index[kChunk]]);
    cloud.points.push_back(p);
  };

  if (binary) {
    size_t stride = 0;
    for (const auto& prop : properties) stride += PlyTypeSize(prop.type);
    std::vector<unsigned char> record(stride);
    for (long long i = 0; i < vertex_count; ++i) {
      in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(stride));
      if (in.gcount() != static_cast<std::streamsize>(stride)) {
        throw ParseError(name, 0, "truncated binary payload: vertex " + std::to_string(i) +
                                      " of " + std::to_string(vertex_count));
      }
      size_t offset = 0;
      for (size_t j = 0; j < properties.size(); ++j) {
        values[j] = DecodeBinary(properties[j].type, record.data() + offset);
        offset += PlyTypeSize(properties[j].type);
      }
      store(i);
    }
  } else {
    long long i = 0;
    while (i < vertex_count) {
      if (!next_line()) {
        throw ParseError(name, line_no, "truncated ascii payload: vertex " +
                                            std::to_string(i) + " of " +
                                            std::to_string(vertex_count));
      }
      const auto tokens = SplitWhitespace(line);
      if (tokens.empty()) continue;
      const LineParser parser(name, line_no);
      if (tokens.size() != properties.size()) {
        parser.Fail("expected " + std::to_string(properties.size()) + " values per vertex");
      }
      for (size_t j = 0; j < tokens.size(); ++j) {
        values[j] = parser.Double(tokens[j], properties[j].name);
      }
      store(i);
      ++i;
    }
  }
  return cloud;
}

void WritePointCloud(const fs::path& path, const PointCloud& cloud, PlyFormat format) {
  std::vector<std::pair<std::string, std::string>> props = {
      {"double", "x"}, {"double", "y"}, {"double", "z"}};
  if (cloud.has_confidence) props.push_back({"double", "confidence"});
  if (cloud.has_pixels) {
    props.push_back({"double", "u"});
    props.push_back({"double", "v"});
  }
  if (cloud.has_frames) props.push_back({"int", "frame"});
  if (cloud.has_chunks) props.push_back({"int", "chunk"});

  std::string header = "ply\nformat ";
  header += format == PlyFormat::kAscii ? "ascii 1.0\n" : "binary_little_endian 1.0\n";
  header += "comment trackstitch\n";
  header += "element vertex " + std::to_string(cloud.points.size()) + "\n";
  for (const auto& [type, prop] : props) header += "property " + type + " " + prop + "\n";
  header += "end_header\n";

  std::ofstream out = OpenOutput(path);
  out << header;
  if (format == PlyFormat::kAscii) {
    std::string body;
    for (const CloudPoint& p : cloud.points) {
      body += FormatDouble(p.position.x()) + " " + FormatDouble(p.position.y()) + " " +
              FormatDouble(p.position.z());
      if (cloud.has_confidence) body += " " + FormatDouble(p.confidence);
      if (cloud.has_pixels) body += " " + FormatDouble(p.pixel.x()) + " " + FormatDouble(p.pixel.y());
      if (cloud.has_frames) body += " " + std::to_string(p.frame);
      if (cloud.has_chunks) body += " " + std::to_string(p.chunk);
      body += "\n";
    }
    out << body;
    return;
  }
  std::vector<char> body;
  body.reserve(cloud.points.size() * props.size() * 8);
  auto put = [&body](const auto& value) {
    const char* bytes = reinterpret_cast<const char*>(&value);
    body.insert(body.end(), bytes, bytes + sizeof(value));
  };
  for (const CloudPoint& p : cloud.points) {
    put(p.position.x());
    put(p.position.y());
    put(p.position.z());
    if (cloud.has_confidence) put(p.confidence);
    if (cloud.has_pixels) {
      put(p.pixel.x());
      put(p.pixel.y());
    }
    if (cloud.has_frames) put(static_cast<int32_t>(p.frame));
    if (cloud.has_chunks) put(static_cast<int32_t>(p.chunk));
  }
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
}

}  // namespace trackstitch
