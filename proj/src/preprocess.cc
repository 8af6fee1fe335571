#include "trackstitch/preprocess.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "trackstitch/error.h"

namespace trackstitch {

void VideoMeta::Validate() const {
  if (num_frames < 2) throw InvalidArgument("video needs at least 2 frames");
  if (!(fps > 0.0) || !std::isfinite(fps)) {
    throw InvalidArgument("video fps must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw InvalidArgument("video width and height must be positive");
  }
}

int ChunkPlan::num_flagged() const {
  return static_cast<int>(std::count_if(
      chunks.begin(), chunks.end(),
      [](const ChunkSpec& c) { return c.boundary_flagged; }));
}

void ValidatePlan(const ChunkPlan& plan, int num_frames) {
  if (plan.chunks.empty()) throw DataError("chunk plan is empty");
  if (plan.overlap_frames < 0) throw DataError("negative overlap_frames");
  for (size_t k = 0; k < plan.chunks.size(); ++k) {
    const ChunkSpec& c = plan.chunks[k];
    const std::string where = "chunk " + std::to_string(c.chunk_id);
    if (c.chunk_id != static_cast<int>(k)) {
      throw DataError(where + ": chunk ids must be 0..n-1 in order");
    }
    if (c.start_frame >= c.end_frame) {
      throw DataError(where + ": start_frame must be < end_frame");
    }
    if (k == 0 && c.start_frame != 0) {
      throw DataError("coverage gap: first chunk does not start at frame 0");
    }
    if (k > 0) {
      const ChunkSpec& prev = plan.chunks[k - 1];
      if (c.start_frame <= prev.start_frame || c.end_frame <= prev.end_frame) {
        throw DataError(where + ": chunks not sorted or nested");
      }
      if (c.start_frame > prev.end_frame + 1) {
        throw DataError("coverage gap between chunk " +
                        std::to_string(prev.chunk_id) + " and " +
                        std::to_string(c.chunk_id));
      }
      const int shared = prev.end_frame - c.start_frame + 1;
      if (shared != plan.overlap_frames) {
        throw DataError("overlap mismatch at " + where + ": shares " +
                        std::to_string(shared) + " frames, expected " +
                        std::to_string(plan.overlap_frames));
      }
    }
  }
  if (plan.chunks.back().end_frame != num_frames - 1) {
    throw DataError("coverage gap: last chunk ends at frame " +
                    std::to_string(plan.chunks.back().end_frame) +
                    ", video has " + std::to_string(num_frames) + " frames");
  }
}

namespace {

int ChunkLengthFrames(const VideoMeta& meta, double chunk_seconds,
                      int overlap_frames) {
  meta.Validate();
  if (overlap_frames < 0) throw InvalidArgument("overlap must be >= 0");
  if (!(chunk_seconds > 0.0)) throw InvalidArgument("chunk length must be > 0");
  const long long length = std::llround(chunk_seconds * meta.fps);
  // Stride must be at least one frame and a chunk at least two frames.
  if (length < std::max(overlap_frames + 1, 2)) {
    throw InvalidArgument("degenerate chunking: chunk of " +
                          std::to_string(length) + " frames cannot advance past " +
                          std::to_string(overlap_frames) + " overlap frames");
  }
  return static_cast<int>(std::min<long long>(length, 1 << 30));
}

// Shared planning loop. `choose_boundary(start, nominal, lo, hi)` returns the
// first frame of the next chunk within [lo, hi] and whether it was flagged.
template <typename ChooseBoundary>
ChunkPlan PlanChunks(int num_frames, int length, int overlap,
                     ChooseBoundary&& choose_boundary) {
  ChunkPlan plan;
  plan.overlap_frames = overlap;
  int start = 0;
  bool flagged = false;
  while (true) {
    ChunkSpec spec;
    spec.chunk_id = static_cast<int>(plan.chunks.size());
    spec.start_frame = start;
    spec.boundary_flagged = flagged;
    const long long nominal_end = static_cast<long long>(start) + length - 1;
    const long long nominal_next = nominal_end - overlap + 1;
    // Stop when this chunk reaches the end, or the remainder would be too
    // short to form a chunk of its own (it is merged into this one).
    if (nominal_end >= num_frames - 1 ||
        num_frames - nominal_next < overlap + 2) {
      spec.end_frame = num_frames - 1;
      plan.chunks.push_back(spec);
      break;
    }
    const int lo = start + 2;
    const int hi = num_frames - overlap - 2;
    const auto [next, next_flagged] =
        choose_boundary(start, static_cast<int>(nominal_next), lo, hi);
    spec.end_frame = next + overlap - 1;
    plan.chunks.push_back(spec);
    start = next;
    flagged = next_flagged;
  }
  return plan;
}

}  // namespace

ChunkPlan PlanFixedChunks(const VideoMeta& meta, double chunk_seconds,
                          int overlap_frames) {
  const int length = ChunkLengthFrames(meta, chunk_seconds, overlap_frames);
  return PlanChunks(meta.num_frames, length, overlap_frames,
                    [](int, int nominal, int, int) {
                      return std::pair<int, bool>(nominal, false);
                    });
}

ChunkPlan PlanTurnAwareChunks(const VideoMeta& meta,
                              const CurvatureProfile& curvature,
                              const TurnAwareOptions& options) {
  const int length = ChunkLengthFrames(meta, options.target_seconds,
                                       options.overlap_frames);
  if (static_cast<int>(curvature.size()) != meta.num_frames) {
    throw InvalidArgument("curvature profile has " +
                          std::to_string(curvature.size()) +
                          " entries for a video of " +
                          std::to_string(meta.num_frames) + " frames");
  }
  for (double c : curvature) {
    if (!std::isfinite(c)) throw InvalidArgument("non-finite curvature");
  }
  if (options.straight_threshold < 0.0) {
    throw InvalidArgument("straight threshold must be >= 0");
  }
  if (options.search_window < 0) {
    throw InvalidArgument("search window must be >= 0");
  }
  if (options.search_window >= length - options.overlap_frames) {
    throw InvalidArgument("window too large: +-" +
                          std::to_string(options.search_window) +
                          " frames spans an entire chunk stride of " +
                          std::to_string(length - options.overlap_frames));
  }

  const double threshold = options.straight_threshold;
  const int window = options.search_window;
  auto choose = [&](int, int nominal, int lo, int hi) {
    const int first = std::max(lo, nominal - window);
    const int last = std::min(hi, nominal + window);
    int best_straight = -1;
    int best_fallback = -1;
    for (int b = first; b <= last; ++b) {
      const double c = std::abs(curvature[b]);
      const int dist = std::abs(b - nominal);
      if (c <= threshold &&
          (best_straight < 0 || dist < std::abs(best_straight - nominal))) {
        best_straight = b;
      }
      if (best_fallback < 0) {
        best_fallback = b;
        continue;
      }
      const double cf = std::abs(curvature[best_fallback]);
      if (c < cf || (c == cf && dist < std::abs(best_fallback - nominal))) {
        best_fallback = b;
      }
    }
    if (best_straight >= 0) return std::pair<int, bool>(best_straight, false);
    return std::pair<int, bool>(best_fallback, true);
  };
  return PlanChunks(meta.num_frames, length, options.overlap_frames, choose);
}

// ---------------------------------------------------------------------------
// Masks

namespace {

bool SegmentsIntersect(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                       const Eigen::Vector2d& c, const Eigen::Vector2d& d) {
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& p,
                  const Eigen::Vector2d& q) {
    return (p.x() - o.x()) * (q.y() - o.y()) - (p.y() - o.y()) * (q.x() - o.x());
  };
  auto on_segment = [](const Eigen::Vector2d& p, const Eigen::Vector2d& q,
                       const Eigen::Vector2d& r) {
    return std::min(p.x(), r.x()) <= q.x() && q.x() <= std::max(p.x(), r.x()) &&
           std::min(p.y(), r.y()) <= q.y() && q.y() <= std::max(p.y(), r.y());
  };
  const double d1 = cross(c, d, a);
  const double d2 = cross(c, d, b);
  const double d3 = cross(a, b, c);
  const double d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  if (d1 == 0 && on_segment(c, a, d)) return true;
  if (d2 == 0 && on_segment(c, b, d)) return true;
  if (d3 == 0 && on_segment(a, c, b)) return true;
  if (d4 == 0 && on_segment(a, d, b)) return true;
  return false;
}

void ValidatePolygon(const std::vector<Eigen::Vector2d>& polygon) {
  const size_t n = polygon.size();
  if (n < 3) throw InvalidArgument("mask polygon needs at least 3 vertices");
  for (const auto& p : polygon) {
    if (!p.allFinite()) throw InvalidArgument("non-finite polygon vertex");
  }
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (SegmentsIntersect(polygon[i], polygon[(i + 1) % n], polygon[j],
                            polygon[(j + 1) % n])) {
        throw InvalidArgument("mask polygon is self-intersecting");
      }
    }
  }
}

bool PointInPolygon(const std::vector<Eigen::Vector2d>& polygon, double x,
                    double y) {
  bool inside = false;
  const size_t n = polygon.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const Eigen::Vector2d& a = polygon[i];
    const Eigen::Vector2d& b = polygon[j];
    if ((a.y() > y) != (b.y() > y) &&
        x < (b.x() - a.x()) * (y - a.y()) / (b.y() - a.y()) + a.x()) {
      inside = !inside;
    }
  }
  return inside;
}

}  // namespace

std::pair<int, int> MaskSpec::MaskedRows() const {
  switch (mode) {
    case MaskMode::kBottomFraction: {
      const int first = static_cast<int>(std::ceil((1.0 - fraction) * height));
      if (first >= height) return {-1, -1};
      return {first, height - 1};
    }
    case MaskMode::kTopFraction: {
      const int count = static_cast<int>(std::floor(fraction * height));
      if (count <= 0) return {-1, -1};
      return {0, count - 1};
    }
    default:
      return {-1, -1};
  }
}

bool MaskSpec::IsMasked(double u, double v) const {
  switch (mode) {
    case MaskMode::kNone:
      return false;
    case MaskMode::kBottomFraction:
    case MaskMode::kTopFraction: {
      const auto [first, last] = MaskedRows();
      const double row = std::floor(v);
      return first >= 0 && row >= first && row <= last;
    }
    case MaskMode::kPolygon:
      return PointInPolygon(polygon, (std::floor(u) + 0.5) / width,
                            (std::floor(v) + 0.5) / height);
  }
  return false;
}

long long MaskSpec::MaskedPixelCount() const {
  if (mode == MaskMode::kNone) return 0;
  if (mode != MaskMode::kPolygon) {
    const auto [first, last] = MaskedRows();
    if (first < 0) return 0;
    return static_cast<long long>(last - first + 1) * width;
  }
  long long count = 0;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) count += IsMasked(u, v) ? 1 : 0;
  }
  return count;
}

MaskSpec BuildMask(MaskMode mode, const MaskParams& params,
                   const VideoMeta& meta) {
  if (meta.width <= 0 || meta.height <= 0) {
    throw InvalidArgument("mask needs a positive frame size");
  }
  MaskSpec spec;
  spec.mode = mode;
  spec.width = meta.width;
  spec.height = meta.height;
  switch (mode) {
    case MaskMode::kNone:
      break;
    case MaskMode::kBottomFraction:
    case MaskMode::kTopFraction:
      if (!(params.fraction >= 0.0 && params.fraction <= 1.0)) {
        throw InvalidArgument("mask fraction must lie in [0, 1]");
      }
      spec.fraction = params.fraction;
      break;
    case MaskMode::kPolygon:
      ValidatePolygon(params.polygon);
      spec.polygon = params.polygon;
      break;
  }
  return spec;
}

std::string MaskModeName(MaskMode mode) {
  switch (mode) {
    case MaskMode::kNone:
      return "none";
    case MaskMode::kBottomFraction:
      return "bottom";
    case MaskMode::kTopFraction:
      return "top";
    case MaskMode::kPolygon:
      return "poly";
  }
  return "none";
}

MaskMode ParseMaskMode(const std::string& name) {
  if (name == "none") return MaskMode::kNone;
  if (name == "bottom") return MaskMode::kBottomFraction;
  if (name == "top") return MaskMode::kTopFraction;
  if (name == "poly") return MaskMode::kPolygon;
  throw InvalidArgument("unknown mask mode '" + name + "'");
}

MaskSpec ParseMaskArgument(const std::string& argument, const VideoMeta& meta) {
  if (argument.empty() || argument == "none") {
    return BuildMask(MaskMode::kNone, {}, meta);
  }
  const auto colon = argument.find(':');
  if (colon == std::string::npos) {
    throw InvalidArgument("--mask expects bottom:F, top:F or poly:FILE, got '" +
                          argument + "'");
  }
  const MaskMode mode = ParseMaskMode(argument.substr(0, colon));
  const std::string value = argument.substr(colon + 1);
  MaskParams params;
  if (mode == MaskMode::kPolygon) {
    std::ifstream in(value);
    if (!in) throw InvalidArgument("cannot open mask polygon file '" + value + "'");
    double u = 0.0;
    double v = 0.0;
    while (in >> u >> v) params.polygon.emplace_back(u, v);
  } else {
    try {
      size_t used = 0;
      params.fraction = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw InvalidArgument("bad mask fraction '" + value + "'");
    }
  }
  return BuildMask(mode, params, meta);
}

std::vector<CloudPoint> MaskPoints(const MaskSpec& mask,
                                   const std::vector<CloudPoint>& points) {
  std::vector<CloudPoint> out;
  out.reserve(points.size());
  for (const CloudPoint& p : points) {
    if (!mask.IsMasked(p.pixel.x(), p.pixel.y())) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Downsampling

namespace {

// Best rational approximation p/q of x in (0, 1] with q <= max_den.
std::pair<int, int> NearestRational(double x, int max_den) {
  int p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double value = x;
  for (int iter = 0; iter < 64; ++iter) {
    const double a = std::floor(value);
    const long long p2 = static_cast<long long>(a) * p1 + p0;
    const long long q2 = static_cast<long long>(a) * q1 + q0;
    if (q2 > max_den) break;
    p0 = p1;
    q0 = q1;
    p1 = static_cast<int>(p2);
    q1 = static_cast<int>(q2);
    const double frac = value - a;
    if (frac < 1e-12) break;
    value = 1.0 / frac;
  }
  const int g = std::gcd(p1, q1);
  return {p1 / g, q1 / g};
}

}  // namespace

int DownsampleRecipe::KeptAmong(int source_frames) const {
  const int full = source_frames / period;
  const int rest = source_frames % period;
  int kept = full * keep;
  for (int offset : selected) kept += offset < rest ? 1 : 0;
  return kept;
}

DownsampleRecipe MakeDownsampleRecipe(const VideoMeta& source,
                                      int target_width, int target_height,
                                      double target_fps) {
  source.Validate();
  if (target_width <= 0 || target_height <= 0 || !(target_fps > 0.0)) {
    throw InvalidArgument("downsample targets must be positive");
  }
  if (target_width > source.width || target_height > source.height ||
      target_fps > source.fps) {
    throw InvalidArgument("upsampling requested: target exceeds source "
                          "resolution or frame rate");
  }
  DownsampleRecipe recipe;
  recipe.scale_x = static_cast<double>(target_width) / source.width;
  recipe.scale_y = static_cast<double>(target_height) / source.height;
  const auto [keep, period] = NearestRational(target_fps / source.fps, 1000);
  recipe.keep = keep;
  recipe.period = period;
  for (int i = 0; i < period; ++i) {
    const long long before = static_cast<long long>(i) * keep / period;
    const long long after = static_cast<long long>(i + 1) * keep / period;
    if (after > before) recipe.selected.push_back(i);
  }
  if (target_fps < kLowFpsThreshold) {
    recipe.low_fps_warning = true;
    std::ostringstream msg;
    msg << "target frame rate " << target_fps << " fps is below "
        << kLowFpsThreshold << " fps; fast motion will break reconstruction";
    recipe.warnings.push_back(msg.str());
  }
  return recipe;
}

}  // namespace trackstitch
