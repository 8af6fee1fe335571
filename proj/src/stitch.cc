#include "trackstitch/stitch.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <Eigen/SVD>

#include "trackstitch/chunkio.h"
#include "trackstitch/error.h"
#include "trackstitch/parallel.h"

namespace trackstitch {

Sim3 Umeyama(std::span<const Eigen::Vector3d> src,
             std::span<const Eigen::Vector3d> dst,
             const UmeyamaOptions& options) {
  if (src.size() != dst.size()) {
    throw InvalidArgument("umeyama: point sets differ in size");
  }
  const size_t n = src.size();
  const size_t needed = options.with_rotation ? 3 : 1;
  if (n < needed) {
    throw NumericalError("rank-deficient alignment: " + std::to_string(n) +
                         " point pairs");
  }
  Eigen::Vector3d mean_src = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_dst = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    mean_src += src[i];
    mean_dst += dst[i];
  }
  mean_src /= static_cast<double>(n);
  mean_dst /= static_cast<double>(n);

  double var_src = 0.0;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d s = src[i] - mean_src;
    const Eigen::Vector3d d = dst[i] - mean_dst;
    var_src += s.squaredNorm();
    cov += d * s.transpose();
  }
  var_src /= static_cast<double>(n);
  cov /= static_cast<double>(n);

  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  double scale = 1.0;
  if (options.with_rotation) {
    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(
        cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sv = svd.singularValues();
    if (!(sv[0] > 0.0) || sv[1] <= 1e-10 * sv[0]) {
      throw NumericalError("rank-deficient alignment: points are collinear or "
                           "coincident");
    }
    Eigen::Matrix3d sign = Eigen::Matrix3d::Identity();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
      sign(2, 2) = -1.0;
    }
    rotation = svd.matrixU() * sign * svd.matrixV().transpose();
    if (options.with_scale) {
      scale = (sv.asDiagonal() * sign).trace() / var_src;
    }
  } else if (options.with_scale) {
    if (!(var_src > 0.0)) {
      throw NumericalError("rank-deficient alignment: source points coincide");
    }
    scale = cov.trace() / var_src;
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw NumericalError("rank-deficient alignment: non-positive scale");
  }
  const Rotation r = Rotation::FromMatrix(rotation);
  return Sim3(scale, r, mean_dst - scale * (r * mean_src));
}

std::string ScaleModeName(ScaleMode mode) {
  switch (mode) {
    case ScaleMode::kUnit:
      return "unit";
    case ScaleMode::kDepthRatio:
      return "depth";
    case ScaleMode::kUmeyama:
      return "umeyama";
  }
  return "unit";
}

ScaleMode ParseScaleMode(const std::string& name) {
  if (name == "unit") return ScaleMode::kUnit;
  if (name == "depth" || name == "depth-ratio") return ScaleMode::kDepthRatio;
  if (name == "umeyama") return ScaleMode::kUmeyama;
  throw InvalidArgument("unknown scale mode '" + name + "'");
}

namespace {

std::pair<long long, long long> PixelKey(const Eigen::Vector2d& pixel) {
  return {std::llround(pixel.x() * 1000.0), std::llround(pixel.y() * 1000.0)};
}

double Median(std::vector<double> values) {
  const size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  double m = values[mid];
  if (values.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(values.begin(), values.begin() + mid));
  }
  return m;
}

// Median of depth_prev / depth_next over pixels present in both pointmaps.
// Returns the match count alongside.
std::pair<double, int> DepthRatio(const FrameRecord& prev, const FrameRecord& next) {
  std::map<std::pair<long long, long long>, double> prev_depths;
  const Pose prev_inv = prev.pose.Inverse();
  for (const CloudPoint& p : prev.points) {
    const double depth = (prev_inv * p.position).z();
    if (depth > 0.0) prev_depths.emplace(PixelKey(p.pixel), depth);
  }
  const Pose next_inv = next.pose.Inverse();
  std::vector<double> ratios;
  for (const CloudPoint& q : next.points) {
    const double depth = (next_inv * q.position).z();
    if (!(depth > 0.0)) continue;
    const auto it = prev_depths.find(PixelKey(q.pixel));
    if (it != prev_depths.end()) ratios.push_back(it->second / depth);
  }
  if (ratios.empty()) return {1.0, 0};
  const int matches = static_cast<int>(ratios.size());
  return {Median(std::move(ratios)), matches};
}

}  // namespace

OverlapAlignment AlignOverlap(const ChunkReconstruction& prev,
                              const ChunkReconstruction& next,
                              std::span<const int> shared_frames,
                              ScaleMode scale_mode) {
  if (shared_frames.empty()) {
    throw DataError("no shared frames between chunk " +
                    std::to_string(prev.chunk_id) + " and " +
                    std::to_string(next.chunk_id));
  }
  std::vector<const FrameRecord*> in_prev;
  std::vector<const FrameRecord*> in_next;
  for (int f : shared_frames) {
    const FrameRecord* a = prev.Find(f);
    const FrameRecord* b = next.Find(f);
    if (a == nullptr || b == nullptr) {
      throw DataError("shared frame " + std::to_string(f) + " missing from chunk " +
                      std::to_string(a == nullptr ? prev.chunk_id : next.chunk_id));
    }
    in_prev.push_back(a);
    in_next.push_back(b);
  }

  OverlapAlignment out;
  out.used_mode = scale_mode;
  if (scale_mode == ScaleMode::kUmeyama) {
    if (shared_frames.size() < 2) {
      throw InvalidArgument("umeyama scale mode needs at least 2 shared frames");
    }
    // Camera centers plus forward/up points at a physical distance equal to
    // the RMS spread of the centers, so both sides agree on their length.
    auto spread = [](const std::vector<const FrameRecord*>& frames) {
      Eigen::Vector3d mean = Eigen::Vector3d::Zero();
      for (const auto* f : frames) mean += f->pose.translation;
      mean /= static_cast<double>(frames.size());
      double sum = 0.0;
      for (const auto* f : frames) sum += (f->pose.translation - mean).squaredNorm();
      return std::sqrt(sum / static_cast<double>(frames.size()));
    };
    const double len_prev = spread(in_prev);
    const double len_next = spread(in_next);
    if (!(len_prev > 0.0) || !(len_next > 0.0)) {
      throw NumericalError("rank-deficient alignment: shared camera centers coincide");
    }
    std::vector<Eigen::Vector3d> src;
    std::vector<Eigen::Vector3d> dst;
    auto add = [](std::vector<Eigen::Vector3d>& pts, const Pose& pose, double len) {
      pts.push_back(pose.translation);
      pts.push_back(pose * Eigen::Vector3d(0, 0, len));
      pts.push_back(pose * Eigen::Vector3d(0, -len, 0));
    };
    for (size_t i = 0; i < in_prev.size(); ++i) {
      add(dst, in_prev[i]->pose, len_prev);
      add(src, in_next[i]->pose, len_next);
    }
    out.transform = Umeyama(src, dst, {.with_scale = true});
    return out;
  }

  double scale = 1.0;
  if (scale_mode == ScaleMode::kDepthRatio) {
    const auto [ratio, matches] = DepthRatio(*in_prev[0], *in_next[0]);
    out.depth_matches = matches;
    if (matches < kMinDepthMatches) {
      out.used_mode = ScaleMode::kUnit;
      out.warnings.push_back("depth-ratio scale between chunk " +
                             std::to_string(prev.chunk_id) + " and " +
                             std::to_string(next.chunk_id) + " had only " +
                             std::to_string(matches) + " pixel matches; using unit scale");
    } else {
      scale = ratio;
    }
  }
  out.transform = Sim3(in_prev[0]->pose) * Sim3::FromScale(scale) *
                  Sim3(in_next[0]->pose).Inverse();
  return out;
}

StitchResult StitchChunks(const std::vector<ChunkReconstruction>& chunks,
                          const ChunkPlan& plan, ScaleMode scale_mode) {
  if (chunks.empty()) throw InvalidArgument("nothing to stitch");
  if (chunks.size() != plan.chunks.size()) {
    throw InvalidArgument("plan has " + std::to_string(plan.chunks.size()) +
                          " chunks, got " + std::to_string(chunks.size()) +
                          " reconstructions");
  }
  const int num_seams = static_cast<int>(chunks.size()) - 1;
  std::vector<OverlapAlignment> seam_alignments(num_seams);
  ParallelFor(num_seams, [&](int s) {
    const ChunkSpec& next_spec = plan.chunks[s + 1];
    const ChunkSpec& prev_spec = plan.chunks[s];
    std::vector<int> shared;
    for (int f = next_spec.start_frame; f <= prev_spec.end_frame; ++f) shared.push_back(f);
    try {
      seam_alignments[s] = AlignOverlap(chunks[s], chunks[s + 1], shared, scale_mode);
    } catch (const Error& e) {
      throw Error(e.kind(), "seam between chunk " + std::to_string(s) + " and " +
                                std::to_string(s + 1) + ": " + e.what());
    }
  });

  StitchResult result;
  result.gauges.push_back(Sim3::Identity());
  for (int s = 0; s < num_seams; ++s) {
    result.gauges.push_back(result.gauges.back() * seam_alignments[s].transform);
  }

  for (int s = 0; s < num_seams; ++s) {
    SeamDiagnostics diag;
    diag.prev_chunk = s;
    diag.next_chunk = s + 1;
    diag.scale_ratio = seam_alignments[s].transform.scale;
    diag.used_mode = seam_alignments[s].used_mode;
    diag.warnings = seam_alignments[s].warnings;
    double sum = 0.0;
    int count = 0;
    for (int f = plan.chunks[s + 1].start_frame; f <= plan.chunks[s].end_frame; ++f) {
      const Eigen::Vector3d a = result.gauges[s] * chunks[s].Find(f)->pose.translation;
      const Eigen::Vector3d b = result.gauges[s + 1] * chunks[s + 1].Find(f)->pose.translation;
      sum += (a - b).squaredNorm();
      ++count;
    }
    diag.residual = count > 0 ? std::sqrt(sum / count) : 0.0;
    result.seams.push_back(std::move(diag));
  }

  int last_emitted = -1;
  for (size_t k = 0; k < chunks.size(); ++k) {
    for (const FrameRecord& f : chunks[k].frames) {
      if (f.frame_index <= last_emitted) continue;
      result.trajectory.push_back(
          {f.timestamp, (result.gauges[k] * Sim3(f.pose)).ToPose()});
      last_emitted = f.frame_index;
    }
  }
  CheckTrajectory(result.trajectory);
  return result;
}

void WriteGauges(const std::string& path, const std::vector<Sim3>& gauges) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "# chunk_id s tx ty tz qx qy qz qw\n";
  for (size_t k = 0; k < gauges.size(); ++k) {
    const Sim3& g = gauges[k];
    const Eigen::Quaterniond q = g.rotation.Canonical();
    out << k << ' ' << FormatDouble(g.scale);
    for (double v : {g.translation.x(), g.translation.y(), g.translation.z(), q.x(),
                     q.y(), q.z(), q.w()}) {
      out << ' ' << FormatDouble(v);
    }
    out << '\n';
  }
}

std::vector<Sim3> ReadGauges(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::vector<Sim3> gauges;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::istringstream line(hash == std::string::npos ? raw : raw.substr(0, hash));
    int id = 0;
    double v[8];
    if (!(line >> id)) {
      if (!(line.clear(), line >> std::ws).eof()) {
        throw ParseError(path, line_no, "expected 'chunk_id s tx ty tz qx qy qz qw'");
      }
      continue;
    }
    for (double& x : v) {
      if (!(line >> x)) throw ParseError(path, line_no, "expected 'chunk_id s tx ty tz qx qy qz qw'");
    }
    std::string extra;
    if (line >> extra) throw ParseError(path, line_no, "trailing fields");
    if (id != static_cast<int>(gauges.size())) {
      throw ParseError(path, line_no, "gauge ids must run 0..n-1");
    }
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (std::abs(q.norm() - 1.0) > 1e-3) throw ParseError(path, line_no, "non-unit quaternion");
    if (!(v[0] > 0.0)) throw ParseError(path, line_no, "gauge scale must be positive");
    gauges.emplace_back(v[0], Rotation::FromQuaternion(q), Eigen::Vector3d(v[1], v[2], v[3]));
  }
  return gauges;
}

}  // namespace trackstitch
