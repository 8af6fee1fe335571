#include "trackstitch/eval.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "trackstitch/chunkio.h"
#include "trackstitch/error.h"
#include "trackstitch/parallel.h"
#include "trackstitch/stitch.h"

namespace trackstitch {

std::string AlignmentName(Alignment align) {
  switch (align) {
    case Alignment::kNone: return "none";
    case Alignment::kSE3: return "se3";
    case Alignment::kSim3: return "sim3";
  }
  return "?";
}

Alignment ParseAlignment(const std::string& name) {
  if (name == "none") return Alignment::kNone;
  if (name == "se3") return Alignment::kSE3;
  if (name == "sim3") return Alignment::kSim3;
  throw InvalidArgument("unknown alignment '" + name + "' (none|se3|sim3)");
}

Association Associate(const Trajectory& est, const Trajectory& gt, double max_dt) {
  if (!(max_dt > 0.0)) throw InvalidArgument("max_dt must be > 0");
  CheckTrajectory(est);
  CheckTrajectory(gt);

  // Candidate pairs: every sample with its nearest partner on the other
  // side. Accept greedily by |dt| so each sample is used once.
  struct Candidate {
    double abs_dt;
    int e;
    int g;
  };
  std::vector<Candidate> candidates;
  auto nearest = [](const Trajectory& traj, double t) {
    auto it = std::lower_bound(traj.begin(), traj.end(), t,
                               [](const TrajectorySample& s, double v) { return s.timestamp < v; });
    int j = static_cast<int>(it - traj.begin());
    if (j == static_cast<int>(traj.size())) return j - 1;
    if (j > 0 && t - traj[j - 1].timestamp <= traj[j].timestamp - t) return j - 1;
    return j;
  };
  if (!est.empty() && !gt.empty()) {
    for (int e = 0; e < static_cast<int>(est.size()); ++e) {
      const int g = nearest(gt, est[e].timestamp);
      candidates.push_back({std::abs(est[e].timestamp - gt[g].timestamp), e, g});
    }
    for (int g = 0; g < static_cast<int>(gt.size()); ++g) {
      const int e = nearest(est, gt[g].timestamp);
      candidates.push_back({std::abs(est[e].timestamp - gt[g].timestamp), e, g});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.abs_dt != b.abs_dt) return a.abs_dt < b.abs_dt;
    return a.e != b.e ? a.e < b.e : a.g < b.g;
  });
  std::vector<int> est_to_gt(est.size(), -1);
  std::vector<char> gt_used(gt.size(), 0);
  for (const Candidate& c : candidates) {
    if (c.abs_dt > max_dt) break;
    if (est_to_gt[c.e] >= 0 || gt_used[c.g]) continue;
    est_to_gt[c.e] = c.g;
    gt_used[c.g] = 1;
  }
  Association out;
  for (int e = 0; e < static_cast<int>(est.size()); ++e) {
    if (est_to_gt[e] < 0) continue;
    out.est_index.push_back(e);
    out.gt_index.push_back(est_to_gt[e]);
    out.dt.push_back(est[e].timestamp - gt[est_to_gt[e]].timestamp);
  }
  if (out.size() == 0) throw DataError("no temporal overlap between trajectories");
  return out;
}

Pose TransformPose(const Sim3& s, const Pose& pose) {
  return Pose(s.rotation * pose.rotation, s * pose.translation);
}

AteResult Ate(const Trajectory& est, const Trajectory& gt, Alignment align, double max_dt) {
  const Association assoc = Associate(est, gt, max_dt);
  std::vector<Eigen::Vector3d> src, dst;
  for (int k = 0; k < assoc.size(); ++k) {
    src.push_back(est[assoc.est_index[k]].pose.translation);
    dst.push_back(gt[assoc.gt_index[k]].pose.translation);
  }
  AteResult out;
  out.pairs = assoc.size();
  if (align != Alignment::kNone) {
    if (assoc.size() < 3) throw DataError("alignment needs at least 3 associated pairs");
    out.alignment = Umeyama(src, dst, {align == Alignment::kSim3, true});
  }
  double sum = 0.0;
  for (size_t k = 0; k < src.size(); ++k) {
    const double e = (out.alignment * src[k] - dst[k]).norm();
    sum += e * e;
    out.max = std::max(out.max, e);
  }
  out.rmse = std::sqrt(sum / static_cast<double>(src.size()));
  return out;
}

RpeResult Rpe(const Trajectory& est, const Trajectory& gt, int delta, double max_dt) {
  if (delta < 1) throw InvalidArgument("rpe delta must be >= 1");
  const Association assoc = Associate(est, gt, max_dt);
  const int windows = assoc.size() - delta;
  if (windows < 1) throw DataError("too few samples for rpe delta " + std::to_string(delta));
  double sum_t = 0.0;
  double sum_r = 0.0;
  for (int k = 0; k < windows; ++k) {
    const Pose e = est[assoc.est_index[k]].pose.Inverse() * est[assoc.est_index[k + delta]].pose;
    const Pose g = gt[assoc.gt_index[k]].pose.Inverse() * gt[assoc.gt_index[k + delta]].pose;
    const Pose err = g.Inverse() * e;
    sum_t += err.translation.squaredNorm();
    const double a = err.rotation.angle();
    sum_r += a * a;
  }
  RpeResult out;
  out.windows = windows;
  out.trans = std::sqrt(sum_t / windows);
  out.rot = std::sqrt(sum_r / windows);
  return out;
}

double EndpointGap(const Trajectory& trajectory) {
  if (trajectory.size() < 2) throw InvalidArgument("endpoint gap needs >= 2 samples");
  return (trajectory.back().pose.translation - trajectory.front().pose.translation).norm();
}

CurvatureProfile CurvatureFromTrajectory(const Trajectory& trajectory) {
  if (trajectory.size() < 3) throw InvalidArgument("curvature needs >= 3 samples");
  CurvatureProfile k(trajectory.size(), 0.0);
  for (size_t f = 0; f + 1 < trajectory.size(); ++f) {
    const Rotation rel = trajectory[f].pose.rotation.Inverse() * trajectory[f + 1].pose.rotation;
    const Eigen::Vector3d forward = rel * Eigen::Vector3d::UnitZ();
    k[f] = std::atan2(-forward.x(), forward.z());
  }
  k.back() = k[k.size() - 2];
  return k;
}

double CloudError(std::span<const CloudPoint> points, const TrackModel& track,
                  const Sim3& alignment) {
  if (points.empty()) throw InvalidArgument("cloud error of an empty cloud");
  constexpr int kBlock = 4096;
  const int blocks = static_cast<int>((points.size() + kBlock - 1) / kBlock);
  std::vector<double> partial(blocks, 0.0);
  ParallelFor(blocks, [&](int b) {
    const size_t end = std::min(points.size(), static_cast<size_t>(b + 1) * kBlock);
    double sum = 0.0;
    for (size_t i = static_cast<size_t>(b) * kBlock; i < end; ++i) {
      const double d = track.DistanceToSurface(alignment * points[i].position);
      sum += d * d;
    }
    partial[b] = sum;
  });
  double sum = 0.0;
  for (double p : partial) sum += p;
  return std::sqrt(sum / static_cast<double>(points.size()));
}

TrajectoryMetrics Evaluate(const Trajectory& est, const Trajectory& gt, Alignment align,
                           int delta, double max_dt) {
  TrajectoryMetrics m;
  m.align = align;
  m.delta = delta;
  m.ate = Ate(est, gt, align, max_dt);
  m.ate_se3_rmse = Ate(est, gt, Alignment::kSE3, max_dt).rmse;
  Trajectory aligned = est;
  for (TrajectorySample& s : aligned) s.pose = TransformPose(m.ate.alignment, s.pose);
  m.rpe = Rpe(aligned, gt, delta, max_dt);
  m.endpoint_gap = EndpointGap(aligned);
  m.gt_endpoint_gap = EndpointGap(gt);
  return m;
}

std::string FormatMetricsRecord(const TrajectoryMetrics& m) {
  std::ostringstream out;
  out << "align=" << AlignmentName(m.align) << " pairs=" << m.ate.pairs
      << " ate_rmse=" << FormatDouble(m.ate.rmse) << " ate_max=" << FormatDouble(m.ate.max)
      << " ate_se3_rmse=" << FormatDouble(m.ate_se3_rmse) << " delta=" << m.delta
      << " rpe_trans=" << FormatDouble(m.rpe.trans) << " rpe_rot=" << FormatDouble(m.rpe.rot)
      << " endpoint_gap=" << FormatDouble(m.endpoint_gap)
      << " gt_endpoint_gap=" << FormatDouble(m.gt_endpoint_gap)
      << " scale=" << FormatDouble(m.ate.alignment.scale);
  return out.str();
}

std::string FormatMetricsSummary(const TrajectoryMetrics& m) {
  std::ostringstream out;
  out.precision(4);
  out << "ATE (" << AlignmentName(m.align) << "-aligned, " << m.ate.pairs
      << " pairs): rmse " << m.ate.rmse << " m, max " << m.ate.max << " m\n"
      << "ATE (se3-aligned): rmse " << m.ate_se3_rmse << " m\n"
      << "RPE over " << m.delta << " frames: " << m.rpe.trans << " m, " << m.rpe.rot
      << " rad\n"
      << "endpoint gap: " << m.endpoint_gap << " m (ground truth " << m.gt_endpoint_gap
      << " m)\n";
  return out.str();
}

}  // namespace trackstitch
