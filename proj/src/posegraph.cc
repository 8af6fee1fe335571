#include "trackstitch/posegraph.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "trackstitch/error.h"
#include "trackstitch/parallel.h"

namespace trackstitch {
namespace {

using Matrix7d = Eigen::Matrix<double, 7, 7>;

uint64_t SplitMix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void CheckChunks(const std::vector<ChunkReconstruction>& chunks, const ChunkPlan& plan) {
  if (chunks.size() != plan.chunks.size() || chunks.empty()) {
    throw InvalidArgument("chunk reconstructions do not match the plan");
  }
  for (size_t k = 0; k < chunks.size(); ++k) {
    const ChunkSpec& spec = plan.chunks[k];
    if (static_cast<int>(chunks[k].frames.size()) != spec.length() ||
        chunks[k].first_frame() != spec.start_frame ||
        chunks[k].last_frame() != spec.end_frame) {
      throw DataError("chunk " + std::to_string(spec.chunk_id) + " does not match its plan entry");
    }
  }
  if (plan.chunks.front().start_frame != 0) throw DataError("plan does not start at frame 0");
}

const FrameRecord& Record(const std::vector<ChunkReconstruction>& chunks, int chunk, int frame) {
  const FrameRecord* rec = chunks[chunk].Find(frame);
  if (rec == nullptr) {
    throw DataError("frame " + std::to_string(frame) + " missing from chunk " +
                    std::to_string(chunks[chunk].chunk_id));
  }
  return *rec;
}

bool InChunk(const std::vector<ChunkReconstruction>& chunks, int chunk, int frame) {
  return frame >= chunks[chunk].first_frame() && frame <= chunks[chunk].last_frame();
}

Vector7d Residual(const GraphEdge& e, const Sim3& xi, const Sim3& xj) {
  return (e.measurement.Inverse() * (xi.Inverse() * xj)).Log();
}

struct Robust {
  double cost;
  double weight;
};

Robust Huber(const GraphEdge& e, const Vector7d& r) {
  const double e2 = r.dot(e.information.cwiseProduct(r));
  const double k = e.huber * std::sqrt(e.information(3));
  const double norm = std::sqrt(e2);
  if (norm <= k) return {0.5 * e2, 1.0};
  return {k * norm - 0.5 * k * k, k / norm};
}

// Uniform grid for radius-limited nearest-neighbour queries.
class PointGrid {
 public:
  PointGrid(const std::vector<Eigen::Vector3d>& points, double cell)
      : points_(points), cell_(cell) {
    for (int i = 0; i < static_cast<int>(points.size()); ++i) {
      cells_[Key(Cell(points[i]))].push_back(i);
    }
  }

  // Index of the nearest point within `radius` (<= cell), or -1.
  int Nearest(const Eigen::Vector3d& q, double radius) const {
    const Eigen::Vector3i c = Cell(q);
    int best = -1;
    double best_d2 = radius * radius;
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find(Key(c + Eigen::Vector3i(dx, dy, dz)));
          if (it == cells_.end()) continue;
          for (int i : it->second) {
            const double d2 = (points_[i] - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && best >= 0 && i < best)) {
              best_d2 = d2;
              best = i;
            }
          }
        }
      }
    }
    return best;
  }

 private:
  Eigen::Vector3i Cell(const Eigen::Vector3d& p) const {
    return (p / cell_).array().floor().cast<int>();
  }
  static int64_t Key(const Eigen::Vector3i& c) {
    return ((static_cast<int64_t>(c.x()) & 0x1fffff) << 42) |
           ((static_cast<int64_t>(c.y()) & 0x1fffff) << 21) |
           (static_cast<int64_t>(c.z()) & 0x1fffff);
  }

  const std::vector<Eigen::Vector3d>& points_;
  double cell_;
  std::unordered_map<int64_t, std::vector<int>> cells_;
};

// Points of `frame` in its camera coordinates, owner-chunk units.
std::vector<Eigen::Vector3d> CameraPoints(const PoseGraph& graph,
                                          const std::vector<ChunkReconstruction>& chunks,
                                          int frame) {
  const FrameRecord& rec = Record(chunks, graph.nodes[frame].chunk, frame);
  const Pose inv = rec.pose.Inverse();
  std::vector<Eigen::Vector3d> out;
  out.reserve(rec.points.size());
  for (const CloudPoint& p : rec.points) out.push_back(inv * p.position);
  return out;
}

struct MatchSet {
  std::vector<int> a;
  std::vector<int> b;
};

MatchSet MutualMatches(const std::vector<Eigen::Vector3d>& pa, const PointGrid& grid_a,
                       const std::vector<Eigen::Vector3d>& pb_moved, double radius) {
  const PointGrid grid_b(pb_moved, radius);
  MatchSet m;
  for (int j = 0; j < static_cast<int>(pb_moved.size()); ++j) {
    const int i = grid_a.Nearest(pb_moved[j], radius);
    if (i < 0) continue;
    if (grid_b.Nearest(pa[i], radius) != j) continue;
    m.a.push_back(i);
    m.b.push_back(j);
  }
  return m;
}

bool HasEdge(const std::vector<GraphEdge>& edges, int i, int j, EdgeKind kind) {
  for (const GraphEdge& e : edges) {
    if (e.kind == kind && ((e.i == i && e.j == j) || (e.i == j && e.j == i))) return true;
  }
  return false;
}

}  // namespace

std::string EdgeKindName(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::kIntra: return "intra";
    case EdgeKind::kCross: return "cross";
    case EdgeKind::kLoop: return "loop";
  }
  return "?";
}

Vector7d EdgeWeights::Diagonal() const {
  Vector7d d;
  d << rot, rot, rot, trans, trans, trans, scale;
  return d;
}

int PoseGraph::num_keyframes() const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(),
                                        [](const FrameNode& n) { return n.keyframe; }));
}

int PoseGraph::CountEdges(EdgeKind kind) const {
  return static_cast<int>(std::count_if(edges.begin(), edges.end(),
                                        [&](const GraphEdge& e) { return e.kind == kind; }));
}

Sim3 ChunkRelative(const PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks,
                   int chunk, int i, int j) {
  const Sim3 ti(Record(chunks, chunk, i).pose);
  const Sim3 tj(Record(chunks, chunk, j).pose);
  const double gk = graph.chunk_scales[chunk];
  const double gi = graph.chunk_scales[graph.nodes[i].chunk];
  const double gj = graph.chunk_scales[graph.nodes[j].chunk];
  return Sim3::FromScale(gk / gi) * (ti.Inverse() * tj) * Sim3::FromScale(gj / gk);
}

PoseGraph BuildGraph(std::vector<Sim3> initial, std::vector<double> chunk_scales,
                     const std::vector<ChunkReconstruction>& chunks, const ChunkPlan& plan,
                     const GraphOptions& options) {
  CheckChunks(chunks, plan);
  const int num_frames = plan.chunks.back().end_frame + 1;
  if (static_cast<int>(initial.size()) != num_frames ||
      chunk_scales.size() != chunks.size()) {
    throw InvalidArgument("initial poses or chunk scales do not match the plan");
  }
  PoseGraph graph;
  graph.options = options;
  graph.chunk_scales = std::move(chunk_scales);
  graph.nodes.resize(num_frames);
  std::vector<char> seen(num_frames, 0);
  for (int k = 0; k < static_cast<int>(chunks.size()); ++k) {
    for (const FrameRecord& rec : chunks[k].frames) {
      FrameNode& node = graph.nodes[rec.frame_index];
      if (seen[rec.frame_index]) continue;
      seen[rec.frame_index] = 1;
      node.frame = rec.frame_index;
      node.chunk = k;
      node.timestamp = rec.timestamp;
      node.pose = initial[rec.frame_index];
    }
  }
  graph.nodes[0].fixed = true;
  graph.nodes[0].keyframe = true;

  const int stride = std::max(1, options.skip_stride);
  std::set<std::pair<int, int>> present;
  for (int k = 0; k < static_cast<int>(chunks.size()); ++k) {
    const auto& frames = chunks[k].frames;
    const int n = static_cast<int>(frames.size());
    auto add = [&](int li, int lj) {
      const int i = frames[li].frame_index;
      const int j = frames[lj].frame_index;
      if (!present.insert({i, j}).second) return;
      GraphEdge e;
      e.i = i;
      e.j = j;
      e.kind = EdgeKind::kIntra;
      e.chunk = k;
      e.measurement = ChunkRelative(graph, chunks, k, i, j);
      e.information = options.intra.Diagonal() / static_cast<double>(lj - li);
      e.huber = options.huber;
      graph.edges.push_back(e);
    };
    for (int l = 0; l + 1 < n; ++l) add(l, l + 1);
    for (int l = 0; l + stride < n; l += stride) {
      if (stride > 1) add(l, l + stride);
    }
  }
  return graph;
}

PoseGraph BuildGraph(const StitchResult& stitch, const std::vector<ChunkReconstruction>& chunks,
                     const ChunkPlan& plan, const GraphOptions& options) {
  CheckChunks(chunks, plan);
  if (stitch.gauges.size() != chunks.size()) {
    throw InvalidArgument("stitch result does not cover all chunks");
  }
  const int num_frames = plan.chunks.back().end_frame + 1;
  std::vector<Sim3> initial(num_frames);
  std::vector<char> seen(num_frames, 0);
  std::vector<double> scales;
  for (int k = 0; k < static_cast<int>(chunks.size()); ++k) {
    scales.push_back(stitch.gauges[k].scale);
    for (const FrameRecord& rec : chunks[k].frames) {
      if (seen[rec.frame_index]) continue;
      seen[rec.frame_index] = 1;
      initial[rec.frame_index] = stitch.gauges[k] * Sim3(rec.pose);
    }
  }
  return BuildGraph(std::move(initial), std::move(scales), chunks, plan, options);
}

PoseGraph BuildGraphFromTrajectory(const Trajectory& trajectory,
                                   const std::vector<ChunkReconstruction>& chunks,
                                   const ChunkPlan& plan, const GraphOptions& options) {
  CheckChunks(chunks, plan);
  const int num_frames = plan.chunks.back().end_frame + 1;
  if (static_cast<int>(trajectory.size()) != num_frames) {
    throw DataError("trajectory has " + std::to_string(trajectory.size()) +
                    " samples but the plan covers " + std::to_string(num_frames) + " frames");
  }
  std::vector<double> scales;
  for (const ChunkReconstruction& chunk : chunks) {
    double global_len = 0.0;
    double local_len = 0.0;
    for (size_t l = 1; l < chunk.frames.size(); ++l) {
      const int f = chunk.frames[l].frame_index;
      global_len += (trajectory[f].pose.translation - trajectory[f - 1].pose.translation).norm();
      local_len += (chunk.frames[l].pose.translation - chunk.frames[l - 1].pose.translation).norm();
    }
    scales.push_back(local_len > 0.0 && global_len > 0.0 ? global_len / local_len : 1.0);
  }
  std::vector<Sim3> initial(num_frames);
  std::vector<char> seen(num_frames, 0);
  for (int k = 0; k < static_cast<int>(chunks.size()); ++k) {
    for (const FrameRecord& rec : chunks[k].frames) {
      const int f = rec.frame_index;
      if (seen[f]) continue;
      seen[f] = 1;
      const Pose& p = trajectory[f].pose;
      initial[f] = Sim3(scales[k], p.rotation, p.translation);
    }
  }
  return BuildGraph(std::move(initial), std::move(scales), chunks, plan, options);
}

Trajectory GraphTrajectory(const PoseGraph& graph) {
  Trajectory out(graph.nodes.size());
  for (size_t f = 0; f < graph.nodes.size(); ++f) {
    out[f].timestamp = graph.nodes[f].timestamp;
    out[f].pose = graph.nodes[f].pose.ToPose();
  }
  return out;
}

std::vector<std::optional<Sim3>> ChunkFramePoses(const PoseGraph& graph,
                                                 const std::vector<ChunkReconstruction>& chunks,
                                                 int chunk) {
  std::vector<std::optional<Sim3>> out(graph.nodes.size());
  const double gk = graph.chunk_scales[chunk];
  for (const FrameRecord& rec : chunks[chunk].frames) {
    const FrameNode& node = graph.nodes[rec.frame_index];
    out[rec.frame_index] = node.pose * Sim3::FromScale(gk / graph.chunk_scales[node.chunk]);
  }
  return out;
}

void RebuildKeyframeLinks(PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks) {
  std::erase_if(graph.edges, [](const GraphEdge& e) { return e.keyframe_link; });
  std::set<std::pair<int, int>> present;
  for (const GraphEdge& e : graph.edges) {
    if (e.kind == EdgeKind::kIntra) present.insert({e.i, e.j});
  }
  for (int k = 0; k < static_cast<int>(chunks.size()); ++k) {
    int prev = -1;
    for (const FrameRecord& rec : chunks[k].frames) {
      const int f = rec.frame_index;
      if (!graph.nodes[f].keyframe) continue;
      if (prev >= 0 && !present.count({prev, f})) {
        present.insert({prev, f});
        GraphEdge e;
        e.i = prev;
        e.j = f;
        e.kind = EdgeKind::kIntra;
        e.chunk = k;
        e.keyframe_link = true;
        e.measurement = ChunkRelative(graph, chunks, k, prev, f);
        e.information = graph.options.intra.Diagonal() / static_cast<double>(f - prev);
        e.huber = graph.options.huber;
        graph.edges.push_back(e);
      }
      prev = f;
    }
  }
}

void SelectKeyframes(PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks,
                     int stride, const CurvatureProfile* curvature, double threshold) {
  if (stride < 1) throw InvalidArgument("keyframe stride must be >= 1");
  const int n = static_cast<int>(graph.nodes.size());
  if (curvature != nullptr && static_cast<int>(curvature->size()) != n) {
    throw InvalidArgument("curvature profile length does not match the graph");
  }
  for (FrameNode& node : graph.nodes) node.keyframe = node.fixed || node.frame % stride == 0;
  for (const ChunkReconstruction& chunk : chunks) {
    graph.nodes[chunk.first_frame()].keyframe = true;
    graph.nodes[chunk.last_frame()].keyframe = true;
  }
  if (curvature != nullptr) {
    const CurvatureProfile& k = *curvature;
    for (int f = 0; f < n; ++f) {
      const double a = std::abs(k[f]);
      if (a <= threshold) continue;
      const double left = f > 0 ? std::abs(k[f - 1]) : -1.0;
      const double right = f + 1 < n ? std::abs(k[f + 1]) : -1.0;
      // Plateaus keep their first frame.
      if (a > left && a >= right) graph.nodes[f].keyframe = true;
    }
  }
  RebuildKeyframeLinks(graph, chunks);
}

Measurement MeasureRelative(const PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks,
                            int a, int b, const Sim3& initial, const MeasureOptions& options) {
  Measurement out;
  const std::vector<Eigen::Vector3d> pa = CameraPoints(graph, chunks, a);
  const std::vector<Eigen::Vector3d> pb = CameraPoints(graph, chunks, b);
  const double unit = graph.nodes[a].pose.scale;  // a-camera units -> metres
  const size_t smaller = std::min(pa.size(), pb.size());
  Sim3 s = initial;
  MatchSet m;
  double radius = 0.0;
  for (double radius_m : options.radii) {
    radius = radius_m / unit;
    const PointGrid grid_a(pa, radius);
    for (int it = 0; it < options.iterations; ++it) {
      std::vector<Eigen::Vector3d> moved(pb.size());
      for (size_t j = 0; j < pb.size(); ++j) moved[j] = s * pb[j];
      m = MutualMatches(pa, grid_a, moved, radius);
      if (static_cast<int>(m.a.size()) < 3) break;
      std::vector<Eigen::Vector3d> src, dst;
      for (size_t k = 0; k < m.a.size(); ++k) {
        src.push_back(pb[m.b[k]]);
        dst.push_back(pa[m.a[k]]);
      }
      try {
        s = Umeyama(src, dst);
      } catch (const Error&) {
        m = {};
        break;
      }
    }
  }
  // Final association under the converged transform.
  double sum = 0.0;
  if (!pa.empty() && !pb.empty() && radius > 0.0) {
    const PointGrid grid_a(pa, radius);
    std::vector<Eigen::Vector3d> moved(pb.size());
    for (size_t j = 0; j < pb.size(); ++j) moved[j] = s * pb[j];
    m = MutualMatches(pa, grid_a, moved, radius);
    for (size_t k = 0; k < m.a.size(); ++k) sum += (pa[m.a[k]] - moved[m.b[k]]).squaredNorm();
  } else {
    m = {};
  }
  out.relative = s;
  out.matches = static_cast<int>(m.a.size());
  out.overlap = smaller > 0 ? static_cast<double>(out.matches) / static_cast<double>(smaller) : 0.0;
  out.rms = out.matches > 0 ? unit * std::sqrt(sum / out.matches) : 0.0;
  out.weight = std::min(1.0, static_cast<double>(out.matches) /
                                 std::max(1, options.full_weight_matches));
  if (out.matches < options.min_matches) {
    out.reason = "too-few-matches";
  } else if (out.overlap < options.min_overlap) {
    out.reason = "low-overlap";
  } else if (out.rms > options.max_rms) {
    out.reason = "high-residual";
  } else {
    out.accepted = true;
  }
  return out;
}

Measurement MeasureRelative(const PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks,
                            int a, int b, const MeasureOptions& options) {
  return MeasureRelative(graph, chunks, a, b,
                         graph.nodes[a].pose.Inverse() * graph.nodes[b].pose, options);
}

SamplingReport SampleCrossEdges(const PoseGraph& graph,
                                const std::vector<ChunkReconstruction>& chunks, int chunk,
                                int count, uint64_t seed, std::vector<GraphEdge>* out,
                                const CrossEdgeOptions& options) {
  SamplingReport report;
  report.requested = count;
  if (chunks.size() < 2) {
    report.warnings.push_back("cross edges need at least two chunks");
    return report;
  }
  if (count <= 0) return report;
  std::vector<int> mine;
  std::vector<int> others;
  for (const FrameNode& node : graph.nodes) {
    if (!node.keyframe) continue;
    if (InChunk(chunks, chunk, node.frame)) {
      mine.push_back(node.frame);
    } else {
      others.push_back(node.frame);
    }
  }
  std::vector<std::pair<int, int>> pairs;
  std::vector<double> weights;
  for (int a : mine) {
    for (int b : others) {
      const double d =
          (graph.nodes[a].pose.translation - graph.nodes[b].pose.translation).norm();
      pairs.push_back({a, b});
      weights.push_back(std::exp(-d / options.sigma));
    }
  }
  std::mt19937_64 rng(seed);
  const size_t first_new = out->size();
  while (report.accepted < count && report.attempts < 10 * count) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) break;
    std::discrete_distribution<size_t> pick(weights.begin(), weights.end());
    const size_t idx = pick(rng);
    weights[idx] = 0.0;  // never retry a pair
    ++report.attempts;
    const auto [a, b] = pairs[idx];
    bool duplicate = HasEdge(graph.edges, a, b, EdgeKind::kCross);
    for (size_t k = first_new; k < out->size() && !duplicate; ++k) {
      const GraphEdge& e = (*out)[k];
      duplicate = (e.i == a && e.j == b) || (e.i == b && e.j == a);
    }
    if (duplicate) continue;
    const Measurement m = MeasureRelative(graph, chunks, a, b, options.measure);
    if (!m.accepted) {
      ++report.rejected;
      continue;
    }
    GraphEdge e;
    e.i = a;
    e.j = b;
    e.kind = EdgeKind::kCross;
    e.measurement = m.relative;
    e.information = options.weights.Diagonal() * m.weight;
    e.huber = graph.options.huber;
    e.matches = m.matches;
    out->push_back(e);
    ++report.accepted;
  }
  if (report.accepted == 0) {
    report.warnings.push_back("no cross edge accepted for chunk " +
                              std::to_string(chunks[chunk].chunk_id) + " (" +
                              std::to_string(report.rejected) + " rejected)");
  }
  return report;
}

namespace {

struct Problem {
  std::vector<int> edge_ids;
  std::vector<int> var_of_node;  // -1 when constant
  std::vector<int> var_nodes;
};

Problem SetUp(const PoseGraph& graph, const OptimizeOptions& options) {
  Problem p;
  p.var_of_node.assign(graph.nodes.size(), -1);
  for (const FrameNode& node : graph.nodes) {
    bool variable = !node.fixed;
    if (options.level == OptimizeLevel::kKeyframes) {
      variable = variable && node.keyframe;
    } else if (options.hold_keyframes) {
      variable = variable && !node.keyframe;
    }
    if (variable) {
      p.var_of_node[node.frame] = static_cast<int>(p.var_nodes.size());
      p.var_nodes.push_back(node.frame);
    }
  }
  for (int k = 0; k < static_cast<int>(graph.edges.size()); ++k) {
    const GraphEdge& e = graph.edges[k];
    if (std::find(options.kinds.begin(), options.kinds.end(), e.kind) == options.kinds.end()) {
      continue;
    }
    if (options.level == OptimizeLevel::kKeyframes &&
        (!graph.nodes[e.i].keyframe || !graph.nodes[e.j].keyframe)) {
      continue;
    }
    if (p.var_of_node[e.i] < 0 && p.var_of_node[e.j] < 0) continue;
    p.edge_ids.push_back(k);
  }
  return p;
}

double ProblemCost(const PoseGraph& graph, const std::vector<Sim3>& poses, const Problem& p) {
  std::vector<double> costs(p.edge_ids.size());
  ParallelFor(static_cast<int>(p.edge_ids.size()), [&](int k) {
    const GraphEdge& e = graph.edges[p.edge_ids[k]];
    costs[k] = Huber(e, Residual(e, poses[e.i], poses[e.j])).cost;
  });
  double total = 0.0;
  for (double c : costs) total += c;
  return total;
}

[[noreturn]] void NonFinite(const PoseGraph& graph, const std::vector<Sim3>& poses,
                            const Problem& p) {
  std::ostringstream msg;
  msg << "non-finite pose-graph cost";
  for (int id : p.edge_ids) {
    const GraphEdge& e = graph.edges[id];
    const Vector7d r = Residual(e, poses[e.i], poses[e.j]);
    if (!r.allFinite()) {
      msg << "; first bad edge " << EdgeKindName(e.kind) << " " << e.i << "->" << e.j
          << " scales " << poses[e.i].scale << ", " << poses[e.j].scale;
      break;
    }
  }
  throw NumericalError(msg.str());
}

}  // namespace

double GraphCost(const PoseGraph& graph, const OptimizeOptions& options) {
  const Problem p = SetUp(graph, options);
  std::vector<Sim3> poses;
  for (const FrameNode& n : graph.nodes) poses.push_back(n.pose);
  return ProblemCost(graph, poses, p);
}

void PropagateFromKeyframes(PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks) {
  for (FrameNode& node : graph.nodes) {
    if (node.keyframe || node.fixed) continue;
    int anchor = -1;
    for (int f = node.frame - 1; f >= chunks[node.chunk].first_frame(); --f) {
      if (graph.nodes[f].keyframe) {
        anchor = f;
        break;
      }
    }
    if (anchor < 0) continue;
    node.pose = graph.nodes[anchor].pose * ChunkRelative(graph, chunks, node.chunk, anchor, node.frame);
  }
}

OptimizeReport Optimize(PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks,
                        const OptimizeOptions& options) {
  const Problem p = SetUp(graph, options);
  OptimizeReport report;
  report.edges = static_cast<int>(p.edge_ids.size());
  std::vector<Sim3> poses;
  for (const FrameNode& n : graph.nodes) poses.push_back(n.pose);

  double cost = ProblemCost(graph, poses, p);
  if (!std::isfinite(cost)) NonFinite(graph, poses, p);
  report.initial_cost = cost;
  report.final_cost = cost;
  report.cost_trace.push_back(cost);
  const int nv = static_cast<int>(p.var_nodes.size());
  if (nv == 0 || p.edge_ids.empty() || cost == 0.0) {
    if (options.level == OptimizeLevel::kKeyframes) PropagateFromKeyframes(graph, chunks);
    return report;
  }

  const int ne = static_cast<int>(p.edge_ids.size());
  std::vector<Matrix7d> ji(ne), jj(ne);
  std::vector<Vector7d> res(ne);
  std::vector<double> wts(ne);
  constexpr double kStep = 1e-6;

  auto linearize = [&](Eigen::SparseMatrix<double>* h, Eigen::VectorXd* g) {
    ParallelFor(ne, [&](int k) {
      const GraphEdge& e = graph.edges[p.edge_ids[k]];
      const Sim3& xi = poses[e.i];
      const Sim3& xj = poses[e.j];
      res[k] = Residual(e, xi, xj);
      wts[k] = Huber(e, res[k]).weight;
      for (int d = 0; d < 7; ++d) {
        Vector7d delta = Vector7d::Zero();
        delta(d) = kStep;
        if (p.var_of_node[e.i] >= 0) {
          ji[k].col(d) = (Residual(e, xi * Sim3::Exp(delta), xj) -
                          Residual(e, xi * Sim3::Exp(-delta), xj)) / (2.0 * kStep);
        }
        if (p.var_of_node[e.j] >= 0) {
          jj[k].col(d) = (Residual(e, xi, xj * Sim3::Exp(delta)) -
                          Residual(e, xi, xj * Sim3::Exp(-delta))) / (2.0 * kStep);
        }
      }
      if (options.freeze_scale) {
        ji[k].col(6).setZero();
        jj[k].col(6).setZero();
      }
    });
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<size_t>(ne) * 4 * 49);
    g->setZero(7 * nv);
    for (int k = 0; k < ne; ++k) {
      const GraphEdge& e = graph.edges[p.edge_ids[k]];
      const Vector7d w = wts[k] * e.information;
      const int vars[2] = {p.var_of_node[e.i], p.var_of_node[e.j]};
      const Matrix7d* jac[2] = {&ji[k], &jj[k]};
      for (int a = 0; a < 2; ++a) {
        if (vars[a] < 0) continue;
        const Matrix7d jtw = jac[a]->transpose() * w.asDiagonal();
        g->segment<7>(7 * vars[a]) += jtw * res[k];
        for (int b = 0; b < 2; ++b) {
          if (vars[b] < 0) continue;
          const Matrix7d block = jtw * *jac[b];
          for (int r = 0; r < 7; ++r) {
            for (int c = 0; c < 7; ++c) {
              triplets.emplace_back(7 * vars[a] + r, 7 * vars[b] + c, block(r, c));
            }
          }
        }
      }
    }
    if (options.freeze_scale) {
      for (int v = 0; v < nv; ++v) triplets.emplace_back(7 * v + 6, 7 * v + 6, 1.0);
    }
    h->resize(7 * nv, 7 * nv);
    h->setFromTriplets(triplets.begin(), triplets.end());
  };

  Eigen::SparseMatrix<double> h;
  Eigen::VectorXd g;
  linearize(&h, &g);
  double lambda = options.initial_lambda;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  bool pattern_ready = false;

  while (report.iterations < options.max_iterations) {
    ++report.iterations;
    Eigen::SparseMatrix<double> damped = h;
    for (int r = 0; r < damped.rows(); ++r) {
      damped.coeffRef(r, r) += lambda * std::max(h.coeff(r, r), 1e-9);
    }
    if (!pattern_ready) {
      solver.analyzePattern(damped);
      pattern_ready = true;
    }
    solver.factorize(damped);
    bool ok = solver.info() == Eigen::Success;
    Eigen::VectorXd step;
    if (ok) {
      step = solver.solve(-g);
      ok = step.allFinite();
    }
    if (!ok) {
      lambda *= 10.0;
      if (lambda > 1e12) break;
      continue;
    }
    std::vector<Sim3> trial = poses;
    for (int v = 0; v < nv; ++v) {
      const int node = p.var_nodes[v];
      trial[node] = poses[node] * Sim3::Exp(step.segment<7>(7 * v));
    }
    const double trial_cost = ProblemCost(graph, trial, p);
    if (!std::isfinite(trial_cost)) NonFinite(graph, trial, p);
    if (trial_cost < cost) {
      const double decrease = (cost - trial_cost) / cost;
      poses = std::move(trial);
      cost = trial_cost;
      report.cost_trace.push_back(cost);
      lambda = std::max(lambda / 3.0, 1e-12);
      if (decrease < options.min_relative_decrease || cost == 0.0) break;
      linearize(&h, &g);
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  report.final_cost = cost;
  for (int node : p.var_nodes) graph.nodes[node].pose = poses[node];
  if (options.level == OptimizeLevel::kKeyframes) PropagateFromKeyframes(graph, chunks);
  return report;
}

std::vector<LoopCandidate> DetectLoopClosures(const PoseGraph& graph, double radius,
                                              double min_gap) {
  if (!(radius > 0.0)) throw InvalidArgument("loop radius must be > 0");
  std::vector<int> kf;
  for (const FrameNode& n : graph.nodes) {
    if (n.keyframe) kf.push_back(n.frame);
  }
  const int n = static_cast<int>(kf.size());
  auto dist = [&](int a, int b) {
    return (graph.nodes[kf[a]].pose.translation - graph.nodes[kf[b]].pose.translation).norm();
  };
  std::vector<LoopCandidate> out;
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (graph.nodes[kf[b]].timestamp - graph.nodes[kf[a]].timestamp <= min_gap) continue;
      const double d = dist(a, b);
      if (d >= radius) continue;
      // Keep only local minima over neighbouring keyframes on both sides.
      bool minimum = true;
      for (const auto& [da, db] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
        const int a2 = a + da;
        const int b2 = b + db;
        if (a2 < 0 || b2 < 0 || a2 >= n || b2 >= n || a2 == b2) continue;
        const double d2 = dist(a2, b2);
        if (d2 < d || (d2 == d && (da < 0 || db < 0))) {
          minimum = false;
          break;
        }
      }
      if (minimum) out.push_back({kf[a], kf[b], d});
    }
  }
  return out;
}

LoopReport AddLoopClosures(PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks,
                           const LoopOptions& options) {
  LoopReport report;
  std::vector<LoopCandidate> candidates;
  if (options.detect) candidates = DetectLoopClosures(graph, options.radius, options.min_gap);
  std::erase_if(candidates, [&](const LoopCandidate& c) {
    return HasEdge(graph.edges, c.a, c.b, EdgeKind::kLoop);
  });

  // Lap closure: the last frame revisits the opening stretch. Try each of
  // the opening frames with an identity-pose hypothesis.
  const int last = static_cast<int>(graph.nodes.size()) - 1;
  bool lap_present = false;
  for (const GraphEdge& e : graph.edges) {
    if (e.kind == EdgeKind::kLoop && std::max(e.i, e.j) == last &&
        std::min(e.i, e.j) <= options.lap_window) {
      lap_present = true;
    }
  }
  const bool try_lap = options.closed_circuit && !lap_present && last > options.lap_window;
  const int lap_frames = try_lap ? std::min(options.lap_window, last - 1) + 1 : 0;
  const int offsets = static_cast<int>(options.lap_offsets.size());
  const int lap_count = lap_frames * offsets;

  const int nc = static_cast<int>(candidates.size());
  report.candidates = nc + (lap_count > 0 ? 1 : 0);
  std::vector<Measurement> results(nc + lap_count);
  ParallelFor(nc + lap_count, [&](int k) {
    if (k < nc) {
      results[k] = MeasureRelative(graph, chunks, candidates[k].a, candidates[k].b, options.measure);
    } else {
      const int b = (k - nc) / offsets;
      const double offset = options.lap_offsets[(k - nc) % offsets];
      const double unit = graph.nodes[last].pose.scale;
      const double s = graph.nodes[b].pose.scale / unit;
      results[k] = MeasureRelative(graph, chunks, last, b,
                                   Sim3(s, Rotation(), Eigen::Vector3d(0.0, 0.0, offset / unit)),
                                   options.measure);
    }
  });

  std::vector<GraphEdge> accepted;
  auto accept = [&](int a, int b, const Measurement& m) {
    GraphEdge e;
    e.i = a;
    e.j = b;
    e.kind = EdgeKind::kLoop;
    e.measurement = m.relative;
    e.information = options.weights.Diagonal() * m.weight;
    e.huber = graph.options.huber;
    e.matches = m.matches;
    accepted.push_back(e);
  };
  for (int k = 0; k < nc; ++k) {
    if (results[k].accepted) accept(candidates[k].a, candidates[k].b, results[k]);
  }
  int best = -1;
  for (int k = nc; k < nc + lap_count; ++k) {
    if (!results[k].accepted) continue;
    if (best < 0 || results[k].rms < results[best].rms) best = k;
  }
  if (best >= 0) accept(last, (best - nc) / offsets, results[best]);

  for (const GraphEdge& e : accepted) {
    graph.nodes[e.i].keyframe = true;
    graph.nodes[e.j].keyframe = true;
    graph.edges.push_back(e);
  }
  report.accepted = static_cast<int>(accepted.size());
  if (!accepted.empty()) RebuildKeyframeLinks(graph, chunks);
  return report;
}

namespace {

double AteProxy(const PoseGraph& graph) {
  double sum = 0.0;
  int n = 0;
  for (const GraphEdge& e : graph.edges) {
    if (e.kind == EdgeKind::kIntra) continue;
    const Vector7d r = Residual(e, graph.nodes[e.i].pose, graph.nodes[e.j].pose);
    sum += r.segment<3>(3).squaredNorm() * graph.nodes[e.i].pose.scale * graph.nodes[e.i].pose.scale;
    ++n;
  }
  return n > 0 ? std::sqrt(sum / n) : 0.0;
}

StageDiagnostics Stage(int round, const std::string& name, const OptimizeReport& r,
                       const PoseGraph& graph) {
  StageDiagnostics d;
  d.round = round;
  d.stage = name;
  d.edges = r.edges;
  d.initial_cost = r.initial_cost;
  d.final_cost = r.final_cost;
  d.iterations = r.iterations;
  d.ate_proxy = AteProxy(graph);
  return d;
}

}  // namespace

std::vector<StageDiagnostics> AlternatingRefinement(PoseGraph& graph,
                                                    const std::vector<ChunkReconstruction>& chunks,
                                                    const Schedule& schedule,
                                                    const CurvatureProfile* curvature) {
  if (schedule.rounds < 0 || schedule.local_iterations < 0 || schedule.global_iterations < 0 ||
      schedule.cross_edges < 0 || schedule.keyframe_stride < 1) {
    throw InvalidArgument("invalid refinement schedule");
  }
  std::vector<StageDiagnostics> diagnostics;
  if (schedule.rounds == 0) return diagnostics;
  SelectKeyframes(graph, chunks, schedule.keyframe_stride, curvature);

  OptimizeOptions local;
  local.level = OptimizeLevel::kAllFrames;
  local.kinds = {EdgeKind::kIntra};
  local.hold_keyframes = true;
  local.max_iterations = schedule.local_iterations;

  OptimizeOptions global;
  global.level = OptimizeLevel::kKeyframes;
  global.max_iterations = schedule.global_iterations;

  const int nchunks = static_cast<int>(chunks.size());
  for (int round = 0; round < schedule.rounds; ++round) {
    diagnostics.push_back(Stage(round, "local", Optimize(graph, chunks, local), graph));

    std::vector<std::vector<GraphEdge>> sampled(nchunks);
    std::vector<SamplingReport> reports(nchunks);
    if (nchunks >= 2 && schedule.cross_edges > 0) {
      ParallelFor(nchunks, [&](int k) {
        const uint64_t seed = SplitMix(schedule.seed ^ SplitMix(static_cast<uint64_t>(round) << 32 |
                                                               static_cast<uint64_t>(k)));
        reports[k] = SampleCrossEdges(graph, chunks, k, schedule.cross_edges, seed, &sampled[k],
                                      schedule.cross);
      });
    }
    int cross_accepted = 0;
    int cross_rejected = 0;
    for (int k = 0; k < nchunks; ++k) {
      cross_rejected += reports[k].rejected;
      for (const GraphEdge& e : sampled[k]) {
        if (HasEdge(graph.edges, e.i, e.j, EdgeKind::kCross)) continue;
        graph.edges.push_back(e);
        ++cross_accepted;
      }
    }
    const LoopReport loops = AddLoopClosures(graph, chunks, schedule.loops);

    // Large loop corrections are first taken up by rotation and translation
    // alone; a free scale would otherwise shrink the circuit to close it.
    OptimizeOptions rigid = global;
    rigid.freeze_scale = true;
    const OptimizeReport first = Optimize(graph, chunks, rigid);
    OptimizeReport second = Optimize(graph, chunks, global);
    second.initial_cost = first.initial_cost;
    second.iterations += first.iterations;
    StageDiagnostics d = Stage(round, "global", second, graph);
    d.cross_accepted = cross_accepted;
    d.cross_rejected = cross_rejected;
    d.loops = graph.CountEdges(EdgeKind::kLoop);
    (void)loops;
    diagnostics.push_back(d);
    if (!schedule.accumulate_cross_edges) {
      std::erase_if(graph.edges, [](const GraphEdge& e) { return e.kind == EdgeKind::kCross; });
    }
  }
  diagnostics.push_back(Stage(schedule.rounds, "polish", Optimize(graph, chunks, local), graph));
  return diagnostics;
}

}  // namespace trackstitch
