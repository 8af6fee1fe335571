#pragma once

// Pose-graph refinement over all frames of a stitched sequence.
//
// Nodes are Sim(3): X_f maps camera-f coordinates, expressed in the units
// of the chunk that owns frame f (the earliest chunk containing it), into
// the global frame. Edges carry the expected relative transform
// Z_ij ~ X_i^-1 X_j; the residual is log(Z^-1 X_i^-1 X_j) ordered
// [omega, u, sigma].
//
// This is a relative-pose graph, not a reprojection bundle adjustment:
// intra-chunk edges come from the chunk-local poses, cross-chunk and loop
// edges from ICP between per-frame point maps.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "trackstitch/geometry.h"
#include "trackstitch/preprocess.h"
#include "trackstitch/stitch.h"
#include "trackstitch/types.h"

namespace trackstitch {

enum class EdgeKind { kIntra, kCross, kLoop };
std::string EdgeKindName(EdgeKind kind);

struct FrameNode {
  int frame = 0;
  int chunk = 0;  // owning chunk index (position in the plan)
  double timestamp = 0.0;
  Sim3 pose;
  bool keyframe = false;
  bool fixed = false;
};

struct GraphEdge {
  int i = 0;
  int j = 0;
  Sim3 measurement;  // expected X_i^-1 X_j
  Vector7d information = Vector7d::Ones();  // diagonal, [rot, trans, scale]
  EdgeKind kind = EdgeKind::kIntra;
  double huber = 1.0;  // metres
  int chunk = -1;      // intra: source chunk index
  bool keyframe_link = false;  // intra edge between consecutive keyframes
  int matches = 0;             // cross/loop: ICP support
};

struct EdgeWeights {
  double rot = 1.0 / (0.002 * 0.002);
  double trans = 1.0 / (0.05 * 0.05);
  double scale = 1.0 / (0.01 * 0.01);
  Vector7d Diagonal() const;
};

struct GraphOptions {
  int skip_stride = 5;
  EdgeWeights intra;
  double huber = 1.0;  // metres
};

struct PoseGraph {
  std::vector<FrameNode> nodes;  // node index == global frame index
  std::vector<GraphEdge> edges;
  // Per chunk: global -> chunk-unit factor implied by the initial gauges,
  // used to express chunk-local relative poses in owner-chunk units.
  std::vector<double> chunk_scales;
  GraphOptions options;

  int num_keyframes() const;
  int CountEdges(EdgeKind kind) const;
};

// Nodes from explicit initial poses (one per frame; camera units of the
// owning chunk). chunk_scales[k] is chunk k's units-to-global factor.
PoseGraph BuildGraph(std::vector<Sim3> initial, std::vector<double> chunk_scales,
                     const std::vector<ChunkReconstruction>& chunks, const ChunkPlan& plan,
                     const GraphOptions& options = {});

// Nodes from the stitched gauges: X_f = gauge[owner] * T_owner(f).
PoseGraph BuildGraph(const StitchResult& stitch,
                     const std::vector<ChunkReconstruction>& chunks, const ChunkPlan& plan,
                     const GraphOptions& options = {});

// Nodes from a rigid global trajectory (one sample per frame, frame order).
// Each chunk's scale is the ratio of trajectory to chunk-local path length.
PoseGraph BuildGraphFromTrajectory(const Trajectory& trajectory,
                                   const std::vector<ChunkReconstruction>& chunks,
                                   const ChunkPlan& plan, const GraphOptions& options = {});

Trajectory GraphTrajectory(const PoseGraph& graph);

// Per global frame: camera -> global similarity in chunk `chunk`'s units
// (empty for frames outside the chunk). Feeds fusion's ToGlobal.
std::vector<std::optional<Sim3>> ChunkFramePoses(const PoseGraph& graph,
                                                 const std::vector<ChunkReconstruction>& chunks,
                                                 int chunk);

// Expected X_i^-1 X_j from chunk-local poses of chunk `chunk`.
Sim3 ChunkRelative(const PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks,
                   int chunk, int i, int j);

// Marks every stride-th frame, the first/last frame of each chunk, the
// fixed node and local maxima of |curvature| above `curvature_threshold`.
// Rebuilds the keyframe-link intra edges (information divided by the gap).
void SelectKeyframes(PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks,
                     int stride, const CurvatureProfile* curvature = nullptr,
                     double curvature_threshold = 0.002);

// Rebuilds keyframe-link edges after keyframe flags change.
void RebuildKeyframeLinks(PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks);

struct MeasureOptions {
  std::vector<double> radii = {0.5};  // association radius per stage, metres
  int iterations = 5;                 // per stage
  int min_matches = 50;
  double min_overlap = 0.3;
  double max_rms = std::numeric_limits<double>::infinity();  // metres
  int full_weight_matches = 200;
};

struct Measurement {
  bool accepted = false;
  std::string reason;  // "too-few-matches", "low-overlap", "high-residual"
  Sim3 relative;       // b -> a
  int matches = 0;
  double overlap = 0.0;
  double rms = 0.0;     // metres
  double weight = 0.0;  // in (0, 1]
};

// ICP between the point maps of frames a and b, starting from `initial`
// (b camera -> a camera), mutual nearest neighbours, Umeyama with scale.
Measurement MeasureRelative(const PoseGraph& graph,
                            const std::vector<ChunkReconstruction>& chunks, int a, int b,
                            const Sim3& initial, const MeasureOptions& options = {});
// Same, starting from the current estimates X_a^-1 X_b.
Measurement MeasureRelative(const PoseGraph& graph,
                            const std::vector<ChunkReconstruction>& chunks, int a, int b,
                            const MeasureOptions& options = {});

struct CrossEdgeOptions {
  double sigma = 25.0;  // metres
  EdgeWeights weights{1.0 / (0.001 * 0.001), 1.0 / (0.02 * 0.02), 1.0 / (0.005 * 0.005)};
  MeasureOptions measure;
};

struct SamplingReport {
  int requested = 0;
  int accepted = 0;
  int rejected = 0;
  int attempts = 0;
  std::vector<std::string> warnings;
};

// Samples up to `count` keyframe pairs (one endpoint in chunk index
// `chunk`, the other in another chunk) with probability proportional to
// exp(-d / sigma); accepted pairs become cross edges (appended to `out`).
SamplingReport SampleCrossEdges(const PoseGraph& graph,
                                const std::vector<ChunkReconstruction>& chunks, int chunk,
                                int count, uint64_t seed, std::vector<GraphEdge>* out,
                                const CrossEdgeOptions& options = {});

enum class OptimizeLevel { kKeyframes, kAllFrames };

struct OptimizeOptions {
  int max_iterations = 50;
  OptimizeLevel level = OptimizeLevel::kAllFrames;
  std::vector<EdgeKind> kinds = {EdgeKind::kIntra, EdgeKind::kCross, EdgeKind::kLoop};
  bool hold_keyframes = false;  // all-frames level: keyframes stay put
  bool freeze_scale = false;    // optimize rotation and translation only
  double initial_lambda = 1e-4;
  double min_relative_decrease = 1e-9;
};

struct OptimizeReport {
  int edges = 0;
  int iterations = 0;  // LM iterations (accepted or not)
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<double> cost_trace;  // initial, then after each accepted step
};

double GraphCost(const PoseGraph& graph, const OptimizeOptions& options);

// Levenberg-Marquardt with Huber-robustified residuals. At keyframe level
// non-keyframes are re-anchored afterwards on their nearest preceding
// keyframe in the owning chunk. Throws kNumerical on non-finite cost.
OptimizeReport Optimize(PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks,
                        const OptimizeOptions& options);

// Re-anchors every non-keyframe on its nearest preceding keyframe in the
// owning chunk using the chunk-local relative pose.
void PropagateFromKeyframes(PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks);

struct LoopCandidate {
  int a = 0;
  int b = 0;
  double distance = 0.0;
};

// Keyframe pairs closer than `radius` whose timestamps differ by more than
// `min_gap`, thinned to local minima of the pair distance.
std::vector<LoopCandidate> DetectLoopClosures(const PoseGraph& graph, double radius,
                                              double min_gap);

struct LoopOptions {
  bool detect = true;
  double radius = 20.0;   // metres
  double min_gap = 20.0;  // seconds
  // The sequence is one lap of a closed circuit: validate the last frame
  // against the opening frames regardless of the current end-point gap.
  bool closed_circuit = false;
  int lap_window = 24;  // frames searched at the start of the sequence
  // Forward offsets (metres) tried with each opening frame.
  std::vector<double> lap_offsets = {-0.5, -0.25, 0.0,  0.25, 0.5,  0.75,
                                     1.0,  1.25,  1.5,  1.75, 2.0};
  EdgeWeights weights{1.0 / (0.001 * 0.001), 1.0 / (0.02 * 0.02), 1.0 / (0.005 * 0.005)};
  MeasureOptions measure{{0.5}, 5, 50, 0.3, 0.2, 200};
};

struct LoopReport {
  int candidates = 0;
  int accepted = 0;
};

// Validates candidates (and the lap closure when enabled) and appends loop
// edges that are not already present. New endpoints become keyframes.
LoopReport AddLoopClosures(PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks,
                           const LoopOptions& options);

struct Schedule {
  int rounds = 5;
  int local_iterations = 20;
  int global_iterations = 100;
  int cross_edges = 20;  // per chunk per round
  int keyframe_stride = 10;
  uint64_t seed = 42;
  bool accumulate_cross_edges = false;
  CrossEdgeOptions cross;
  LoopOptions loops;
};

struct StageDiagnostics {
  int round = 0;
  std::string stage;  // "local", "global" or "polish"
  int edges = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  double ate_proxy = 0.0;  // RMS translation residual of cross/loop edges
  int cross_accepted = 0;
  int cross_rejected = 0;
  int loops = 0;
};

std::vector<StageDiagnostics> AlternatingRefinement(
    PoseGraph& graph, const std::vector<ChunkReconstruction>& chunks,
    const Schedule& schedule, const CurvatureProfile* curvature = nullptr);

}  // namespace trackstitch
