#include "cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "plot.h"
#include "trackstitch/chunkio.h"
#include "trackstitch/error.h"
#include "trackstitch/eval.h"
#include "trackstitch/fusion.h"
#include "trackstitch/posegraph.h"
#include "trackstitch/preprocess.h"
#include "trackstitch/sim.h"
#include "trackstitch/stitch.h"

namespace trackstitch {
namespace {

namespace fs = std::filesystem;

struct SimulateArgs {
  std::string track = "monaco-like";
  double fps = 24.0;
  double speed = 40.0;
  double turn_speed = 0.0;  // 0: same as speed
  double laps = 1.0;
  double chunk_seconds = 5.0;
  int overlap = 1;
  std::string noise = "none";
  uint64_t seed = 42;
  std::string out_dir;
};

struct PlanArgs {
  std::string manifest;
  int frames = 0;
  double fps = 0.0;
  int width = 512;
  int height = 144;
  double chunk_seconds = 5.0;
  int overlap = 1;
  double straight_threshold = 0.002;
  int search_window = 48;
  std::string mask = "none";
  std::string traj;
  std::string out;
};

struct StitchArgs {
  std::string manifest;
  std::string scale_mode = "depth";
  std::string out;
  std::string gauges;
};

struct RefineArgs {
  std::string manifest;
  std::string traj;
  int rounds = 5;
  int cross_edges = 20;
  int keyframe_stride = 10;
  uint64_t seed = 42;
  int local_iterations = 20;
  int global_iterations = 100;
  bool closed_circuit = false;
  bool accumulate_cross_edges = false;
  double loop_radius = 20.0;
  double loop_min_gap = 20.0;
  double sigma = 25.0;
  double huber = 1.0;
  std::string out;
  std::string diagnostics;
};

struct FuseArgs {
  std::string manifest;
  std::string gauges;
  std::string traj;
  double voxel = 0.25;
  double min_conf = 0.3;
  bool ascii = false;
  std::string out;
};

struct EvalArgs {
  std::string est;
  std::string gt;
  std::string align = "sim3";
  int delta = 24;
  double max_dt = 0.01;
  std::string cloud;
  std::string track;
  std::string out;
};

struct PlotArgs {
  std::vector<std::string> traj;
  std::vector<std::string> labels;
  std::string gt;
  std::string cloud;
  std::string align = "sim3";
  std::string title;
  int width = 800;
  std::string out;
};

void WriteText(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot write '" + path.string() + "'");
  file << text;
}

// ---------------------------------------------------------------------------
// Stages

void RunSimulate(const SimulateArgs& a, std::ostream& out) {
  Scenario sc;
  sc.track = a.track;
  sc.fps = a.fps;
  sc.speed = SpeedProfile::SlowInTurns(a.speed, a.turn_speed > 0.0 ? a.turn_speed : a.speed);
  sc.laps = a.laps;
  sc.chunk_seconds = a.chunk_seconds;
  sc.overlap = a.overlap;
  sc.noise = NoiseModelByName(a.noise);
  sc.noise.seed = a.seed;
  const SimulatedRun run = Simulate(sc);

  const fs::path dir(a.out_dir);
  fs::create_directories(dir / "chunks");
  Manifest m;
  m.video = run.meta;
  m.plan = run.plan;
  m.ground_truth = "gt.tum";
  m.track = "track.txt";
  size_t points = 0;
  std::vector<Sim3> true_gauges;
  for (size_t k = 0; k < run.synth.chunks.size(); ++k) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "chunks/chunk_%03zu", k);
    ChunkPayload payload{std::string(stem) + ".frames", std::string(stem) + ".ply"};
    WriteChunk(dir, run.synth.chunks[k], payload);
    m.payloads.push_back(payload);
    for (const FrameRecord& f : run.synth.chunks[k].frames) points += f.points.size();
    true_gauges.push_back(run.synth.world_to_chunk[k].Inverse());
  }
  WriteManifest(dir / "manifest.txt", m);
  WriteTrajectory(dir / "gt.tum", run.ground_truth);
  WriteTrackSpec((dir / "track.txt").string(), run.track.spec());
  WriteGauges((dir / "gt_gauges.txt").string(), true_gauges);
  out << "simulate: track=" << a.track << " length_m=" << FormatDouble(run.track.length())
      << " frames=" << run.meta.num_frames << " chunks=" << run.plan.chunks.size()
      << " points=" << points << " noise=" << a.noise << " seed=" << a.seed << "\n";
}

void RunPlan(const PlanArgs& a, std::ostream& out) {
  VideoMeta meta;
  MaskSpec mask;
  if (!a.manifest.empty()) {
    const Manifest m = ReadManifest(a.manifest);
    meta = m.video;
  } else {
    if (a.frames <= 0 || a.fps <= 0.0) {
      throw InvalidArgument("plan needs --manifest or both --frames and --fps");
    }
    meta = VideoMeta{a.frames, a.fps, a.width, a.height};
  }
  meta.Validate();
  mask = ParseMaskArgument(a.mask, meta);
  ChunkPlan plan;
  bool turn_aware = false;
  if (!a.traj.empty()) {
    const Trajectory traj = ReadTrajectory(a.traj);
    if (static_cast<int>(traj.size()) != meta.num_frames) {
      throw DataError("'" + a.traj + "' has " + std::to_string(traj.size()) +
                      " samples, expected " + std::to_string(meta.num_frames));
    }
    TurnAwareOptions opts;
    opts.target_seconds = a.chunk_seconds;
    opts.overlap_frames = a.overlap;
    opts.straight_threshold = a.straight_threshold;
    opts.search_window = a.search_window;
    plan = PlanTurnAwareChunks(meta, CurvatureFromTrajectory(traj), opts);
    turn_aware = true;
  } else {
    plan = PlanFixedChunks(meta, a.chunk_seconds, a.overlap);
  }
  std::string table = "# chunk_id start_frame end_frame length flagged\n";
  for (const ChunkSpec& c : plan.chunks) {
    table += std::to_string(c.chunk_id) + " " + std::to_string(c.start_frame) + " " +
             std::to_string(c.end_frame) + " " + std::to_string(c.length()) + " " +
             (c.boundary_flagged ? "1" : "0") + "\n";
  }
  if (!a.out.empty()) WriteText(a.out, table);
  out << table;
  out << "plan: frames=" << meta.num_frames << " chunks=" << plan.chunks.size()
      << " overlap=" << plan.overlap_frames << " turn_aware=" << (turn_aware ? 1 : 0)
      << " flagged=" << plan.num_flagged() << " mask=" << MaskModeName(mask.mode)
      << " masked_pixels=" << mask.MaskedPixelCount() << "\n";
}

void RunStitch(const StitchArgs& a, std::ostream& out) {
  const Manifest m = ReadManifest(a.manifest);
  const auto chunks = ReadAllChunks(a.manifest, m);
  const StitchResult r = StitchChunks(chunks, m.plan, ParseScaleMode(a.scale_mode));
  WriteTrajectory(a.out, r.trajectory);
  if (!a.gauges.empty()) WriteGauges(a.gauges, r.gauges);
  double worst = 0.0;
  int warnings = 0;
  for (const SeamDiagnostics& s : r.seams) {
    worst = std::max(worst, s.residual);
    for (const std::string& w : s.warnings) {
      out << "warning: seam " << s.prev_chunk << "-" << s.next_chunk << ": " << w << "\n";
      ++warnings;
    }
  }
  out << "stitch: chunks=" << chunks.size() << " seams=" << r.seams.size()
      << " scale_mode=" << a.scale_mode << " max_seam_residual=" << FormatDouble(worst)
      << " warnings=" << warnings << " endpoint_gap=" << FormatDouble(EndpointGap(r.trajectory))
      << "\n";
}

void RunRefine(const RefineArgs& a, std::ostream& out) {
  const Manifest m = ReadManifest(a.manifest);
  const auto chunks = ReadAllChunks(a.manifest, m);
  const Trajectory input = ReadTrajectory(a.traj);
  if (a.rounds < 0 || a.cross_edges < 0 || a.keyframe_stride < 1 || a.local_iterations < 0 ||
      a.global_iterations < 0) {
    throw InvalidArgument("schedule counts must be >= 0 and --keyframe-stride >= 1");
  }
  if (a.rounds == 0) {
    // Nothing to refine: pass the input through untouched.
    if (fs::path(a.out) != fs::path(a.traj)) {
      fs::copy_file(a.traj, a.out, fs::copy_options::overwrite_existing);
    }
    if (!a.diagnostics.empty()) {
      WriteText(a.diagnostics, "# round stage edges initial_cost final_cost iterations\n");
    }
    out << "refine: rounds=0, trajectory unchanged\n";
    return;
  }
  GraphOptions gopts;
  gopts.huber = a.huber;
  PoseGraph graph = BuildGraphFromTrajectory(input, chunks, m.plan, gopts);
  Schedule s;
  s.rounds = a.rounds;
  s.local_iterations = a.local_iterations;
  s.global_iterations = a.global_iterations;
  s.cross_edges = a.cross_edges;
  s.keyframe_stride = a.keyframe_stride;
  s.seed = a.seed;
  s.accumulate_cross_edges = a.accumulate_cross_edges;
  s.cross.sigma = a.sigma;
  s.loops.radius = a.loop_radius;
  s.loops.min_gap = a.loop_min_gap;
  s.loops.closed_circuit = a.closed_circuit;
  const CurvatureProfile curvature = CurvatureFromTrajectory(input);
  const auto diag = AlternatingRefinement(graph, chunks, s, &curvature);
  WriteTrajectory(a.out, GraphTrajectory(graph));

  std::string text = "# round stage edges initial_cost final_cost iterations\n";
  int loops = 0;
  int accepted = 0;
  int rejected = 0;
  for (const StageDiagnostics& d : diag) {
    text += std::to_string(d.round) + " " + d.stage + " " + std::to_string(d.edges) + " " +
            FormatDouble(d.initial_cost) + " " + FormatDouble(d.final_cost) + " " +
            std::to_string(d.iterations) + "\n";
    loops = std::max(loops, d.loops);
    accepted += d.cross_accepted;
    rejected += d.cross_rejected;
  }
  if (!a.diagnostics.empty()) WriteText(a.diagnostics, text);
  out << "refine: rounds=" << a.rounds << " keyframes=" << graph.num_keyframes()
      << " cross_accepted=" << accepted << " cross_rejected=" << rejected
      << " loop_edges=" << graph.CountEdges(EdgeKind::kLoop)
      << " final_cost=" << FormatDouble(diag.empty() ? 0.0 : diag.back().final_cost)
      << " endpoint_gap=" << FormatDouble(EndpointGap(GraphTrajectory(graph))) << "\n";
}

void RunFuse(const FuseArgs& a, std::ostream& out) {
  const Manifest m = ReadManifest(a.manifest);
  const auto chunks = ReadAllChunks(a.manifest, m);
  const std::vector<Sim3> gauges = ReadGauges(a.gauges);
  if (gauges.size() != chunks.size()) {
    throw DataError("'" + a.gauges + "' has " + std::to_string(gauges.size()) +
                    " gauges for " + std::to_string(chunks.size()) + " chunks");
  }
  std::optional<PoseGraph> graph;
  if (!a.traj.empty()) {
    graph = BuildGraphFromTrajectory(ReadTrajectory(a.traj), chunks, m.plan);
  }
  std::vector<CloudPoint> all;
  std::vector<std::string> warnings;
  for (size_t k = 0; k < chunks.size(); ++k) {
    std::vector<CloudPoint> pts;
    if (graph) {
      const FramePoses poses = ChunkFramePoses(*graph, chunks, static_cast<int>(k));
      pts = ToGlobal(chunks[k], gauges[k], &poses, &warnings);
    } else {
      pts = ToGlobal(chunks[k], gauges[k]);
    }
    pts = MaskPoints(m.mask, pts);
    all.insert(all.end(), pts.begin(), pts.end());
  }
  const FusedCloud fused = Fuse(all, a.voxel, a.min_conf);
  PointCloud cloud;
  cloud.points = fused.points;
  cloud.has_confidence = true;
  cloud.has_frames = true;
  cloud.has_chunks = true;
  WritePointCloud(a.out, cloud, a.ascii ? PlyFormat::kAscii : PlyFormat::kBinaryLittleEndian);
  for (const std::string& w : warnings) out << "warning: " << w << "\n";
  out << "fuse: input_points=" << all.size() << " fused_points=" << fused.points.size()
      << " voxel=" << FormatDouble(a.voxel) << " min_conf=" << FormatDouble(a.min_conf) << "\n";
}

std::string EvaluateFiles(const EvalArgs& a, std::ostream& out) {
  const Trajectory est = ReadTrajectory(a.est);
  const Trajectory gt = ReadTrajectory(a.gt);
  const TrajectoryMetrics metrics = Evaluate(est, gt, ParseAlignment(a.align), a.delta, a.max_dt);
  std::string record = FormatMetricsRecord(metrics);
  if (!a.cloud.empty()) {
    if (a.track.empty()) throw InvalidArgument("--cloud needs --track");
    const std::string spec = a.track.find(':') == std::string::npos &&
                                     a.track != "monaco-like" && a.track != "square"
                                 ? "file:" + a.track
                                 : a.track;
    const TrackModel track = TrackModel::Make(TrackSpecByName(spec));
    const PointCloud cloud = ReadPointCloud(a.cloud);
    if (cloud.points.empty()) throw DataError("'" + a.cloud + "' has no points");
    record += " cloud_error=" + FormatDouble(CloudError(cloud.points, track, metrics.ate.alignment));
  }
  out << record << "\n" << FormatMetricsSummary(metrics);
  if (!a.out.empty()) WriteText(a.out, record + "\n");
  return record;
}

void RunPlot(const PlotArgs& a, std::ostream& out) {
  std::vector<PlotSeries> series;
  for (size_t k = 0; k < a.traj.size(); ++k) {
    std::string label = k < a.labels.size() ? a.labels[k] : fs::path(a.traj[k]).stem().string();
    series.push_back({label, ReadTrajectory(a.traj[k])});
  }
  std::optional<Trajectory> gt;
  if (!a.gt.empty()) gt = ReadTrajectory(a.gt);
  std::vector<CloudPoint> cloud;
  if (!a.cloud.empty()) cloud = ReadPointCloud(a.cloud).points;
  PlotOptions opts;
  opts.title = a.title;
  opts.width = a.width;
  opts.align = ParseAlignment(a.align);
  const PlotResult r = RenderPlot(series, gt, cloud, opts);
  WriteText(a.out, r.svg);
  out << "plot: " << a.out << " endpoint_gap=" << FormatDouble(r.endpoint_gap) << "\n";
}

// ---------------------------------------------------------------------------
// Argument plumbing

// Scalar options keep the last occurrence, so flags placed after values
// read from a config file override them.
void TakeLast(CLI::App* app) {
  for (CLI::Option* o : app->get_options()) {
    if (o->get_items_expected_max() == 1) o->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

std::string Unquote(std::string v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    v = v.substr(1, v.size() - 2);
  }
  return v;
}

std::string TrimSpace(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// key = value lines (flag names without dashes; '_' and '-' interchangeable)
// become --key=value arguments. Array values [a, b] repeat the flag.
std::vector<std::string> ConfigArguments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::FileError::Missing(path);
  std::vector<std::string> args;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = TrimSpace(raw.substr(0, raw.find('#')));
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CLI::ConversionError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = TrimSpace(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string value = TrimSpace(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '[' && value.back() == ']') {
      std::stringstream items(value.substr(1, value.size() - 2));
      std::string item;
      while (std::getline(items, item, ',')) {
        args.push_back("--" + key + "=" + Unquote(TrimSpace(item)));
      }
    } else {
      args.push_back("--" + key + "=" + Unquote(value));
    }
  }
  return args;
}

// Moves the values of `--config FILE` in front of the command-line flags.
std::vector<std::string> ExpandConfig(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::vector<std::string> from_file;
  for (size_t i = 1; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      continue;
    }
    const auto more = ConfigArguments(path);
    from_file.insert(from_file.end(), more.begin(), more.end());
  }
  std::vector<std::string> out{args[0]};
  out.insert(out.end(), from_file.begin(), from_file.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

void WriteRunManifest(const fs::path& path, const CLI::App& sub) {
  std::string text = "# trackstitch run manifest\n";
  text += "# reproduce with: trackstitch " + sub.get_name() + " --config " +
          path.filename().string() + "\n";
  text += "# command: " + sub.get_name() + "\n";
  std::stringstream lines(sub.config_to_str(true, false));
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("config=", 0) == 0 || line.rfind("run-manifest=", 0) == 0) continue;
    text += line + "\n";
  }
  WriteText(path, text);
}

void AddRefineSchedule(CLI::App* c, RefineArgs& a) {
  c->add_option("--rounds", a.rounds, "Alternating refinement rounds")->capture_default_str();
  c->add_option("--cross-edges", a.cross_edges, "Cross edges sampled per chunk per round")
      ->capture_default_str();
  c->add_option("--keyframe-stride", a.keyframe_stride, "Keyframe stride (frames)")
      ->capture_default_str();
  c->add_option("--local-iterations", a.local_iterations, "LM iterations, local stage")
      ->capture_default_str();
  c->add_option("--global-iterations", a.global_iterations, "LM iterations, global stage")
      ->capture_default_str();
  c->add_option("--loop-radius", a.loop_radius, "Loop-closure search radius (m)")
      ->capture_default_str();
  c->add_option("--loop-min-gap", a.loop_min_gap, "Minimum time between loop frames (s)")
      ->capture_default_str();
  c->add_option("--sigma", a.sigma, "Cross-edge proximity scale (m)")->capture_default_str();
  c->add_option("--huber", a.huber, "Huber threshold (m)")->capture_default_str();
  c->add_flag("--accumulate-cross-edges", a.accumulate_cross_edges,
              "Keep cross edges across rounds instead of removing them");
}

}  // namespace

int RunCli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"trackstitch: chunked monocular reconstruction stitching and refinement",
               "trackstitch"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.footer("Environment: TRACKSTITCH_THREADS caps worker threads.\n"
             "Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.\n"
             "Every subcommand accepts --config FILE (key = value, flag names without dashes);\n"
             "flags on the command line override the file.");

  std::string run_manifest;
  std::string config_path;  // consumed by ExpandConfig
  auto common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "Read flag values from a key = value file");
    c->add_option("--run-manifest", run_manifest,
                  "Where to echo the effective configuration (default next to the output)");
  };

  SimulateArgs sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "Simulate a circuit and per-chunk reconstructions");
  c_sim->add_option("--track", sim.track, "monaco-like | square | file:<spec>")->capture_default_str();
  c_sim->add_option("--fps", sim.fps, "Frame rate")->capture_default_str();
  c_sim->add_option("--speed", sim.speed, "Speed on straights (m/s)")->capture_default_str();
  c_sim->add_option("--turn-speed", sim.turn_speed, "Speed on arcs (m/s, 0: same as --speed)")
      ->capture_default_str();
  c_sim->add_option("--laps", sim.laps, "Laps driven")->capture_default_str();
  c_sim->add_option("--chunk-seconds", sim.chunk_seconds, "Chunk length (s)")->capture_default_str();
  c_sim->add_option("--overlap", sim.overlap, "Frames shared by consecutive chunks")
      ->capture_default_str();
  c_sim->add_option("--noise", sim.noise, "none | mild | moderate | severe | <key=value file>")
      ->capture_default_str();
  c_sim->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  c_sim->add_option("--out-dir", sim.out_dir, "Output directory")->required();
  common(c_sim);

  PlanArgs plan;
  CLI::App* c_plan = app.add_subcommand("plan", "Plan chunk boundaries");
  c_plan->add_option("--manifest", plan.manifest, "Take video metadata from a manifest")
      ->check(CLI::ExistingFile);
  c_plan->add_option("--frames", plan.frames, "Number of frames");
  c_plan->add_option("--fps", plan.fps, "Frame rate");
  c_plan->add_option("--width", plan.width, "Image width (px)")->capture_default_str();
  c_plan->add_option("--height", plan.height, "Image height (px)")->capture_default_str();
  c_plan->add_option("--chunk-seconds", plan.chunk_seconds, "Target chunk length (s)")
      ->capture_default_str();
  c_plan->add_option("--overlap", plan.overlap, "Frames shared by consecutive chunks")
      ->capture_default_str();
  c_plan->add_option("--straight-threshold", plan.straight_threshold,
                     "Max |yaw rate| (rad/frame) for a boundary frame")
      ->capture_default_str();
  c_plan->add_option("--search-window", plan.search_window, "Boundary search window (frames)")
      ->capture_default_str();
  c_plan->add_option("--mask", plan.mask, "none | bottom:F | top:F | poly:<file>")
      ->capture_default_str();
  c_plan->add_option("--traj", plan.traj, "Trajectory for turn-aware planning")
      ->check(CLI::ExistingFile);
  c_plan->add_option("--out", plan.out, "Write the chunk table here");
  common(c_plan);

  StitchArgs st;
  CLI::App* c_st = app.add_subcommand("stitch", "Stitch chunks through their shared frames");
  c_st->add_option("--manifest", st.manifest, "Chunk manifest")->required()->check(CLI::ExistingFile);
  c_st->add_option("--scale-mode", st.scale_mode, "unit | depth | umeyama")->capture_default_str();
  c_st->add_option("--out", st.out, "Stitched TUM trajectory")->required();
  c_st->add_option("--gauges", st.gauges, "Per-chunk Sim(3) gauge file");
  common(c_st);

  RefineArgs ref;
  CLI::App* c_ref = app.add_subcommand("refine", "Pose-graph refinement of a stitched trajectory");
  c_ref->add_option("--manifest", ref.manifest, "Chunk manifest")->required()->check(CLI::ExistingFile);
  c_ref->add_option("--traj", ref.traj, "Input TUM trajectory")->required()->check(CLI::ExistingFile);
  AddRefineSchedule(c_ref, ref);
  c_ref->add_option("--seed", ref.seed, "Cross-edge sampling seed")->capture_default_str();
  c_ref->add_flag("--closed-circuit", ref.closed_circuit,
                  "The sequence is one lap: try closing the last frame onto the first");
  c_ref->add_option("--out", ref.out, "Refined TUM trajectory")->required();
  c_ref->add_option("--diagnostics", ref.diagnostics, "Per-stage diagnostics file");
  common(c_ref);

  FuseArgs fu;
  CLI::App* c_fu = app.add_subcommand("fuse", "Fuse chunk clouds into one global cloud");
  c_fu->add_option("--manifest", fu.manifest, "Chunk manifest")->required()->check(CLI::ExistingFile);
  c_fu->add_option("--gauges", fu.gauges, "Gauge file from stitch")->required()->check(CLI::ExistingFile);
  c_fu->add_option("--traj", fu.traj, "Refined trajectory (points ride on its poses)")
      ->check(CLI::ExistingFile);
  c_fu->add_option("--voxel", fu.voxel, "Voxel edge (m, 0: exact duplicates only)")
      ->capture_default_str();
  c_fu->add_option("--min-conf", fu.min_conf, "Minimum confidence")->capture_default_str();
  c_fu->add_flag("--ascii", fu.ascii, "Write ASCII PLY");
  c_fu->add_option("--out", fu.out, "Output PLY")->required();
  common(c_fu);

  EvalArgs ev;
  CLI::App* c_ev = app.add_subcommand("eval", "Trajectory (and cloud) metrics");
  c_ev->add_option("--est", ev.est, "Estimated TUM trajectory")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--gt", ev.gt, "Ground-truth TUM trajectory")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--align", ev.align, "none | se3 | sim3")->capture_default_str();
  c_ev->add_option("--delta", ev.delta, "RPE window (frames)")->capture_default_str();
  c_ev->add_option("--max-dt", ev.max_dt, "Association tolerance (s)")->capture_default_str();
  c_ev->add_option("--cloud", ev.cloud, "Fused PLY for cloud_error")->check(CLI::ExistingFile);
  c_ev->add_option("--track", ev.track, "Track spec for cloud_error (file or preset name)");
  c_ev->add_option("--out", ev.out, "Also write the metrics record here");
  common(c_ev);

  PlotArgs pl;
  CLI::App* c_pl = app.add_subcommand("plot", "Top-down SVG of trajectories");
  c_pl->add_option("--traj", pl.traj, "Trajectory (repeatable)")->required()->check(CLI::ExistingFile);
  c_pl->add_option("--label", pl.labels, "Legend label per --traj");
  c_pl->add_option("--gt", pl.gt, "Ground-truth trajectory")->check(CLI::ExistingFile);
  c_pl->add_option("--cloud", pl.cloud, "Cloud drawn underneath")->check(CLI::ExistingFile);
  c_pl->add_option("--align", pl.align, "none | se3 | sim3 (onto --gt)")->capture_default_str();
  c_pl->add_option("--title", pl.title, "Figure title");
  c_pl->add_option("--width", pl.width, "Width (px)")->capture_default_str();
  c_pl->add_option("--out", pl.out, "Output SVG")->required();
  common(c_pl);

  SimulateArgs pipe_sim;
  pipe_sim.noise = "moderate";
  RefineArgs pipe_ref;
  pipe_ref.closed_circuit = true;
  std::string pipe_scale = "depth";
  double pipe_voxel = 0.25;
  double pipe_min_conf = 0.3;
  int pipe_delta = 24;
  CLI::App* c_pipe = app.add_subcommand(
      "pipeline", "simulate, stitch, refine, fuse, eval and plot into one directory");
  c_pipe->add_option("--track", pipe_sim.track, "monaco-like | square | file:<spec>")
      ->capture_default_str();
  c_pipe->add_option("--fps", pipe_sim.fps, "Frame rate")->capture_default_str();
  c_pipe->add_option("--speed", pipe_sim.speed, "Speed on straights (m/s)")->capture_default_str();
  c_pipe->add_option("--turn-speed", pipe_sim.turn_speed, "Speed on arcs (m/s, 0: same)")
      ->capture_default_str();
  c_pipe->add_option("--laps", pipe_sim.laps, "Laps driven")->capture_default_str();
  c_pipe->add_option("--chunk-seconds", pipe_sim.chunk_seconds, "Chunk length (s)")
      ->capture_default_str();
  c_pipe->add_option("--overlap", pipe_sim.overlap, "Shared frames per seam")->capture_default_str();
  c_pipe->add_option("--noise", pipe_sim.noise, "Noise profile")->capture_default_str();
  c_pipe->add_option("--seed", pipe_sim.seed, "Seed for simulation and refinement")
      ->capture_default_str();
  c_pipe->add_option("--scale-mode", pipe_scale, "unit | depth | umeyama")->capture_default_str();
  AddRefineSchedule(c_pipe, pipe_ref);
  c_pipe->add_option("--closed-circuit", pipe_ref.closed_circuit,
                     "Close the last frame onto the first (true|false)")
      ->capture_default_str();
  c_pipe->add_option("--voxel", pipe_voxel, "Fusion voxel (m)")->capture_default_str();
  c_pipe->add_option("--min-conf", pipe_min_conf, "Fusion confidence floor")->capture_default_str();
  c_pipe->add_option("--delta", pipe_delta, "RPE window (frames)")->capture_default_str();
  c_pipe->add_option("--out-dir", pipe_sim.out_dir, "Output directory")->required();
  common(c_pipe);

  for (CLI::App* c : {c_sim, c_plan, c_st, c_ref, c_fu, c_ev, c_pl, c_pipe}) TakeLast(c);

  try {
    const std::vector<std::string> args = ExpandConfig(raw_args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto manifest_for = [&](const std::string& output) -> std::string {
    if (!run_manifest.empty()) return run_manifest;
    return output.empty() ? std::string() : output + ".run.ini";
  };

  try {
    if (c_sim->parsed()) {
      RunSimulate(sim, out);
      WriteRunManifest(run_manifest.empty() ? fs::path(sim.out_dir) / "run_manifest.ini"
                                            : fs::path(run_manifest),
                       *c_sim);
    } else if (c_plan->parsed()) {
      RunPlan(plan, out);
      if (const std::string p = manifest_for(plan.out); !p.empty()) WriteRunManifest(p, *c_plan);
    } else if (c_st->parsed()) {
      RunStitch(st, out);
      WriteRunManifest(manifest_for(st.out), *c_st);
    } else if (c_ref->parsed()) {
      RunRefine(ref, out);
      WriteRunManifest(manifest_for(ref.out), *c_ref);
    } else if (c_fu->parsed()) {
      RunFuse(fu, out);
      WriteRunManifest(manifest_for(fu.out), *c_fu);
    } else if (c_ev->parsed()) {
      EvaluateFiles(ev, out);
      if (const std::string p = manifest_for(ev.out); !p.empty()) WriteRunManifest(p, *c_ev);
    } else if (c_pl->parsed()) {
      RunPlot(pl, out);
      WriteRunManifest(manifest_for(pl.out), *c_pl);
    } else if (c_pipe->parsed()) {
      const fs::path dir(pipe_sim.out_dir);
      const std::string d = dir.string() + "/";
      RunSimulate(pipe_sim, out);
      RunStitch({d + "manifest.txt", pipe_scale, d + "stitched.tum", d + "gauges.txt"}, out);
      RefineArgs r = pipe_ref;
      r.manifest = d + "manifest.txt";
      r.traj = d + "stitched.tum";
      r.seed = pipe_sim.seed;
      r.out = d + "refined.tum";
      r.diagnostics = d + "diagnostics.txt";
      RunRefine(r, out);
      RunFuse({d + "manifest.txt", d + "gauges.txt", d + "refined.tum", pipe_voxel,
               pipe_min_conf, false, d + "fused.ply"},
              out);
      EvaluateFiles({d + "stitched.tum", d + "gt.tum", "sim3", pipe_delta, 0.01, "", "",
                     d + "metrics_stitched.txt"},
                    out);
      EvaluateFiles({d + "refined.tum", d + "gt.tum", "sim3", pipe_delta, 0.01, d + "fused.ply",
                     d + "track.txt", d + "metrics_refined.txt"},
                    out);
      RunPlot({{d + "stitched.tum"}, {"stitched"}, d + "gt.tum", "", "sim3",
               "Stitched only", 800, d + "stitched.svg"},
              out);
      RunPlot({{d + "refined.tum"}, {"refined"}, d + "gt.tum", "", "sim3",
               "After loop closure and refinement", 800, d + "refined.svg"},
              out);
      WriteRunManifest(run_manifest.empty() ? dir / "run_manifest.ini" : fs::path(run_manifest),
                       *c_pipe);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::kInvalidArgument: return kExitUsage;
      case ErrorKind::kData: return kExitData;
      case ErrorKind::kNumerical: return kExitNumerical;
    }
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace trackstitch
