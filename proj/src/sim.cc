#include "trackstitch/sim.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "trackstitch/chunkio.h"
#include "trackstitch/error.h"
#include "trackstitch/parallel.h"

namespace trackstitch {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kCameraHeight = 1.0;  // m above ground

double WrapAngle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  return a <= -kPi ? a + 2.0 * kPi : a;
}

Eigen::Vector2d Direction(double heading) {
  return {std::cos(heading), std::sin(heading)};
}

// Left normal of the heading.
Eigen::Vector2d Normal(double heading) {
  return {-std::sin(heading), std::cos(heading)};
}

// Planar position and heading after travelling `a` metres into a segment
// that starts at `start` with `heading`.
void Advance(const TrackSegment& seg, const Eigen::Vector2d& start, double heading,
             double a, Eigen::Vector2d* position, double* new_heading) {
  if (seg.kind == TrackSegment::Kind::kStraight) {
    *position = start + a * Direction(heading);
    *new_heading = heading;
    return;
  }
  const double sign = seg.angle >= 0.0 ? 1.0 : -1.0;
  const double phi = sign * a / seg.radius;
  *position = start + sign * seg.radius * (Normal(heading) - Normal(heading + phi));
  *new_heading = heading + phi;
}

uint64_t SplitMix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic uniform in [0, 1) keyed by (station, slot).
double StationUniform(int64_t station, int slot) {
  const uint64_t h = SplitMix(SplitMix(static_cast<uint64_t>(station) * 16 + slot) ^
                              0x5ca1ab1e0ddba11ULL);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double PointSegmentDistance(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                            const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

std::vector<std::string> Tokens(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double ParseNumber(const std::string& path, int line, const std::string& text) {
  size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !std::isfinite(v)) {
    throw ParseError(path, line, "bad number '" + text + "'");
  }
  return v;
}

// Appends at most one arc and one straight that bring the end of `spec`
// back to the start with heading 0.
void AutoClose(TrackSpec* spec) {
  const ClosureGap gap = ComputeClosureGap(*spec);
  const Eigen::Vector2d p = gap.displacement;
  const double h = gap.heading;
  if (std::abs(h) <= 1e-12) {
    if (std::abs(p.y()) <= 1e-9 && p.x() < 0.0) {
      spec->segments.push_back(TrackSegment::Straight(-p.x()));
      return;
    }
  } else {
    const double base = WrapAngle(-h);
    for (const double delta : {base, base - 2.0 * kPi, base + 2.0 * kPi}) {
      if (std::abs(delta) < 1e-12 || std::abs(delta) >= 2.0 * kPi) continue;
      const double sign = delta > 0.0 ? 1.0 : -1.0;
      const Eigen::Vector2d g = sign * (Normal(h) - Normal(h + delta));
      if (std::abs(g.y()) < 1e-12) continue;
      const double r = -p.y() / g.y();
      if (!(r > 0.0)) continue;
      const double straight = -(p.x() + r * g.x());
      if (straight < -1e-9) continue;
      spec->segments.push_back(TrackSegment::Arc(r, delta));
      if (straight > 1e-9) spec->segments.push_back(TrackSegment::Straight(straight));
      return;
    }
  }
  throw InvalidArgument("auto_close: no single arc + straight closes the track");
}

}  // namespace

double TrackSegment::ArcLength() const {
  return kind == Kind::kStraight ? length : radius * std::abs(angle);
}

ClosureGap ComputeClosureGap(const TrackSpec& spec) {
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  double h = 0.0;
  for (const TrackSegment& seg : spec.segments) {
    Advance(seg, p, h, seg.ArcLength(), &p, &h);
  }
  return {p, WrapAngle(h)};
}

TrackSpec ParseTrackSpec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open track spec");
  TrackSpec spec;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto tok = Tokens(line);
    if (tok.empty()) continue;
    auto expect = [&](size_t n) {
      if (tok.size() != n) throw ParseError(path, number, "wrong field count for '" + tok[0] + "'");
    };
    if (tok[0] == "straight") {
      expect(2);
      spec.segments.push_back(TrackSegment::Straight(ParseNumber(path, number, tok[1])));
    } else if (tok[0] == "arc") {
      expect(3);
      spec.segments.push_back(TrackSegment::Arc(ParseNumber(path, number, tok[1]),
                                                ParseNumber(path, number, tok[2])));
    } else if (tok[0] == "half_width") {
      expect(2);
      spec.half_width = ParseNumber(path, number, tok[1]);
    } else if (tok[0] == "wall_height") {
      expect(2);
      spec.wall_height = ParseNumber(path, number, tok[1]);
    } else if (tok[0] == "elevation") {
      expect(2);
      spec.elevation = ParseNumber(path, number, tok[1]);
    } else if (tok[0] == "auto_close") {
      expect(1);
      spec.auto_close = true;
    } else {
      throw ParseError(path, number, "unknown entry '" + tok[0] + "'");
    }
  }
  return spec;
}

void WriteTrackSpec(const std::string& path, const TrackSpec& spec) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "half_width " << FormatDouble(spec.half_width) << "\n"
      << "wall_height " << FormatDouble(spec.wall_height) << "\n"
      << "elevation " << FormatDouble(spec.elevation) << "\n";
  for (const TrackSegment& seg : spec.segments) {
    if (seg.kind == TrackSegment::Kind::kStraight) {
      out << "straight " << FormatDouble(seg.length) << "\n";
    } else {
      out << "arc " << FormatDouble(seg.radius) << " " << FormatDouble(seg.angle) << "\n";
    }
  }
  if (spec.auto_close) out << "auto_close\n";
}

TrackSpec MonacoLikeSpec() {
  // Straight, arc, straight, ... ; turns sum to one full left-hand lap. Two
  // straights are solved for so the circuit closes, then everything is
  // scaled to the target lap length.
  constexpr double kDeg = kPi / 180.0;
  const double arcs[9][2] = {{90, 40},  {45, 120}, {-60, 50}, {160, 15}, {-90, 25},
                             {90, 30},  {70, 60},  {-45, 40}, {100, 30}};
  std::vector<double> straights = {300, 150, 200, 100, 80, 250, 120, 90, 100, 100};
  constexpr int kFreeA = 5;
  constexpr int kFreeB = 8;
  constexpr double kLapLength = 3338.0;

  auto build = [&] {
    TrackSpec spec;
    for (int i = 0; i < 10; ++i) {
      spec.segments.push_back(TrackSegment::Straight(straights[i]));
      if (i < 9) spec.segments.push_back(TrackSegment::Arc(arcs[i][1], arcs[i][0] * kDeg));
    }
    return spec;
  };

  // The gap is affine in the free lengths: solve the 2x2 system.
  const Eigen::Vector2d gap0 = ComputeClosureGap(build()).displacement;
  straights[kFreeA] += 1.0;
  const Eigen::Vector2d da = ComputeClosureGap(build()).displacement - gap0;
  straights[kFreeA] -= 1.0;
  straights[kFreeB] += 1.0;
  const Eigen::Vector2d db = ComputeClosureGap(build()).displacement - gap0;
  straights[kFreeB] -= 1.0;
  Eigen::Matrix2d m;
  m << da, db;
  const Eigen::Vector2d step = m.fullPivLu().solve(-gap0);
  straights[kFreeA] += step.x();
  straights[kFreeB] += step.y();

  TrackSpec spec = build();
  double total = 0.0;
  for (const TrackSegment& seg : spec.segments) total += seg.ArcLength();
  const double k = kLapLength / total;
  for (TrackSegment& seg : spec.segments) {
    seg.length *= k;
    seg.radius *= k;
  }
  return spec;
}

TrackSpec SquareSpec() {
  TrackSpec spec;
  for (int i = 0; i < 4; ++i) {
    spec.segments.push_back(TrackSegment::Straight(20.0));
    spec.segments.push_back(TrackSegment::Arc(10.0, kPi / 2.0));
  }
  return spec;
}

TrackSpec TrackSpecByName(const std::string& name) {
  if (name == "monaco-like") return MonacoLikeSpec();
  if (name == "square") return SquareSpec();
  if (name.rfind("file:", 0) == 0) return ParseTrackSpec(name.substr(5));
  throw InvalidArgument("unknown track '" + name + "' (monaco-like|square|file:<path>)");
}

TrackModel TrackModel::Make(const TrackSpec& input) {
  TrackSpec spec = input;
  if (spec.segments.empty()) throw InvalidArgument("track has no segments");
  for (const TrackSegment& seg : spec.segments) {
    const bool ok = seg.kind == TrackSegment::Kind::kStraight
                        ? std::isfinite(seg.length) && seg.length > 0.0
                        : std::isfinite(seg.radius) && seg.radius > 0.0 &&
                              std::isfinite(seg.angle) && seg.angle != 0.0;
    if (!ok) throw InvalidArgument("track segment with non-positive length");
  }
  if (!(spec.half_width > 0.0) || !(spec.wall_height > 0.0) || !(spec.elevation >= 0.0)) {
    throw InvalidArgument("track half_width and wall_height must be > 0, elevation >= 0");
  }
  if (spec.auto_close) {
    const ClosureGap gap = ComputeClosureGap(spec);
    if (gap.displacement.norm() > 1e-6 || std::abs(gap.heading) > 1e-9) AutoClose(&spec);
    spec.auto_close = false;
  }
  const ClosureGap gap = ComputeClosureGap(spec);
  if (gap.displacement.norm() > 1e-6 || std::abs(gap.heading) > 1e-9) {
    std::ostringstream msg;
    msg << "track does not close: displacement gap " << gap.displacement.norm()
        << " m, heading gap " << gap.heading << " rad";
    throw InvalidArgument(msg.str());
  }

  TrackModel model;
  model.spec_ = spec;
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  double h = 0.0;
  for (const TrackSegment& seg : spec.segments) {
    model.starts_.push_back(model.length_);
    model.states_.push_back({p, h});
    Advance(seg, p, h, seg.ArcLength(), &p, &h);
    model.length_ += seg.ArcLength();
  }
  model.total_turn_ = h;
  return model;
}

double TrackModel::GroundHeight(double s) const {
  if (spec_.elevation == 0.0) return 0.0;
  return spec_.elevation * std::sin(2.0 * kPi * s / length_);
}

CenterlinePoint TrackModel::At(double s) const {
  const double lap = std::floor(s / length_);
  double local = s - lap * length_;
  const int n = static_cast<int>(starts_.size());
  int i = static_cast<int>(std::upper_bound(starts_.begin(), starts_.end(), local) -
                           starts_.begin()) - 1;
  i = std::clamp(i, 0, n - 1);
  const double a = std::min(local - starts_[i], spec_.segments[i].ArcLength());
  Eigen::Vector2d xy;
  double h = 0.0;
  Advance(spec_.segments[i], states_[i].start, states_[i].heading, a, &xy, &h);
  CenterlinePoint out;
  out.position = Eigen::Vector3d(xy.x(), xy.y(), GroundHeight(local));
  out.heading = h + lap * total_turn_;
  out.segment = i;
  return out;
}

double TrackModel::DistanceToSurface(const Eigen::Vector3d& p) const {
  const double hw = spec_.half_width;
  const double wall = spec_.wall_height;
  const Eigen::Vector2d ground_a(-hw, 0.0), ground_b(hw, 0.0);
  const Eigen::Vector2d left_top(hw, wall), right_top(-hw, wall);
  const Eigen::Vector2d xy = p.head<2>();
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < spec_.segments.size(); ++i) {
    const TrackSegment& seg = spec_.segments[i];
    const double len = seg.ArcLength();
    const double h = states_[i].heading;
    double along = 0.0;
    double lateral = 0.0;
    double overshoot = 0.0;
    if (seg.kind == TrackSegment::Kind::kStraight) {
      const Eigen::Vector2d d = xy - states_[i].start;
      along = d.dot(Direction(h));
      lateral = d.dot(Normal(h));
      overshoot = along < 0.0 ? -along : std::max(0.0, along - len);
    } else {
      const double sign = seg.angle > 0.0 ? 1.0 : -1.0;
      const Eigen::Vector2d center = states_[i].start + sign * seg.radius * Normal(h);
      const Eigen::Vector2d u0 = -sign * Normal(h);  // center -> segment start
      const Eigen::Vector2d w = xy - center;
      const double rho = w.norm();
      double phi = sign * std::atan2(u0.x() * w.y() - u0.y() * w.x(), u0.dot(w));
      const double span = std::abs(seg.angle);
      phi = std::fmod(phi + 2.0 * kPi, 2.0 * kPi);
      if (phi > span + 0.5 * (2.0 * kPi - span)) phi -= 2.0 * kPi;
      along = std::clamp(phi, 0.0, span) * seg.radius;
      overshoot = phi < 0.0 ? -phi * rho : std::max(0.0, phi - span) * rho;
      lateral = sign * (seg.radius - rho);
    }
    const double s = starts_[i] + std::clamp(along, 0.0, len);
    const Eigen::Vector2d q(lateral, p.z() - GroundHeight(s));
    const double section = std::min({PointSegmentDistance(q, ground_a, ground_b),
                                      PointSegmentDistance(q, ground_b, left_top),
                                      PointSegmentDistance(q, ground_a, right_top)});
    best = std::min(best, std::hypot(section, overshoot));
  }
  return best;
}

std::vector<double> FrameArcLengths(const TrackModel& track, const SpeedProfile& speed,
                                    double fps, double laps) {
  if (!(speed.straight_speed > 0.0) || !(speed.turn_speed > 0.0)) {
    throw InvalidArgument("speeds must be > 0");
  }
  if (!(fps > 0.0)) throw InvalidArgument("fps must be > 0");
  if (!(laps > 0.0)) throw InvalidArgument("laps must be > 0");

  // Piecewise-linear s(t): cumulative time at each segment boundary.
  const auto& segs = track.spec().segments;
  const int n = static_cast<int>(segs.size());
  std::vector<double> t_start(n + 1, 0.0);
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = segs[i].kind == TrackSegment::Kind::kStraight ? speed.straight_speed
                                                         : speed.turn_speed;
    t_start[i + 1] = t_start[i] + segs[i].ArcLength() / v[i];
  }
  const double lap_time = t_start[n];
  const double total_time = laps * lap_time;
  const int frames = static_cast<int>(std::floor(total_time * fps + 1e-9)) + 1;

  std::vector<double> s(frames);
  for (int f = 0; f < frames; ++f) {
    const double t = f / fps;
    double lap = std::floor(t / lap_time);
    double local = t - lap * lap_time;
    // Land exactly on the lap boundary instead of a hair before it.
    if (lap_time - local < 1e-12 * lap_time) {
      lap += 1.0;
      local = 0.0;
    }
    int i = static_cast<int>(std::upper_bound(t_start.begin(), t_start.end() - 1, local) -
                             t_start.begin()) - 1;
    i = std::clamp(i, 0, n - 1);
    s[f] = lap * track.length() + track.segment_start(i) + (local - t_start[i]) * v[i];
  }
  return s;
}

Pose CameraPoseAt(const TrackModel& track, double s) {
  const CenterlinePoint c = track.At(s);
  const double h = c.heading;
  Eigen::Matrix3d r;
  r.col(0) = Eigen::Vector3d(std::sin(h), -std::cos(h), 0.0);  // right
  r.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0);                  // down
  r.col(2) = Eigen::Vector3d(std::cos(h), std::sin(h), 0.0);   // forward
  return Pose(Rotation::FromMatrix(r), c.position + Eigen::Vector3d(0.0, 0.0, kCameraHeight));
}

Trajectory SampleTrajectory(const TrackModel& track, const SpeedProfile& speed, double fps,
                            double laps) {
  const std::vector<double> s = FrameArcLengths(track, speed, fps, laps);
  Trajectory out(s.size());
  for (size_t f = 0; f < s.size(); ++f) {
    out[f].timestamp = static_cast<double>(f) / fps;
    out[f].pose = CameraPoseAt(track, s[f]);
  }
  return out;
}

CurvatureProfile CurvatureOf(const TrackModel& track, const SpeedProfile& speed, double fps,
                             double laps) {
  const std::vector<double> s = FrameArcLengths(track, speed, fps, laps);
  CurvatureProfile k(s.size(), 0.0);
  for (size_t f = 0; f + 1 < s.size(); ++f) {
    k[f] = WrapAngle(track.At(s[f + 1]).heading - track.At(s[f]).heading);
  }
  if (s.size() >= 2) k.back() = k[k.size() - 2];
  return k;
}

NoiseModel NoiseModel::Preset(const std::string& name) {
  NoiseModel m;
  if (name == "none") return m;
  if (name == "mild") {
    m.log_scale_sigma = 0.005;
    m.pose_sigma_t = 0.02;
    m.pose_sigma_r = 0.0005;
    m.rotational_drift = 0.0001;
    m.drift_walk_sigma = 0.00002;
    m.point_sigma = 0.02;
  } else if (name == "moderate") {
    m.log_scale_sigma = 0.01;
    m.pose_sigma_t = 0.05;
    m.pose_sigma_r = 0.001;
    m.rotational_drift = 0.0005;
    m.drift_walk_sigma = 0.00005;
    m.point_sigma = 0.05;
  } else if (name == "severe") {
    m.log_scale_sigma = 0.05;
    m.pose_sigma_t = 0.2;
    m.pose_sigma_r = 0.005;
    m.rotational_drift = 0.002;
    m.drift_walk_sigma = 0.0002;
    m.scale_drift = 0.0005;
    m.point_sigma = 0.2;
  } else {
    throw InvalidArgument("unknown noise preset '" + name + "'");
  }
  return m;
}

NoiseModel NoiseModelByName(const std::string& name) {
  if (name == "none" || name == "mild" || name == "moderate" || name == "severe") {
    return NoiseModel::Preset(name);
  }
  std::ifstream in(name);
  if (!in) throw InvalidArgument("unknown noise profile '" + name + "'");
  NoiseModel m;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (Tokens(line).empty()) continue;
    if (eq == std::string::npos) throw ParseError(name, number, "expected key = value");
    const auto key_tok = Tokens(line.substr(0, eq));
    const auto val_tok = Tokens(line.substr(eq + 1));
    if (key_tok.size() != 1 || val_tok.size() != 1) {
      throw ParseError(name, number, "expected key = value");
    }
    const std::string& key = key_tok[0];
    const std::string& text = val_tok[0];
    if (key == "preset") {
      const uint64_t seed = m.seed;
      m = NoiseModel::Preset(text);
      m.seed = seed;
    } else if (key == "randomize_gauges") {
      if (text != "0" && text != "1") throw ParseError(name, number, "expected 0 or 1");
      m.randomize_gauges = text == "1";
    } else if (key == "seed") {
      m.seed = static_cast<uint64_t>(ParseNumber(name, number, text));
    } else {
      const double v = ParseNumber(name, number, text);
      if (v < 0.0) throw ParseError(name, number, key + " must be >= 0");
      if (key == "gauge_rotation_max") m.gauge_rotation_max = v;
      else if (key == "gauge_translation_max") m.gauge_translation_max = v;
      else if (key == "log_scale_sigma") m.log_scale_sigma = v;
      else if (key == "pose_sigma_t") m.pose_sigma_t = v;
      else if (key == "pose_sigma_r") m.pose_sigma_r = v;
      else if (key == "rotational_drift") m.rotational_drift = v;
      else if (key == "drift_walk_sigma") m.drift_walk_sigma = v;
      else if (key == "scale_drift") m.scale_drift = v;
      else if (key == "point_sigma") m.point_sigma = v;
      else throw ParseError(name, number, "unknown key '" + key + "'");
    }
  }
  return m;
}

std::vector<CloudPoint> VisibleLandmarks(const TrackModel& track, double s,
                                         const CameraModel& camera) {
  const double spacing = camera.station_spacing;
  const int64_t stations = static_cast<int64_t>(std::floor(track.length() / spacing));
  const double length = track.length();
  const double s_lap = s - std::floor(s / length) * length;
  const Pose cam = CameraPoseAt(track, s);
  const Pose world_to_cam = cam.Inverse();
  const double hw = track.spec().half_width;
  const double wall = track.spec().wall_height;
  const Intrinsics& k = camera.intrinsics;

  std::vector<CloudPoint> out;
  const int64_t first = static_cast<int64_t>(std::floor((s_lap + camera.min_range) / spacing)) - 1;
  const int64_t last = std::min(
      first + stations - 1,
      static_cast<int64_t>(std::ceil((s_lap + camera.max_range) / spacing)) + 1);
  for (int64_t j = first; j <= last; ++j) {
    const int64_t id = ((j % stations) + stations) % stations;
    const double station_s = (static_cast<double>(id) + 0.5 * StationUniform(id, 0)) * spacing;
    double ahead = station_s - s_lap;
    ahead -= std::floor(ahead / length) * length;
    if (ahead < camera.min_range || ahead > camera.max_range) continue;

    const CenterlinePoint c = track.At(station_s);
    const Eigen::Vector3d n(-std::sin(c.heading), std::cos(c.heading), 0.0);
    Eigen::Vector3d world[7];
    world[0] = c.position + hw * n + Eigen::Vector3d(0, 0, wall * StationUniform(id, 1));
    world[1] = c.position + hw * n + Eigen::Vector3d(0, 0, wall * StationUniform(id, 2));
    world[2] = c.position - hw * n + Eigen::Vector3d(0, 0, wall * StationUniform(id, 3));
    world[3] = c.position - hw * n + Eigen::Vector3d(0, 0, wall * StationUniform(id, 4));
    for (int g = 0; g < 3; ++g) {
      world[4 + g] = c.position + (2.0 * StationUniform(id, 5 + g) - 1.0) * hw * n;
    }
    for (const Eigen::Vector3d& w : world) {
      const Eigen::Vector3d pc = world_to_cam * w;
      if (pc.z() < 0.5) continue;
      const double u = k.fx * pc.x() / pc.z() + k.cx;
      const double v = k.fy * pc.y() / pc.z() + k.cy;
      if (u < 0.0 || u >= camera.width || v < 0.0 || v >= camera.height) continue;
      CloudPoint point;
      point.position = w;
      point.pixel = Eigen::Vector2d(u, v);
      point.confidence = std::exp(-pc.norm() / 20.0);
      out.push_back(point);
    }
  }
  return out;
}

SimulatedChunks SynthChunks(const Trajectory& gt, const std::vector<double>& arc_lengths,
                            const TrackModel& track, const ChunkPlan& plan,
                            const NoiseModel& noise, const CameraModel& camera) {
  if (arc_lengths.size() != gt.size()) {
    throw InvalidArgument("arc lengths and trajectory differ in size");
  }
  for (double sigma : {noise.log_scale_sigma, noise.pose_sigma_t, noise.pose_sigma_r,
                       noise.rotational_drift, noise.drift_walk_sigma, noise.scale_drift,
                       noise.point_sigma, noise.gauge_rotation_max,
                       noise.gauge_translation_max}) {
    if (!(sigma >= 0.0)) throw InvalidArgument("noise parameters must be >= 0");
  }
  ValidatePlan(plan, static_cast<int>(gt.size()));

  const int n = static_cast<int>(plan.chunks.size());
  SimulatedChunks out;
  out.chunks.resize(n);
  out.world_to_chunk.resize(n);
  const bool drifting = noise.rotational_drift > 0.0 || noise.drift_walk_sigma > 0.0 ||
                        noise.scale_drift > 0.0;

  ParallelFor(n, [&](int c) {
    const ChunkSpec& spec = plan.chunks[c];
    std::mt19937_64 rng(SplitMix(noise.seed ^ static_cast<uint64_t>(spec.chunk_id)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    auto gaussian3 = [&] { return Eigen::Vector3d(normal(rng), normal(rng), normal(rng)); };

    Sim3 gauge;
    if (noise.randomize_gauges) {
      const Eigen::Vector3d axis = gaussian3().normalized();
      const double angle = uniform(rng) * noise.gauge_rotation_max;
      const Eigen::Vector3d t(2.0 * uniform(rng) - 1.0, 2.0 * uniform(rng) - 1.0,
                              2.0 * uniform(rng) - 1.0);
      const double scale = std::exp(noise.log_scale_sigma * normal(rng));
      gauge = Sim3(scale, Rotation::FromAngleAxis(angle, axis),
                   noise.gauge_translation_max * t);
    } else if (noise.log_scale_sigma > 0.0) {
      gauge = Sim3::FromScale(std::exp(noise.log_scale_sigma * normal(rng)));
    }
    out.world_to_chunk[c] = gauge;

    ChunkReconstruction& chunk = out.chunks[c];
    chunk.chunk_id = spec.chunk_id;
    chunk.frames.resize(spec.length());

    Pose local;  // drifted pose in chunk units
    for (int k = 0; k < spec.length(); ++k) {
      const int f = spec.start_frame + k;
      const Pose& truth = gt[f].pose;
      const double scale = gauge.scale * std::exp(noise.scale_drift * k);
      const Pose gauged(gauge.rotation * truth.rotation, gauge * truth.translation);
      if (!drifting || k == 0) {
        local = gauged;
      } else {
        const Pose step = gt[f - 1].pose.Inverse() * truth;
        const Eigen::Vector3d omega =
            Eigen::Vector3d(0.0, -noise.rotational_drift, 0.0) +
            noise.drift_walk_sigma * gaussian3();
        local = local * Pose(step.rotation, scale * step.translation) *
                Pose(Rotation::Exp(omega), Eigen::Vector3d::Zero());
      }
      Pose reported = local;
      if (noise.pose_sigma_t > 0.0 || noise.pose_sigma_r > 0.0) {
        const Eigen::Vector3d dr = noise.pose_sigma_r * gaussian3();
        const Eigen::Vector3d dt = scale * noise.pose_sigma_t * gaussian3();
        reported = local * Pose(Rotation::Exp(dr), dt);
      }

      FrameRecord& rec = chunk.frames[k];
      rec.frame_index = f;
      rec.timestamp = gt[f].timestamp;
      rec.pose = reported;
      rec.intrinsics = camera.intrinsics;
      const Pose to_cam = truth.Inverse();
      for (CloudPoint p : VisibleLandmarks(track, arc_lengths[f], camera)) {
        Eigen::Vector3d pc = scale * (to_cam * p.position);
        if (noise.point_sigma > 0.0) pc += scale * noise.point_sigma * gaussian3();
        p.position = reported.rotation * pc + reported.translation;
        p.frame = f;
        p.chunk = spec.chunk_id;
        rec.points.push_back(p);
      }
    }
  });
  return out;
}

SimulatedRun Simulate(const Scenario& sc) {
  SimulatedRun run{TrackModel::Make(TrackSpecByName(sc.track)), {}, {}, {}, {}, {}};
  run.arc_lengths = FrameArcLengths(run.track, sc.speed, sc.fps, sc.laps);
  run.ground_truth = SampleTrajectory(run.track, sc.speed, sc.fps, sc.laps);
  run.meta = VideoMeta{static_cast<int>(run.ground_truth.size()), sc.fps, sc.camera.width,
                       sc.camera.height};
  run.plan = PlanFixedChunks(run.meta, sc.chunk_seconds, sc.overlap);
  run.synth = SynthChunks(run.ground_truth, run.arc_lengths, run.track, run.plan, sc.noise,
                          sc.camera);
  return run;
}

}  // namespace trackstitch
