#include "plot.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "trackstitch/error.h"

namespace trackstitch {
namespace {

const char* const kColors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"};
constexpr const char* kGroundTruthColor = "#7f7f7f";
constexpr const char* kStartColor = "#2ca02c";

std::string Fmt(double v, int precision = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  std::string s(buf);
  // Never print a negative zero.
  if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
  return s;
}

std::string Escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame2d {
  double min_x = 0.0;
  double max_y = 0.0;
  double scale = 1.0;
  double left = 0.0;
  double top = 0.0;

  double X(const Eigen::Vector3d& p) const { return left + (p.x() - min_x) * scale; }
  double Y(const Eigen::Vector3d& p) const { return top + (max_y - p.y()) * scale; }
};

std::vector<Eigen::Vector3d> Positions(const Trajectory& t, const Sim3& a) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(t.size());
  for (const TrajectorySample& s : t) out.push_back(a * s.pose.translation);
  return out;
}

std::string PathData(const std::vector<Eigen::Vector3d>& pts, const Frame2d& f) {
  std::string d;
  for (size_t i = 0; i < pts.size(); ++i) {
    d += (i == 0 ? "M" : " L");
    d += Fmt(f.X(pts[i])) + " " + Fmt(f.Y(pts[i]));
  }
  return d;
}

}  // namespace

PlotResult RenderPlot(const std::vector<PlotSeries>& estimates,
                      const std::optional<Trajectory>& ground_truth,
                      const std::vector<CloudPoint>& cloud, const PlotOptions& options) {
  if (estimates.empty()) throw InvalidArgument("plot needs at least one trajectory");
  for (const PlotSeries& s : estimates) {
    if (s.trajectory.empty()) throw InvalidArgument("empty trajectory '" + s.label + "'");
  }
  if (ground_truth && ground_truth->empty()) throw InvalidArgument("empty ground truth");
  if (options.width < 2 * options.margin + 10) throw InvalidArgument("plot width too small");

  std::vector<std::vector<Eigen::Vector3d>> est_pts;
  Sim3 first_alignment;
  for (size_t k = 0; k < estimates.size(); ++k) {
    Sim3 a;
    if (ground_truth && options.align != Alignment::kNone) {
      a = Ate(estimates[k].trajectory, *ground_truth, options.align).alignment;
    }
    if (k == 0) first_alignment = a;
    est_pts.push_back(Positions(estimates[k].trajectory, a));
  }
  std::vector<Eigen::Vector3d> gt_pts;
  if (ground_truth) gt_pts = Positions(*ground_truth, Sim3());
  std::vector<Eigen::Vector3d> cloud_pts;
  if (!cloud.empty() && options.max_cloud_points > 0) {
    const size_t stride = (cloud.size() + options.max_cloud_points - 1) / options.max_cloud_points;
    for (size_t i = 0; i < cloud.size(); i += stride) {
      cloud_pts.push_back(first_alignment * cloud[i].position);
    }
  }

  double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x;
  double min_y = min_x, max_y = -min_x;
  auto extend = [&](const std::vector<Eigen::Vector3d>& pts) {
    for (const Eigen::Vector3d& p : pts) {
      min_x = std::min(min_x, p.x());
      max_x = std::max(max_x, p.x());
      min_y = std::min(min_y, p.y());
      max_y = std::max(max_y, p.y());
    }
  };
  for (const auto& pts : est_pts) extend(pts);
  extend(gt_pts);
  extend(cloud_pts);
  if (!std::isfinite(min_x) || !std::isfinite(max_x) || !std::isfinite(min_y) ||
      !std::isfinite(max_y)) {
    throw NumericalError("non-finite coordinates in plot input");
  }
  // Equal axis scaling; degenerate extents get a 1 m box.
  const double dx = std::max(max_x - min_x, 1.0);
  const double dy = std::max(max_y - min_y, 1.0);

  const std::vector<Eigen::Vector3d>& first = est_pts.front();
  PlotResult result;
  result.endpoint_gap = (first.back() - first.front()).norm();

  const int legend_rows = static_cast<int>(estimates.size()) + (ground_truth ? 1 : 0) + 2;
  const int header = (options.title.empty() ? 10 : 34) + 18 * legend_rows;
  Frame2d f;
  f.min_x = min_x;
  f.max_y = max_y;
  f.scale = (options.width - 2.0 * options.margin) / dx;
  f.left = options.margin;
  f.top = header + options.margin;
  const int height = static_cast<int>(std::ceil(header + 2.0 * options.margin + dy * f.scale));

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << options.width << " " << height << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << options.width << "\" height=\"" << height
      << "\" fill=\"#ffffff\"/>\n";
  int y = 10;
  if (!options.title.empty()) {
    svg << "<text x=\"" << options.margin << "\" y=\"26\" font-family=\"sans-serif\" "
        << "font-size=\"16\" font-weight=\"bold\">" << Escape(options.title) << "</text>\n";
    y = 34;
  }

  if (!cloud_pts.empty()) {
    svg << "<g id=\"cloud\" fill=\"#c7c7c7\">\n";
    for (const Eigen::Vector3d& p : cloud_pts) {
      svg << "<rect x=\"" << Fmt(f.X(p) - 0.5) << "\" y=\"" << Fmt(f.Y(p) - 0.5)
          << "\" width=\"1\" height=\"1\"/>\n";
    }
    svg << "</g>\n";
  }
  if (ground_truth) {
    svg << "<path id=\"ground-truth\" d=\"" << PathData(gt_pts, f) << "\" fill=\"none\" stroke=\""
        << kGroundTruthColor << "\" stroke-width=\"4\" stroke-dasharray=\"10 6\" "
        << "stroke-linejoin=\"round\"/>\n";
  }
  for (size_t k = 0; k < est_pts.size(); ++k) {
    svg << "<path id=\"estimate-" << k << "\" d=\"" << PathData(est_pts[k], f)
        << "\" fill=\"none\" stroke=\"" << kColors[k % std::size(kColors)]
        << "\" stroke-width=\"1.5\" stroke-linejoin=\"round\"/>\n";
  }

  // Endpoint gap of the first estimate.
  const Eigen::Vector3d& a = first.front();
  const Eigen::Vector3d& b = first.back();
  const std::string gap_text = "endpoint gap " + Fmt(result.endpoint_gap) + " m";
  svg << "<line id=\"gap\" x1=\"" << Fmt(f.X(a)) << "\" y1=\"" << Fmt(f.Y(a)) << "\" x2=\""
      << Fmt(f.X(b)) << "\" y2=\"" << Fmt(f.Y(b))
      << "\" stroke=\"#000000\" stroke-width=\"1\" stroke-dasharray=\"3 3\"/>\n";
  svg << "<text x=\"" << Fmt(0.5 * (f.X(a) + f.X(b)) + 8) << "\" y=\""
      << Fmt(0.5 * (f.Y(a) + f.Y(b)) - 8)
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << gap_text << "</text>\n";
  svg << "<circle id=\"start\" cx=\"" << Fmt(f.X(a)) << "\" cy=\"" << Fmt(f.Y(a))
      << "\" r=\"5\" fill=\"" << kStartColor << "\" stroke=\"#000000\" stroke-width=\"1\"/>\n";

  // Legend.
  svg << "<g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  auto row = [&](const std::string& swatch, const std::string& label) {
    y += 18;
    svg << swatch << "<text x=\"" << options.margin + 34 << "\" y=\"" << y + 4 << "\">"
        << Escape(label) << "</text>\n";
  };
  auto line_swatch = [&](const std::string& color, const std::string& extra) {
    return "<line x1=\"" + std::to_string(options.margin) + "\" y1=\"" + std::to_string(y + 18) +
           "\" x2=\"" + std::to_string(options.margin + 26) + "\" y2=\"" +
           std::to_string(y + 18) + "\" stroke=\"" + color + "\" " + extra + "/>";
  };
  if (ground_truth) {
    row(line_swatch(kGroundTruthColor, "stroke-width=\"4\" stroke-dasharray=\"10 6\""),
        "ground truth");
  }
  for (size_t k = 0; k < estimates.size(); ++k) {
    std::string label = estimates[k].label;
    if (ground_truth && options.align != Alignment::kNone) {
      label += " (" + AlignmentName(options.align) + "-aligned)";
    }
    row(line_swatch(kColors[k % std::size(kColors)], "stroke-width=\"1.5\""), label);
  }
  row("<circle cx=\"" + std::to_string(options.margin + 13) + "\" cy=\"" +
          std::to_string(y + 18) + "\" r=\"5\" fill=\"" + kStartColor +
          "\" stroke=\"#000000\" stroke-width=\"1\"/>",
      "start");
  row(line_swatch("#000000", "stroke-width=\"1\" stroke-dasharray=\"3 3\""), gap_text);
  svg << "</g>\n";
  svg << "</svg>\n";
  result.svg = svg.str();
  return result;
}

}  // namespace trackstitch
