#pragma once

// Top-down SVG figures of trajectories (and optionally a fused cloud).
// Output is a pure function of the inputs: fixed-precision coordinates, no
// timestamps, no locale dependence.

#include <optional>
#include <string>
#include <vector>

#include "trackstitch/eval.h"
#include "trackstitch/types.h"

namespace trackstitch {

struct PlotSeries {
  std::string label;
  Trajectory trajectory;
};

struct PlotOptions {
  std::string title;
  int width = 800;      // px; height follows from the data aspect
  int margin = 40;      // px
  Alignment align = Alignment::kSim3;  // estimates onto ground truth, when given
  int max_cloud_points = 20000;
};

struct PlotResult {
  std::string svg;
  double endpoint_gap = 0.0;  // first series, after alignment
};

// Throws kInvalidArgument without series or with an empty trajectory.
PlotResult RenderPlot(const std::vector<PlotSeries>& estimates,
                      const std::optional<Trajectory>& ground_truth,
                      const std::vector<CloudPoint>& cloud, const PlotOptions& options);

}  // namespace trackstitch
