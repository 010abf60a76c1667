#pragma once

#include <array>
#include <string>
#include <vector>

#include "lwam/trainer/train.hpp"

namespace lwam::plot {

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::string marker;  // "", "circle" or "square"
};

// Static SVG chart; each series becomes one <polyline> with one point per sample.
std::string line_chart_svg(const std::string& title, const std::vector<Series>& series, bool equal_axes = false);

std::vector<Series> loss_series(const std::vector<train::StepRecord>& log);
std::string loss_csv(const std::vector<train::StepRecord>& log);

struct TrajectoryPair {
  std::string scene;
  std::vector<std::array<double, 2>> expert, predicted;
};
std::string trajectories_to_json(const std::vector<TrajectoryPair>& t);
// Throws ParseError on malformed input.
std::vector<TrajectoryPair> trajectories_from_json(const std::string& text);
std::string trajectory_svg(const TrajectoryPair& t);
std::string trajectory_csv(const TrajectoryPair& t);

std::string attention_to_json(const train::AttentionMap& a, const std::string& scene, int view);
train::AttentionMap attention_from_json(const std::string& text);
// Each query row rescaled to [0, 1] by its own minimum and maximum.
std::vector<double> normalize_rows(const std::vector<double>& w, std::size_t rows, std::size_t cols);
// One heatmap per scene query laid out on the patch grid.
std::string heatmap_svg(const train::AttentionMap& a);
std::string heatmap_csv(const train::AttentionMap& a);

}  // namespace lwam::plot
