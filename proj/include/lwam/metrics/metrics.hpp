#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lwam/worldgen/closed_loop.hpp"
#include "lwam/worldgen/world.hpp"

namespace lwam::metrics {

struct SubScores {
  double nc = 1, dac = 1, ddc = 1, tlc = 1;
  double ep = 1, ttc = 1, lk = 1, hc = 1, ec = 1, com = 1;

  // Throws DomainError for values outside [0, 1].
  void validate() const;
};

// NC*DAC*DDC*TLC*(5(EP+TTC) + 2(LK+HC+EC))/16
double epdms(const SubScores& s);
// NC*DAC*(5*TTC + 2*COM)/7
double hd_frame(const SubScores& s);
// R_c * mean(per_frame)
double hd_score(const std::vector<double>& per_frame, double route_completion);

struct MetricConfig {
  double ttc_horizon = 1.0;
  double ttc_step = 0.1;
  double max_accel = 3.0;
  double max_jerk = 5.0;
  double ec_threshold = 0.5;
  double ddc_max_angle = 1.5707963267948966;
};

struct MetricReport {
  std::string scenario;
  SubScores scores;
  double epdms = 0;
  double hd_score = 0;
  double route_completion = 0;
  double progress = 0;
  std::vector<double> hd_frames;
  std::string termination;
};

// EC is the fraction of consecutive replan pairs whose mean displacement over the shared horizon is
// within ec_threshold.

// Arc length advanced along the route, measured from the first record.
double rollout_progress(const world::WorldSpec& w, const world::Rollout& r);
double expert_progress(const world::WorldSpec& w);

MetricReport evaluate_rollout(const world::WorldSpec& w, const world::Rollout& r, double expert_progress,
                              const MetricConfig& cfg = {});
// Runs the expert from the rollout's start state to obtain the progress reference.
MetricReport evaluate_rollout(const world::WorldSpec& w, const world::Rollout& r, const MetricConfig& cfg = {});
// Parses a JSONL rollout log; malformed input raises ParseError with the line number.
MetricReport evaluate_rollout_log(const world::WorldSpec& w, std::istream& log, const MetricConfig& cfg = {});

std::string report_json(const MetricReport& r);

// NC, DAC, DDC, TLC, EP, TTC, LK, HC, EC, EPDMS; scenario means scaled by 100.
std::string table1_header();
std::string table1_row(const std::vector<MetricReport>& reports);
// RC, HD-Score; scenario means scaled by 100.
std::string closed_loop_header();
std::string closed_loop_row(const std::vector<MetricReport>& reports);

}  // namespace lwam::metrics
