#pragma once

#include <vector>

#include "lwam/worldgen/world.hpp"

namespace lwam::world {

struct ExpertConfig {
  double comfort_decel = 2.0;
  double max_decel = 5.0;
  double accel = 1.5;
  double lateral_accel = 1.5;   // curvature speed limit
  double lateral_decay = 10.0;  // metres of travel over which a lateral offset decays by 1/e
  double stop_margin = 1.0;     // gap kept to a blocking obstacle or stop line
  double light_caution = 1.0;   // seconds before a red phase treated as red
};

struct SimConfig {
  double max_jerk = 3.5;          // per axis, m/s^3
  double max_curvature = 0.25;
  double wheelbase = 2.8;
  double speed_gain = 2.0;
  double min_lookahead = 3.0;
  double lookahead_time = 0.8;
  double control_step = 0.01;  // internal zero-order-hold period; dt_sim is split into equal steps
};

// Plan for the next 4 s, ego-local at `ego`. `time` selects the traffic-light phase.
Trajectory expert_policy(const WorldSpec& w, const EgoState& ego, double time = 0.0, const ExpertConfig& cfg = {});

// World-frame positions of the plan, prefixed with the origin.
std::vector<Vec2> plan_points(const Trajectory& traj);

// Advances the ego by dt_sim with pure-pursuit steering on the plan and a speed target read
// from the plan spacing at the ego's projected position.
EgoState step_sim(const WorldSpec& w, const EgoState& ego, const Trajectory& traj, double dt_sim,
                  const SimConfig& cfg = {});

}  // namespace lwam::world
