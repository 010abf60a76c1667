#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "lwam/worldgen/sim.hpp"
#include "lwam/worldgen/world.hpp"

namespace lwam::world {

struct PlanResult {
  Trajectory trajectory;
  std::uint64_t candidates_hash = 0;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual PlanResult plan(const WorldSpec& w, const EgoState& ego, double time) = 0;
};

class ExpertPolicy : public Policy {
 public:
  std::string name() const override { return "expert"; }
  PlanResult plan(const WorldSpec& w, const EgoState& ego, double time) override;
};

// Always emits the all-zero trajectory.
class StationaryPolicy : public Policy {
 public:
  std::string name() const override { return "stationary"; }
  PlanResult plan(const WorldSpec& w, const EgoState& ego, double time) override;
};

// FNV-1a over the raw bytes of the values.
std::uint64_t hash_values(const std::vector<double>& values);

struct RolloutRecord {
  double t = 0;
  EgoState ego;
  bool replanned = false;
  Trajectory plan;  // active plan, ego-local at its emission pose
  std::uint64_t candidates_hash = 0;
};

enum class Termination { kRouteComplete, kCollision, kOffRoad, kTimeout };
const char* to_string(Termination t);

struct Rollout {
  std::vector<RolloutRecord> records;
  Termination termination = Termination::kTimeout;
};

struct RolloutConfig {
  double dt_sim = 0.1;
  double replan_interval = 0.5;
  double max_time = 0;  // 0 selects a route-dependent budget
  SimConfig sim;
};

double time_budget(const WorldSpec& w);

Rollout run_closed_loop(const WorldSpec& w, Policy& policy, const RolloutConfig& cfg = {});
Rollout run_closed_loop(const WorldSpec& w, const EgoState& start, Policy& policy, const RolloutConfig& cfg = {});

bool collides(const WorldSpec& w, const EgoState& ego);

// One JSON object per line.
void write_rollout(std::ostream& out, const Rollout& r);
// Throws ParseError naming the 1-based line of the first malformed record.
Rollout read_rollout(std::istream& in);

}  // namespace lwam::world
