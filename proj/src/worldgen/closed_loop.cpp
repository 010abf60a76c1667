#include "lwam/worldgen/closed_loop.hpp"

#include <cinttypes>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "lwam/errors.hpp"

namespace lwam::world {

PlanResult ExpertPolicy::plan(const WorldSpec& w, const EgoState& ego, double time) {
  PlanResult r;
  r.trajectory = expert_policy(w, ego, time);
  std::vector<double> vals;
  for (const auto& p : r.trajectory.poses) vals.insert(vals.end(), {p.x, p.y, p.theta});
  r.candidates_hash = hash_values(vals);
  return r;
}

PlanResult StationaryPolicy::plan(const WorldSpec&, const EgoState& ego, double) {
  PlanResult r;
  r.trajectory.poses.assign(kTrajPoses, TrajPose{});
  r.trajectory.dt = kTrajDt;
  r.trajectory.origin = ego.pose();
  r.candidates_hash = hash_values(std::vector<double>(3 * kTrajPoses, 0.0));
  return r;
}

std::uint64_t hash_values(const std::vector<double>& values) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

const char* to_string(Termination t) {
  switch (t) {
    case Termination::kRouteComplete: return "route_complete";
    case Termination::kCollision: return "collision";
    case Termination::kOffRoad: return "off_road";
    case Termination::kTimeout: return "timeout";
  }
  return "?";
}

namespace {

Termination parse_termination(const std::string& s, std::size_t line) {
  for (auto t : {Termination::kRouteComplete, Termination::kCollision, Termination::kOffRoad, Termination::kTimeout})
    if (s == to_string(t)) return t;
  throw ParseError("unknown termination '" + s + "'", line);
}

}  // namespace

double time_budget(const WorldSpec& w) { return w.route_length / (0.5 * w.speed_limit) + 20.0; }

bool collides(const WorldSpec& w, const EgoState& ego) {
  const OrientedBox fp = ego.footprint();
  for (const auto& b : w.obstacles)
    if (intersects(fp, b)) return true;
  return false;
}

Rollout run_closed_loop(const WorldSpec& w, Policy& policy, const RolloutConfig& cfg) {
  return run_closed_loop(w, start_state(w), policy, cfg);
}

Rollout run_closed_loop(const WorldSpec& w, const EgoState& start, Policy& policy, const RolloutConfig& cfg) {
  const double max_time = cfg.max_time > 0 ? cfg.max_time : time_budget(w);
  const int replan_every = std::max(1, static_cast<int>(std::lround(cfg.replan_interval / cfg.dt_sim)));
  Rollout out;
  EgoState ego = start;
  PlanResult active;
  for (long step = 0;; ++step) {
    const double t = static_cast<double>(step) * cfg.dt_sim;
    const auto pr = w.centerline.project({ego.x, ego.y});
    bool stop = true;
    if (collides(w, ego)) {
      out.termination = Termination::kCollision;
    } else if (pr.distance > w.lane_half_width) {
      out.termination = Termination::kOffRoad;
    } else if (pr.s >= w.route_length) {
      out.termination = Termination::kRouteComplete;
    } else if (t >= max_time - 1e-9) {
      out.termination = Termination::kTimeout;
    } else {
      stop = false;
    }
    RolloutRecord rec;
    rec.t = t;
    rec.ego = ego;
    if (step == 0 || (!stop && step % replan_every == 0)) {
      active = policy.plan(w, ego, t);
      rec.replanned = true;
    }
    rec.plan = active.trajectory;
    rec.candidates_hash = active.candidates_hash;
    out.records.push_back(std::move(rec));
    if (stop) break;
    ego = step_sim(w, ego, active.trajectory, cfg.dt_sim, cfg.sim);
  }
  return out;
}

void write_rollout(std::ostream& out, const Rollout& r) {
  for (const auto& rec : r.records) {
    nlohmann::json j;
    j["t"] = rec.t;
    j["x"] = rec.ego.x;
    j["y"] = rec.ego.y;
    j["theta"] = rec.ego.theta;
    j["v"] = {rec.ego.v[0], rec.ego.v[1]};
    j["a"] = {rec.ego.a[0], rec.ego.a[1]};
    j["curvature"] = rec.ego.curvature;
    j["command"] = rec.ego.command;
    j["replanned"] = rec.replanned;
    j["origin"] = {rec.plan.origin.x, rec.plan.origin.y, rec.plan.origin.theta};
    j["dt"] = rec.plan.dt;
    auto& poses = j["plan"] = nlohmann::json::array();
    for (const auto& p : rec.plan.poses) poses.push_back({p.x, p.y, p.theta});
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016" PRIx64, rec.candidates_hash);
    j["candidates_hash"] = hex;
    out << j.dump() << '\n';
  }
  out << nlohmann::json{{"termination", to_string(r.termination)}}.dump() << '\n';
}

Rollout read_rollout(std::istream& in) {
  Rollout r;
  std::string line;
  std::size_t lineno = 0;
  bool terminated = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (terminated) throw ParseError("record after the termination line", lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw ParseError("record is not a JSON object", lineno);
      if (j.contains("termination")) {
        r.termination = parse_termination(j.at("termination").get<std::string>(), lineno);
        terminated = true;
        continue;
      }
      RolloutRecord rec;
      rec.t = j.at("t").get<double>();
      rec.ego.x = j.at("x").get<double>();
      rec.ego.y = j.at("y").get<double>();
      rec.ego.theta = j.at("theta").get<double>();
      rec.ego.v = {j.at("v").at(0).get<double>(), j.at("v").at(1).get<double>()};
      rec.ego.a = {j.at("a").at(0).get<double>(), j.at("a").at(1).get<double>()};
      rec.ego.curvature = j.at("curvature").get<double>();
      rec.ego.command = j.at("command").get<int>();
      if (rec.ego.command < 0 || rec.ego.command >= kNumCommands) throw ParseError("command out of range", lineno);
      rec.replanned = j.at("replanned").get<bool>();
      const auto& o = j.at("origin");
      rec.plan.origin = {o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()};
      rec.plan.dt = j.at("dt").get<double>();
      for (const auto& p : j.at("plan"))
        rec.plan.poses.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
      rec.candidates_hash = std::stoull(j.at("candidates_hash").get<std::string>(), nullptr, 16);
      if (!r.records.empty() && !(rec.t > r.records.back().t)) throw ParseError("timestamps must increase", lineno);
      r.records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed rollout record: ") + e.what(), lineno);
    } catch (const std::invalid_argument&) {
      throw ParseError("malformed candidates hash", lineno);
    } catch (const std::out_of_range&) {
      throw ParseError("malformed candidates hash", lineno);
    }
  }
  if (!terminated) throw ParseError("missing termination line", lineno + 1);
  if (r.records.empty()) throw ParseError("rollout has no records", lineno);
  return r;
}

}  // namespace lwam::world
