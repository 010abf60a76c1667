#include "lwam/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>

#include "json.hpp"
#include "lwam/errors.hpp"
#include "lwam/worldgen/sim.hpp"

namespace lwam::metrics {

using world::Rollout;
using world::WorldSpec;

namespace {

void check_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw DomainError(std::string("sub-score ") + name + " outside [0, 1]");
}

double route_s(const WorldSpec& w, const world::EgoState& e) {
  return std::clamp(w.centerline.project({e.x, e.y}).s, 0.0, w.route_length);
}

bool ttc_clear(const WorldSpec& w, const world::EgoState& e, const MetricConfig& cfg) {
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  const double vx = e.v[0] * c - e.v[1] * s, vy = e.v[0] * s + e.v[1] * c;
  const int steps = static_cast<int>(std::lround(cfg.ttc_horizon / cfg.ttc_step));
  for (int k = 1; k <= steps; ++k) {
    const double tau = k * cfg.ttc_step;
    world::EgoState p = e;
    p.x += vx * tau;
    p.y += vy * tau;
    if (world::collides(w, p)) return false;
  }
  return true;
}

// Mean displacement between two consecutive plans over their overlapping horizon.
double plan_disagreement(const world::RolloutRecord& a, const world::RolloutRecord& b) {
  const auto pa = world::plan_points(a.plan);
  const auto pb = world::plan_points(b.plan);
  const double horizon = a.t + a.plan.dt * static_cast<double>(a.plan.poses.size());
  double sum = 0;
  int n = 0;
  for (std::size_t j = 1; j < pb.size(); ++j) {
    const double tau = b.t + b.plan.dt * static_cast<double>(j);
    if (tau > horizon + 1e-9) break;
    const double x = (tau - a.t) / a.plan.dt;
    const std::size_t i = std::min(static_cast<std::size_t>(x), pa.size() - 2);
    const double f = x - static_cast<double>(i);
    const world::Vec2 q = pa[i] + f * (pa[i + 1] - pa[i]);
    sum += world::norm(q - pb[j]);
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

void SubScores::validate() const {
  check_unit(nc, "NC");
  check_unit(dac, "DAC");
  check_unit(ddc, "DDC");
  check_unit(tlc, "TLC");
  check_unit(ep, "EP");
  check_unit(ttc, "TTC");
  check_unit(lk, "LK");
  check_unit(hc, "HC");
  check_unit(ec, "EC");
  check_unit(com, "COM");
}

double epdms(const SubScores& s) {
  s.validate();
  return s.nc * s.dac * s.ddc * s.tlc * (5 * (s.ep + s.ttc) + 2 * (s.lk + s.hc + s.ec)) / 16;
}

double hd_frame(const SubScores& s) {
  s.validate();
  return s.nc * s.dac * (5 * s.ttc + 2 * s.com) / 7;
}

double hd_score(const std::vector<double>& per_frame, double route_completion) {
  if (per_frame.empty()) throw DomainError("hd_score needs at least one frame");
  check_unit(route_completion, "R_c");
  for (double f : per_frame) check_unit(f, "HD_t");
  return route_completion * mean(per_frame);
}

double rollout_progress(const WorldSpec& w, const Rollout& r) {
  if (r.records.empty()) throw DomainError("empty rollout");
  const double s0 = route_s(w, r.records.front().ego);
  double s_max = s0;
  for (const auto& rec : r.records) s_max = std::max(s_max, route_s(w, rec.ego));
  return s_max - s0;
}

double expert_progress(const WorldSpec& w) {
  world::ExpertPolicy expert;
  return rollout_progress(w, world::run_closed_loop(w, expert));
}

MetricReport evaluate_rollout(const WorldSpec& w, const Rollout& r, double expert_prog, const MetricConfig& cfg) {
  if (r.records.empty()) throw DomainError("empty rollout");
  MetricReport rep;
  rep.termination = world::to_string(r.termination);
  SubScores& s = rep.scores;
  const double hw = w.lane_half_width;
  bool nc = true, dac = true, ddc = true, tlc = true, lk = true, hc = true;
  std::vector<double> ttc_frames;
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const auto& rec = r.records[i];
    const auto pr = w.centerline.project({rec.ego.x, rec.ego.y});
    const bool nc_t = !world::collides(w, rec.ego);
    const bool dac_t = pr.distance <= hw;
    const bool ttc_t = ttc_clear(w, rec.ego, cfg);
    double jerk = 0;
    if (i > 0) {
      const auto& prev = r.records[i - 1];
      const double dt = rec.t - prev.t;
      jerk = std::hypot(rec.ego.a[0] - prev.ego.a[0], rec.ego.a[1] - prev.ego.a[1]) / dt;
      if (w.light) {
        const double f0 = prev.ego.v[0] >= 0 ? route_s(w, prev.ego) + world::kEgoHalfLength : 0;
        const double f1 = route_s(w, rec.ego) + world::kEgoHalfLength;
        if (f0 < w.light->s && f1 >= w.light->s && w.light->red_at(rec.t)) tlc = false;
      }
    }
    const bool com_t = std::hypot(rec.ego.a[0], rec.ego.a[1]) <= cfg.max_accel && jerk <= cfg.max_jerk;
    nc = nc && nc_t;
    dac = dac && dac_t;
    ddc = ddc && std::fabs(world::wrap_angle(rec.ego.theta - pr.heading)) <= cfg.ddc_max_angle;
    lk = lk && pr.distance <= hw - world::kEgoHalfWidth;
    hc = hc && com_t;
    ttc_frames.push_back(ttc_t ? 1.0 : 0.0);
    SubScores f;
    f.nc = nc_t;
    f.dac = dac_t;
    f.ttc = ttc_t;
    f.com = com_t;
    rep.hd_frames.push_back(hd_frame(f));
  }
  int pairs = 0, agreeing = 0;
  const world::RolloutRecord* last_plan = nullptr;
  for (const auto& rec : r.records) {
    if (!rec.replanned) continue;
    if (last_plan) {
      ++pairs;
      if (plan_disagreement(*last_plan, rec) <= cfg.ec_threshold) ++agreeing;
    }
    last_plan = &rec;
  }
  const double ec = pairs > 0 ? static_cast<double>(agreeing) / pairs : 1.0;

  rep.progress = rollout_progress(w, r);
  const double s0 = route_s(w, r.records.front().ego);
  const double remaining = w.route_length - s0;
  rep.route_completion = remaining > 0 ? std::clamp(rep.progress / remaining, 0.0, 1.0) : 1.0;
  s.nc = nc;
  s.dac = dac;
  s.ddc = ddc;
  s.tlc = tlc;
  s.ep = expert_prog > 0 ? std::clamp(rep.progress / expert_prog, 0.0, 1.0) : 1.0;
  s.ttc = mean(ttc_frames);
  s.lk = lk;
  s.hc = hc;
  s.ec = ec;
  s.com = hc;
  rep.epdms = epdms(s);
  rep.hd_score = hd_score(rep.hd_frames, rep.route_completion);
  return rep;
}

MetricReport evaluate_rollout(const WorldSpec& w, const Rollout& r, const MetricConfig& cfg) {
  if (r.records.empty()) throw DomainError("empty rollout");
  world::ExpertPolicy expert;
  const Rollout ref = world::run_closed_loop(w, r.records.front().ego, expert);
  return evaluate_rollout(w, r, rollout_progress(w, ref), cfg);
}

MetricReport evaluate_rollout_log(const WorldSpec& w, std::istream& log, const MetricConfig& cfg) {
  return evaluate_rollout(w, world::read_rollout(log), cfg);
}

std::string report_json(const MetricReport& r) {
  const SubScores& s = r.scores;
  nlohmann::json j{{"scenario", r.scenario}, {"NC", s.nc},   {"DAC", s.dac}, {"DDC", s.ddc},
                   {"TLC", s.tlc},           {"EP", s.ep},   {"TTC", s.ttc}, {"LK", s.lk},
                   {"HC", s.hc},             {"EC", s.ec},   {"COM", s.com}, {"EPDMS", r.epdms},
                   {"HD_Score", r.hd_score}, {"RC", r.route_completion},    {"termination", r.termination},
                   {"hd_frames", r.hd_frames}};
  return j.dump();
}

namespace {

std::string fmt_row(const std::vector<double>& vals) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < vals.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.4f", i ? "," : "", 100.0 * vals[i]);
    out += buf;
  }
  return out;
}

}  // namespace

std::string table1_header() { return "NC,DAC,DDC,TLC,EP,TTC,LK,HC,EC,EPDMS"; }

std::string table1_row(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw DomainError("no reports to aggregate");
  std::vector<double> acc(10, 0.0);
  for (const auto& r : reports) {
    const SubScores& s = r.scores;
    const double v[10] = {s.nc, s.dac, s.ddc, s.tlc, s.ep, s.ttc, s.lk, s.hc, s.ec, r.epdms};
    for (int i = 0; i < 10; ++i) acc[static_cast<std::size_t>(i)] += v[i] / static_cast<double>(reports.size());
  }
  return fmt_row(acc);
}

std::string closed_loop_header() { return "RC,HD-Score"; }

std::string closed_loop_row(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw DomainError("no reports to aggregate");
  std::vector<double> acc(2, 0.0);
  for (const auto& r : reports) {
    acc[0] += r.route_completion / static_cast<double>(reports.size());
    acc[1] += r.hd_score / static_cast<double>(reports.size());
  }
  return fmt_row(acc);
}

}  // namespace lwam::metrics
