#include "lwam/worldgen/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lwam/errors.hpp"

namespace lwam::world {

namespace {

constexpr double kProfileStep = 0.25;
constexpr double kProfileHorizon = 80.0;
constexpr double kIntegrationStep = 0.05;
constexpr double kBlockingClearance = 0.3;

// Arc length at which the ego centre must stop, or +inf.
double stop_point(const WorldSpec& w, double s0, double v0, double time, const ExpertConfig& cfg) {
  double s_stop = w.centerline.length() - 1.0;
  for (const auto& b : w.obstacles) {
    if (w.centerline.distance_to(b) >= kEgoHalfWidth + kBlockingClearance) continue;
    double s_near = std::numeric_limits<double>::infinity();
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0}) s_near = std::min(s_near, w.centerline.project({b.cx + sx * b.hx, b.cy + sy * b.hy}).s);
    if (s_near < s0) continue;
    s_stop = std::min(s_stop, s_near - kEgoHalfLength - cfg.stop_margin);
  }
  if (w.light) {
    const double gap = w.light->s - (s0 + kEgoHalfLength);
    if (gap > 0) {
      const double arrival = gap / std::max(v0, 3.0);
      bool red = false;
      for (double t = 0; t <= arrival + cfg.light_caution && !red; t += 0.1) red = w.light->red_at(time + t);
      const double s_line = w.light->s - kEgoHalfLength - 0.5;
      // Stop only when it is still physically possible.
      if (red && v0 * v0 / (2 * cfg.max_decel) <= s_line - s0) s_stop = std::min(s_stop, s_line);
    }
  }
  return s_stop;
}

}  // namespace

Trajectory expert_policy(const WorldSpec& w, const EgoState& ego, double time, const ExpertConfig& cfg) {
  const auto pr = w.centerline.project({ego.x, ego.y});
  if (std::fabs(pr.lateral) > w.lane_half_width || pr.s < 0) throw DomainError("ego is off the drivable area");
  if (pr.s >= w.centerline.length() - 1.0) throw DomainError("no road remaining ahead of the ego");
  const double s0 = pr.s;
  const double v0 = std::max(ego.v[0], 0.0);
  const double s_stop = stop_point(w, s0, v0, time, cfg);

  const std::size_t n = static_cast<std::size_t>(kProfileHorizon / kProfileStep) + 1;
  std::vector<double> prof(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = s0 + static_cast<double>(k) * kProfileStep;
    const double kappa = std::fabs(w.centerline.curvature_at(s));
    double v = std::min(w.speed_limit, std::sqrt(cfg.lateral_accel / std::max(kappa, 1e-9)));
    if (s >= s_stop) v = 0;
    prof[k] = v;
  }
  for (std::size_t k = n - 1; k-- > 0;)
    prof[k] = std::min(prof[k], std::sqrt(prof[k + 1] * prof[k + 1] + 2 * cfg.comfort_decel * kProfileStep));
  auto profile = [&](double s) {
    const double x = std::clamp((s - s0) / kProfileStep, 0.0, static_cast<double>(n - 1));
    const std::size_t i = std::min(static_cast<std::size_t>(x), n - 2);
    const double f = x - static_cast<double>(i);
    return prof[i] * (1 - f) + prof[i + 1] * f;
  };

  Trajectory traj;
  traj.dt = kTrajDt;
  traj.origin = ego.pose();
  double s = s0, v = v0;
  const int sub = static_cast<int>(std::lround(kTrajDt / kIntegrationStep));
  for (int k = 1; k <= kTrajPoses; ++k) {
    for (int i = 0; i < sub; ++i) {
      const double target = profile(s + v * 0.5);
      const double a = std::clamp((target - v) / 0.5, -cfg.max_decel, cfg.accel);
      const double v_next = std::max(v + a * kIntegrationStep, 0.0);
      s += 0.5 * (v + v_next) * kIntegrationStep;
      v = v_next;
      if (s >= s_stop) {
        s = std::max(s_stop, s0);
        v = 0;
      }
    }
    const double e = pr.lateral * std::exp(-(s - s0) / cfg.lateral_decay);
    const double h = w.centerline.heading_at(s);
    const Vec2 c = w.centerline.point_at(s);
    const Vec2 p{c.x - e * std::sin(h), c.y + e * std::cos(h)};
    const Vec2 local = to_local(traj.origin, p);
    traj.poses.push_back({local.x, local.y, wrap_angle(h - ego.theta)});
  }
  return traj;
}

std::vector<Vec2> plan_points(const Trajectory& traj) {
  std::vector<Vec2> pts{{traj.origin.x, traj.origin.y}};
  for (const auto& p : traj.poses) pts.push_back(to_world(traj.origin, {p.x, p.y}));
  return pts;
}

namespace {

struct PlanGeometry {
  std::vector<Vec2> pts;
  std::vector<double> seg_len, seg_speed;
  double dt = 0.5;
};

// One control step of length h with zero-order-hold acceleration and curvature.
EgoState control_step(const PlanGeometry& g, const EgoState& ego, double h, const SimConfig& cfg) {
  const std::size_t nseg = g.seg_len.size();
  const Vec2 pos{ego.x, ego.y};
  // Closest point on the plan polyline, skipping degenerate segments.
  std::size_t best_k = 0;
  double best_f = 0, best_d2 = std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t k = 0; k < nseg; ++k) {
    if (g.seg_len[k] < 1e-9) continue;
    const Vec2 ab = g.pts[k + 1] - g.pts[k];
    double f = dot(pos - g.pts[k], ab) / (g.seg_len[k] * g.seg_len[k]);
    f = std::clamp(f, 0.0, k + 1 == nseg ? std::numeric_limits<double>::infinity() : 1.0);
    const Vec2 q = g.pts[k] + f * ab;
    const double d2 = dot(pos - q, pos - q);
    if (d2 < best_d2) {
      best_d2 = d2;
      best_k = k;
      best_f = f;
      found = true;
    }
  }

  const double v = std::max(ego.v[0], 0.0);
  double v_target = 0, a_ff = 0, kappa_cmd = 0;
  if (found) {
    const double fr = std::min(best_f, 1.0);
    const double v_next = best_k + 1 < nseg ? g.seg_speed[best_k + 1] : g.seg_speed[best_k];
    v_target = g.seg_speed[best_k] * (1 - fr) + v_next * fr;
    a_ff = best_k + 1 < nseg ? (g.seg_speed[best_k + 1] - g.seg_speed[best_k]) / g.dt : 0.0;

    // Walk the lookahead distance along the plan, extending the final segment if needed.
    double remaining = std::max(cfg.min_lookahead, cfg.lookahead_time * v);
    std::size_t k = best_k;
    double f = best_f;
    Vec2 target;
    while (true) {
      const double left = g.seg_len[k] * (1 - f);
      if (remaining <= left || k + 1 == nseg) {
        const Vec2 dir = (1.0 / g.seg_len[k]) * (g.pts[k + 1] - g.pts[k]);
        target = g.pts[k] + (f * g.seg_len[k] + remaining) * dir;
        break;
      }
      remaining -= std::max(left, 0.0);
      ++k;
      f = 0;
      while (k + 1 < nseg && g.seg_len[k] < 1e-9) ++k;
      if (g.seg_len[k] < 1e-9) {
        target = g.pts[k];
        break;
      }
    }
    const Vec2 local = to_local(ego.pose(), target);
    const double l2 = dot(local, local);
    if (l2 > 1e-12) kappa_cmd = 2 * local.y / l2;
  }

  double a = a_ff + cfg.speed_gain * (v_target - v);
  a = std::clamp(a, -kMaxAccel, kMaxAccel);
  a = std::clamp(a, ego.a[0] - cfg.max_jerk * h, ego.a[0] + cfg.max_jerk * h);

  kappa_cmd = std::clamp(kappa_cmd, -cfg.max_curvature, cfg.max_curvature);
  const double dk = cfg.max_jerk * h / std::max(v * v, 1.0);
  const double kappa = std::clamp(kappa_cmd, ego.curvature - dk, ego.curvature + dk);

  double v_new = v + a * h;
  if (v_new < 0) {
    v_new = 0;
    a = -v / h;
  } else if (v_new > kMaxSpeed) {
    v_new = kMaxSpeed;
    a = (kMaxSpeed - v) / h;
  }
  const double dist = 0.5 * (v + v_new) * h;
  const double dtheta = kappa * dist;

  EgoState out = ego;
  out.x = ego.x + dist * std::cos(ego.theta + 0.5 * dtheta);
  out.y = ego.y + dist * std::sin(ego.theta + 0.5 * dtheta);
  out.theta = wrap_angle(ego.theta + dtheta);
  out.v = {v_new, 0.0};
  out.a = {a, v_new * v_new * kappa};
  out.curvature = kappa;
  return out;
}

}  // namespace

EgoState step_sim(const WorldSpec& w, const EgoState& ego, const Trajectory& traj, double dt_sim,
                  const SimConfig& cfg) {
  if (traj.poses.empty()) throw DomainError("step_sim needs a nonempty trajectory");
  if (!(dt_sim > 0)) throw DomainError("dt_sim must be positive");
  PlanGeometry g;
  g.pts = plan_points(traj);
  g.dt = traj.dt;
  const std::size_t nseg = g.pts.size() - 1;
  g.seg_len.resize(nseg);
  g.seg_speed.resize(nseg);
  for (std::size_t k = 0; k < nseg; ++k) {
    g.seg_len[k] = norm(g.pts[k + 1] - g.pts[k]);
    g.seg_speed[k] = g.seg_len[k] / traj.dt;
  }
  const int n = std::max(1, static_cast<int>(std::ceil(dt_sim / cfg.control_step - 1e-9)));
  const double h = dt_sim / n;
  EgoState out = ego;
  for (int i = 0; i < n; ++i) out = control_step(g, out, h, cfg);
  out.command = command_at(w, w.centerline.project({out.x, out.y}).s);
  return out;
}

}  // namespace lwam::world
