#include "lwam/worldgen/render.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "lwam/errors.hpp"

namespace lwam::world {

namespace {

constexpr double kMarkingBand = 0.2;
constexpr double kStopLineHalfWidth = 0.3;
constexpr double kBoundsMargin = 60.0;

using V3 = std::array<double, 3>;

struct BoxHit {
  double t = std::numeric_limits<double>::infinity();
  V3 normal{0, 0, 0};
};

// Slab test against an upright box standing on the ground plane.
BoxHit intersect_box(const V3& o, const V3& d, const Box& b) {
  const double lo[3] = {b.cx - b.hx, b.cy - b.hy, 0.0};
  const double hi[3] = {b.cx + b.hx, b.cy + b.hy, kObstacleHeight};
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  int enter_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0) {
      if (o[a] < lo[a] || o[a] > hi[a]) return {};
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a];
    double t1 = (hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_enter) {
      t_enter = t0;
      enter_axis = a;
    }
    t_exit = std::min(t_exit, t1);
  }
  if (enter_axis < 0 || t_enter > t_exit || t_enter <= 0) return {};
  BoxHit hit;
  hit.t = t_enter;
  hit.normal[enter_axis] = d[enter_axis] > 0 ? -1.0 : 1.0;
  return hit;
}

}  // namespace

double view_yaw(int m) {
  static const double yaws[kNumViews] = {std::numbers::pi / 3, 0.0, -std::numbers::pi / 3};
  if (m < 0 || m >= kNumViews) throw DomainError("view index out of range");
  return yaws[m];
}

cam::Intrinsics view_intrinsics() {
  return cam::adjust_intrinsics({945, 945, 960, 540}, {1920, 1080}, {455, 256}, {448, 224});
}

cam::Extrinsics view_extrinsics(const EgoState& ego, int m) {
  const double psi = ego.theta + view_yaw(m);
  const double s = std::sin(psi), c = std::cos(psi);
  cam::Extrinsics e;
  // Columns: camera right, down, forward in world coordinates.
  e.rotation = {s, 0, c, -c, 0, s, 0, -1, 0};
  e.translation = {ego.x, ego.y, kCameraHeight};
  return e;
}

void check_in_bounds(const WorldSpec& w, const EgoState& ego) {
  if (!std::isfinite(ego.x) || !std::isfinite(ego.y) || !std::isfinite(ego.theta))
    throw DomainError("ego pose is not finite");
  const auto pr = w.centerline.project({ego.x, ego.y});
  if (pr.distance > w.lane_half_width + kBoundsMargin || pr.s < -kBoundsMargin ||
      pr.s > w.centerline.length() + kBoundsMargin)
    throw DomainError("ego is outside the world bounds");
}

std::vector<PatchHit> cast_view(const WorldSpec& w, const EgoState& ego, int m, const RenderConfig& cfg, double time) {
  if (cfg.grid_h <= 0 || cfg.grid_w <= 0 || !(cfg.far_plane > 0)) throw ConfigError("invalid render config");
  check_in_bounds(w, ego);
  const cam::Intrinsics K = view_intrinsics();
  const cam::Extrinsics E = view_extrinsics(ego, m);
  const auto& R = E.rotation;
  const V3 o = E.translation;
  const double pw = 448.0 / cfg.grid_w, ph = 224.0 / cfg.grid_h;
  const bool red = w.light && w.light->red_at(time);

  std::vector<PatchHit> hits(static_cast<std::size_t>(cfg.patches()));
  for (int i = 0; i < cfg.grid_h; ++i) {
    for (int j = 0; j < cfg.grid_w; ++j) {
      PatchHit& h = hits[static_cast<std::size_t>(i * cfg.grid_w + j)];
      const double u = (j + 0.5) * pw, v = (i + 0.5) * ph;
      const V3 dc{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
      // World direction scaled so the ray parameter equals camera-frame depth.
      const V3 d{R[0] * dc[0] + R[1] * dc[1] + R[2] * dc[2], R[3] * dc[0] + R[4] * dc[1] + R[5] * dc[2],
                 R[6] * dc[0] + R[7] * dc[1] + R[8] * dc[2]};
      const double dn = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
      h.ray = {d[0] / dn, d[1] / dn, d[2] / dn};

      BoxHit best;
      for (const auto& b : w.obstacles) {
        const BoxHit bh = intersect_box(o, d, b);
        if (bh.t < best.t) best = bh;
      }
      const double t_ground = d[2] < 0 ? -o[2] / d[2] : std::numeric_limits<double>::infinity();
      if (best.t < t_ground) {
        if (best.t <= cfg.far_plane) {
          h.depth = best.t / cfg.far_plane;
          h.semantic = kObstacle;
          h.normal = best.normal;
          const auto pr = w.centerline.project({o[0] + best.t * d[0], o[1] + best.t * d[1]});
          h.lane_margin = (w.lane_half_width - pr.distance) / w.lane_half_width;
        }
        continue;
      }
      if (t_ground > cfg.far_plane) continue;
      const auto pr = w.centerline.project({o[0] + t_ground * d[0], o[1] + t_ground * d[1]});
      if (pr.distance > w.lane_half_width || pr.s < 0 || pr.s > w.centerline.length()) continue;
      h.depth = t_ground / cfg.far_plane;
      h.normal = {0, 0, 1};
      h.lane_margin = (w.lane_half_width - pr.distance) / w.lane_half_width;
      const bool edge = pr.distance >= w.lane_half_width - kMarkingBand;
      const bool stop_line = red && std::fabs(pr.s - w.light->s) <= kStopLineHalfWidth;
      h.semantic = edge || stop_line ? kMarking : kRoad;
    }
  }
  return hits;
}

std::array<View, kNumViews> render_views(const WorldSpec& w, const EgoState& ego, const RenderConfig& cfg,
                                         double time) {
  std::array<View, kNumViews> views;
  for (int m = 0; m < kNumViews; ++m) {
    View& view = views[static_cast<std::size_t>(m)];
    view.K = view_intrinsics();
    view.cam_to_world = view_extrinsics(ego, m);
    const auto hits = cast_view(w, ego, m, cfg, time);
    view.raster.assign(hits.size() * kRasterChannels, 0.0);
    for (std::size_t p = 0; p < hits.size(); ++p) {
      view.raster[p * kRasterChannels] = hits[p].depth;
      view.raster[p * kRasterChannels + 1 + static_cast<std::size_t>(hits[p].semantic)] = 1.0;
    }
  }
  return views;
}

const std::vector<double>& teacher_lift() {
  static const std::vector<double> lift = [] {
    std::mt19937_64 rng(0x7eac4e25eedULL);
    std::normal_distribution<double> n(0, 1);
    std::vector<double> cols(kTeacherRaw * kTeacherDim);
    for (auto& x : cols) x = n(rng);
    // Modified Gram-Schmidt, two passes, over columns stored contiguously.
    for (int pass = 0; pass < 2; ++pass) {
      for (int c = 0; c < kTeacherRaw; ++c) {
        double* col = &cols[static_cast<std::size_t>(c * kTeacherDim)];
        for (int p = 0; p < c; ++p) {
          const double* prev = &cols[static_cast<std::size_t>(p * kTeacherDim)];
          double proj = 0;
          for (int i = 0; i < kTeacherDim; ++i) proj += col[i] * prev[i];
          for (int i = 0; i < kTeacherDim; ++i) col[i] -= proj * prev[i];
        }
        double nrm = 0;
        for (int i = 0; i < kTeacherDim; ++i) nrm += col[i] * col[i];
        nrm = std::sqrt(nrm);
        for (int i = 0; i < kTeacherDim; ++i) col[i] /= nrm;
      }
    }
    std::vector<double> out(kTeacherDim * kTeacherRaw);
    for (int r = 0; r < kTeacherDim; ++r)
      for (int c = 0; c < kTeacherRaw; ++c)
        out[static_cast<std::size_t>(r * kTeacherRaw + c)] = cols[static_cast<std::size_t>(c * kTeacherDim + r)];
    return out;
  }();
  return lift;
}

std::vector<double> teacher_raw(const EgoState& ego, const PatchHit& hit) {
  const double c = std::cos(ego.theta), s = std::sin(ego.theta);
  auto to_ego = [&](const V3& v) { return V3{c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]}; };
  const V3 n = to_ego(hit.normal), r = to_ego(hit.ray);
  return {hit.depth, n[0], n[1], n[2], r[0], r[1], r[2], hit.lane_margin};
}

std::vector<double> teacher_features(const WorldSpec& w, const EgoState& ego, int m, const RenderConfig& cfg,
                                     double time) {
  const auto hits = cast_view(w, ego, m, cfg, time);
  const auto& lift = teacher_lift();
  std::vector<double> out(hits.size() * kTeacherDim, 0.0);
  for (std::size_t p = 0; p < hits.size(); ++p) {
    const auto raw = teacher_raw(ego, hits[p]);
    for (int r = 0; r < kTeacherDim; ++r) {
      double acc = 0;
      for (int k = 0; k < kTeacherRaw; ++k) acc += lift[static_cast<std::size_t>(r * kTeacherRaw + k)] * raw[static_cast<std::size_t>(k)];
      out[p * kTeacherDim + static_cast<std::size_t>(r)] = acc;
    }
  }
  return out;
}

}  // namespace lwam::world
