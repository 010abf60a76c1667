#include "lwam/worldgen/geometry.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <numbers>

#include "lwam/errors.hpp"

namespace lwam::world {

double wrap_angle(double a) {
  a = std::remainder(a, 2 * std::numbers::pi);
  return a <= -std::numbers::pi ? a + 2 * std::numbers::pi : a;
}

Vec2 to_local(const Pose& o, Vec2 p) {
  const double c = std::cos(o.theta), s = std::sin(o.theta);
  const double dx = p.x - o.x, dy = p.y - o.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Vec2 to_world(const Pose& o, Vec2 p) {
  const double c = std::cos(o.theta), s = std::sin(o.theta);
  return {o.x + c * p.x - s * p.y, o.y + s * p.x + c * p.y};
}

bool intersects(const OrientedBox& a, const Box& b) {
  const double c = std::cos(a.pose.theta), s = std::sin(a.pose.theta);
  const Vec2 u{c, s}, v{-s, c};
  const Vec2 d{b.cx - a.pose.x, b.cy - a.pose.y};
  // Separating axis test over the two box normals of each rectangle.
  const std::array<Vec2, 4> axes{Vec2{1, 0}, Vec2{0, 1}, u, v};
  for (const Vec2& ax : axes) {
    const double ra = a.half_length * std::fabs(dot(u, ax)) + a.half_width * std::fabs(dot(v, ax));
    const double rb = b.hx * std::fabs(ax.x) + b.hy * std::fabs(ax.y);
    if (std::fabs(dot(d, ax)) > ra + rb) return false;
  }
  return true;
}

double distance(Vec2 p, const Box& b) {
  const double dx = std::max(std::fabs(p.x - b.cx) - b.hx, 0.0);
  const double dy = std::max(std::fabs(p.y - b.cy) - b.hy, 0.0);
  return std::hypot(dx, dy);
}

namespace {

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (a + t * ab));
}

bool inside(Vec2 p, const Box& b) { return std::fabs(p.x - b.cx) <= b.hx && std::fabs(p.y - b.cy) <= b.hy; }

}  // namespace

bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const double d1 = cross(b - a, c - a), d2 = cross(b - a, d - a);
  const double d3 = cross(d - c, a - c), d4 = cross(d - c, b - c);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  auto on = [](Vec2 p, Vec2 q, Vec2 r, double cr) {
    return cr == 0 && std::min(p.x, q.x) <= r.x && r.x <= std::max(p.x, q.x) && std::min(p.y, q.y) <= r.y &&
           r.y <= std::max(p.y, q.y);
  };
  return on(a, b, c, d1) || on(a, b, d, d2) || on(c, d, a, d3) || on(c, d, b, d4);
}

double segment_distance(Vec2 a, Vec2 b, const Box& box) {
  if (inside(a, box) || inside(b, box)) return 0.0;
  const std::array<Vec2, 4> corners{Vec2{box.cx - box.hx, box.cy - box.hy}, Vec2{box.cx + box.hx, box.cy - box.hy},
                                    Vec2{box.cx + box.hx, box.cy + box.hy}, Vec2{box.cx - box.hx, box.cy + box.hy}};
  double best = std::min(distance(a, box), distance(b, box));
  for (int i = 0; i < 4; ++i) {
    if (segments_intersect(a, b, corners[i], corners[(i + 1) % 4])) return 0.0;
    best = std::min(best, point_segment_distance(corners[i], a, b));
  }
  return best;
}

Polyline::Polyline(std::vector<Vec2> points) : pts_(std::move(points)) {
  if (pts_.size() < 2) throw DomainError("polyline needs at least two points");
  cum_.resize(pts_.size());
  cum_[0] = 0;
  for (std::size_t i = 1; i < pts_.size(); ++i) {
    const double d = norm(pts_[i] - pts_[i - 1]);
    if (d <= 0) throw DomainError("polyline has repeated points");
    cum_[i] = cum_[i - 1] + d;
  }
}

std::size_t Polyline::segment_at(double s) const {
  auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
  std::size_t i = it == cum_.begin() ? 0 : static_cast<std::size_t>(it - cum_.begin()) - 1;
  return std::min(i, pts_.size() - 2);
}

Vec2 Polyline::point_at(double s) const {
  const std::size_t i = segment_at(s);
  const double seg = cum_[i + 1] - cum_[i];
  // Extrapolate linearly past either end so callers can look beyond the road.
  const double t = (s - cum_[i]) / seg;
  return pts_[i] + t * (pts_[i + 1] - pts_[i]);
}

double Polyline::heading_at(double s) const {
  const std::size_t i = segment_at(s);
  const Vec2 d = pts_[i + 1] - pts_[i];
  return std::atan2(d.y, d.x);
}

double Polyline::curvature_at(double s) const {
  const double h = 1.0;
  const double a = heading_at(std::clamp(s - h, 0.0, length()));
  const double b = heading_at(std::clamp(s + h, 0.0, length()));
  return wrap_angle(b - a) / (2 * h);
}

Polyline::Projection Polyline::project(Vec2 p) const {
  Projection best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < pts_.size(); ++i) {
    const Vec2 a = pts_[i], ab = pts_[i + 1] - pts_[i];
    const double len2 = dot(ab, ab);
    double t = dot(p - a, ab) / len2;
    // Open ends: let the first and last segments extend so off-end points keep a signed offset.
    if (i > 0) t = std::max(t, 0.0);
    if (i + 2 < pts_.size()) t = std::min(t, 1.0);
    const Vec2 q = a + t * ab;
    const double d2 = dot(p - q, p - q);
    if (d2 < best_d2) {
      best_d2 = d2;
      const double len = std::sqrt(len2);
      best.s = cum_[i] + t * len;
      best.heading = std::atan2(ab.y, ab.x);
      best.distance = std::sqrt(d2);
      best.lateral = cross(ab, p - a) >= 0 ? best.distance : -best.distance;
    }
  }
  return best;
}

double Polyline::distance_to(const Box& b) const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < pts_.size(); ++i) best = std::min(best, segment_distance(pts_[i], pts_[i + 1], b));
  return best;
}

bool Polyline::is_simple() const {
  for (std::size_t i = 0; i + 1 < pts_.size(); ++i)
    for (std::size_t j = i + 2; j + 1 < pts_.size(); ++j)
      if (segments_intersect(pts_[i], pts_[i + 1], pts_[j], pts_[j + 1])) return false;
  return true;
}

}  // namespace lwam::world
