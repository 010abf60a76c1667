#pragma once

#include <cmath>
#include <vector>

namespace lwam::world {

struct Vec2 {
  double x = 0, y = 0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

struct Pose {
  double x = 0, y = 0, theta = 0;
};

// Expresses a world point in the frame of `origin` and back.
Vec2 to_local(const Pose& origin, Vec2 p);
Vec2 to_world(const Pose& origin, Vec2 p);

// Axis-aligned rectangle given by centre and half-extents.
struct Box {
  double cx = 0, cy = 0, hx = 0, hy = 0;
};

// Oriented rectangle: centre pose plus half-length (along heading) and half-width.
struct OrientedBox {
  Pose pose;
  double half_length = 0, half_width = 0;
};

bool intersects(const OrientedBox& a, const Box& b);
double distance(Vec2 p, const Box& b);
double segment_distance(Vec2 a, Vec2 b, const Box& box);
bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d);

class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Vec2> points);

  const std::vector<Vec2>& points() const { return pts_; }
  double length() const { return cum_.empty() ? 0.0 : cum_.back(); }
  Vec2 point_at(double s) const;
  double heading_at(double s) const;
  // Signed curvature from the heading change of the surrounding 1 m window.
  double curvature_at(double s) const;

  struct Projection {
    double s = 0;        // arc length of the closest point
    double lateral = 0;  // signed offset, positive to the left of the direction of travel
    double heading = 0;  // tangent heading at s
    double distance = 0;
  };
  Projection project(Vec2 p) const;

  // Minimum distance from any segment to the box.
  double distance_to(const Box& b) const;
  bool is_simple() const;

 private:
  std::size_t segment_at(double s) const;

  std::vector<Vec2> pts_;
  std::vector<double> cum_;
};

}  // namespace lwam::world
