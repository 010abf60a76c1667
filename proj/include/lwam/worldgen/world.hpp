#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lwam/worldgen/geometry.hpp"

namespace lwam::world {

enum class Difficulty { E, M, H, X };

Difficulty parse_difficulty(std::string_view s);
const char* to_string(Difficulty d);

enum Command : int { kLeft = 0, kStraight = 1, kRight = 2, kUnknown = 3 };
inline constexpr int kNumCommands = 4;
const char* command_name(int c);

inline constexpr double kLaneHalfWidth = 2.0;
inline constexpr double kEgoHalfWidth = 0.9;
inline constexpr double kEgoHalfLength = 2.2;
inline constexpr double kObstacleHeight = 1.5;
inline constexpr double kRoadExtension = 60.0;  // road continues past the route end
inline constexpr double kMaxSpeed = 15.0;
inline constexpr double kMaxAccel = 5.0;

struct TrafficLight {
  double s = 0;  // arc length of the stop line
  double cycle = 1;
  double red_start = 0;  // offset of the red phase within the cycle
  double red_duration = 0;

  bool red_at(double t) const;
};

struct WorldSpec {
  std::uint64_t seed = 0;
  Difficulty difficulty = Difficulty::E;
  Polyline centerline;
  double lane_half_width = kLaneHalfWidth;
  double route_length = 0;
  double speed_limit = 8;
  std::vector<Box> obstacles;
  std::optional<TrafficLight> light;

  // Throws DomainError when a structural invariant fails.
  void validate() const;
};

struct EgoState {
  double x = 0, y = 0, theta = 0;
  std::array<double, 2> v{0, 0};  // longitudinal, lateral (ego frame)
  std::array<double, 2> a{0, 0};
  int command = kStraight;
  double curvature = 0;  // path curvature currently commanded

  Pose pose() const { return {x, y, theta}; }
  OrientedBox footprint() const { return {pose(), kEgoHalfLength, kEgoHalfWidth}; }
};

struct TrajPose {
  double x = 0, y = 0, theta = 0;
};

// Poses are expressed in the ego frame of `origin`, the world pose at emission.
struct Trajectory {
  std::vector<TrajPose> poses;
  double dt = 0.5;
  Pose origin;

  void validate(std::size_t expected_count) const;
};

inline constexpr int kTrajPoses = 8;
inline constexpr double kTrajDt = 0.5;

WorldSpec generate_world(std::uint64_t seed, Difficulty difficulty);

// Navigation command from the route geometry ahead of arc length s.
int command_at(const WorldSpec& w, double s);

// Initial state used by corpus generation and closed-loop evaluation.
EgoState start_state(const WorldSpec& w);

std::string world_to_json(const WorldSpec& w);
WorldSpec world_from_json(const std::string& text);

}  // namespace lwam::world
