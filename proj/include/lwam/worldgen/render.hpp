#pragma once

#include <array>
#include <vector>

#include "lwam/campipe/camera.hpp"
#include "lwam/worldgen/world.hpp"

namespace lwam::world {

inline constexpr int kNumViews = 3;  // left, front, right
inline constexpr int kRasterChannels = 5;  // depth, road, obstacle, marking, background
inline constexpr int kTeacherRaw = 8;
inline constexpr int kTeacherDim = 64;
inline constexpr double kCameraHeight = 1.5;

enum Semantic : int { kRoad = 0, kObstacle = 1, kMarking = 2, kBackground = 3 };

struct RenderConfig {
  int grid_h = 14;
  int grid_w = 28;
  double far_plane = 50.0;

  int patches() const { return grid_h * grid_w; }
};

// Yaw of view m relative to the ego heading.
double view_yaw(int m);

// Intrinsics of the 448x224 crop shared by all views.
cam::Intrinsics view_intrinsics();
cam::Extrinsics view_extrinsics(const EgoState& ego, int m);

struct PatchHit {
  double depth = 1.0;  // camera-frame z divided by the far plane, background = 1
  int semantic = kBackground;
  std::array<double, 3> normal{0, 0, 0};  // world frame
  std::array<double, 3> ray{0, 0, 0};     // unit direction, world frame
  double lane_margin = 0;  // (half-width - |lateral|) / half-width at the hit point
};

struct View {
  cam::Intrinsics K;
  cam::Extrinsics cam_to_world;
  std::vector<double> raster;  // [S, kRasterChannels] row-major, patches in row-major grid order
};

// Ray-casts one ray per patch centre. `time` selects the traffic-light phase; the
// stop line is painted as marking only while the light is red.
std::vector<PatchHit> cast_view(const WorldSpec& w, const EgoState& ego, int m, const RenderConfig& cfg,
                                double time = 0.0);

std::array<View, kNumViews> render_views(const WorldSpec& w, const EgoState& ego, const RenderConfig& cfg = {},
                                         double time = 0.0);

// Fixed lift with orthonormal columns, [kTeacherDim, kTeacherRaw] row-major.
const std::vector<double>& teacher_lift();

std::vector<double> teacher_raw(const EgoState& ego, const PatchHit& hit);

// [S, kTeacherDim] row-major.
std::vector<double> teacher_features(const WorldSpec& w, const EgoState& ego, int m, const RenderConfig& cfg = {},
                                     double time = 0.0);

// Throws DomainError when the ego is too far from the road for rendering.
void check_in_bounds(const WorldSpec& w, const EgoState& ego);

}  // namespace lwam::world
