#pragma once

#include <array>

namespace lwam::cam {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;   // row-major
using Mat4 = std::array<double, 16>;  // row-major homogeneous

struct ImageSize {
  int width = 0;
  int height = 0;
};

struct Intrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;

  // [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]
  Mat3 matrix() const { return {fx, 0, cx, 0, fy, cy, 0, 0, 1}; }
};

// Camera-to-world rigid transform.
struct Extrinsics {
  Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 translation{0, 0, 0};

  Mat4 matrix() const;
  // Throws ContractError unless R^T R = I and det R = +1 to 1e-9.
  void validate() const;
};

// Scale and centre-crop offsets for a resize followed by a centre crop.
struct ResizeCrop {
  double sx = 1, sy = 1;
  double dx = 0, dy = 0;
};

ResizeCrop resize_crop(ImageSize orig, ImageSize resized, ImageSize crop);

// Intrinsics after resizing `orig` to `resized` then centre-cropping to `crop`.
// Offsets stay fractional; a 455-wide resize cropped to 448 shifts by 3.5 px.
Intrinsics adjust_intrinsics(const Intrinsics& k, ImageSize orig, ImageSize resized, ImageSize crop);

// Closed-form rigid inverse [R^T, -R^T t; 0, 1].
Mat4 world_to_camera(const Extrinsics& cam_to_world);

struct Pixel {
  double u = 0, v = 0;
};

Vec3 transform_point(const Mat4& t, const Vec3& p);
Mat4 compose(const Mat4& a, const Mat4& b);

// Pinhole projection; throws DomainError for points with camera z <= 0.
Pixel project(const Intrinsics& k, const Mat4& world_to_cam, const Vec3& p_world);

// Point at camera-frame depth z along the ray through `px`, in world coordinates.
Vec3 unproject(const Intrinsics& k, const Mat4& cam_to_world, Pixel px, double depth);

}  // namespace lwam::cam
