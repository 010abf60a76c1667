#include "lwam/campipe/camera.hpp"

#include <cmath>

#include "lwam/errors.hpp"

namespace lwam::cam {

Mat4 Extrinsics::matrix() const {
  const auto& R = rotation;
  const auto& t = translation;
  return {R[0], R[1], R[2], t[0], R[3], R[4], R[5], t[1], R[6], R[7], R[8], t[2], 0, 0, 0, 1};
}

void Extrinsics::validate() const {
  const auto& R = rotation;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += R[k * 3 + i] * R[k * 3 + j];
      if (std::fabs(s - (i == j ? 1.0 : 0.0)) > 1e-9) throw ContractError("extrinsic rotation is not orthonormal");
    }
  }
  const double det = R[0] * (R[4] * R[8] - R[5] * R[7]) - R[1] * (R[3] * R[8] - R[5] * R[6]) +
                     R[2] * (R[3] * R[7] - R[4] * R[6]);
  if (std::fabs(det - 1.0) > 1e-9) throw ContractError("extrinsic rotation has det != +1");
}

ResizeCrop resize_crop(ImageSize orig, ImageSize resized, ImageSize crop) {
  if (orig.width <= 0 || orig.height <= 0 || resized.width <= 0 || resized.height <= 0 || crop.width <= 0 ||
      crop.height <= 0)
    throw DomainError("image dimensions must be positive");
  if (crop.width > resized.width || crop.height > resized.height)
    throw DomainError("crop is larger than the resized image");
  return {static_cast<double>(resized.width) / orig.width, static_cast<double>(resized.height) / orig.height,
          (resized.width - crop.width) / 2.0, (resized.height - crop.height) / 2.0};
}

Intrinsics adjust_intrinsics(const Intrinsics& k, ImageSize orig, ImageSize resized, ImageSize crop) {
  const ResizeCrop rc = resize_crop(orig, resized, crop);
  return {k.fx * rc.sx, k.fy * rc.sy, k.cx * rc.sx - rc.dx, k.cy * rc.sy - rc.dy};
}

Mat4 world_to_camera(const Extrinsics& e) {
  e.validate();
  const auto& R = e.rotation;
  const auto& t = e.translation;
  Mat4 out{};
  for (int i = 0; i < 3; ++i) {
    double ti = 0;
    for (int j = 0; j < 3; ++j) {
      out[i * 4 + j] = R[j * 3 + i];
      ti -= R[j * 3 + i] * t[j];
    }
    out[i * 4 + 3] = ti;
  }
  out[15] = 1;
  return out;
}

Vec3 transform_point(const Mat4& t, const Vec3& p) {
  Vec3 out{};
  for (int i = 0; i < 3; ++i) out[i] = t[i * 4] * p[0] + t[i * 4 + 1] * p[1] + t[i * 4 + 2] * p[2] + t[i * 4 + 3];
  return out;
}

Mat4 compose(const Mat4& a, const Mat4& b) {
  Mat4 out{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) out[i * 4 + j] += a[i * 4 + k] * b[k * 4 + j];
  return out;
}

Pixel project(const Intrinsics& k, const Mat4& world_to_cam, const Vec3& p_world) {
  const Vec3 pc = transform_point(world_to_cam, p_world);
  if (pc[2] <= 0) throw DomainError("point is behind the camera");
  return {k.fx * pc[0] / pc[2] + k.cx, k.fy * pc[1] / pc[2] + k.cy};
}

Vec3 unproject(const Intrinsics& k, const Mat4& cam_to_world, Pixel px, double depth) {
  const Vec3 pc{(px.u - k.cx) / k.fx * depth, (px.v - k.cy) / k.fy * depth, depth};
  return transform_point(cam_to_world, pc);
}

}  // namespace lwam::cam
