#include "lamp/camera.hpp"

#include <cmath>

namespace lamp {

Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 mat3_transpose(const Mat3& m) {
  return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
}

void CameraPose::validate() const {
  if (fx <= 0.0 || fy <= 0.0)
    throw ProjectionError("focal lengths must be positive");
  const Mat3 rt = mat3_transpose(rotation);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += rt[i * 3 + k] * rotation[k * 3 + j];
      const double expect = (i == j) ? 1.0 : 0.0;
      if (std::abs(acc - expect) > 1e-9)
        throw ProjectionError("rotation is not orthonormal");
    }
  }
}

Vec3 CameraPose::world_to_cam(const Vec3& p) const {
  Vec3 r = mat3_apply(rotation, p);
  return {r[0] + translation[0], r[1] + translation[1], r[2] + translation[2]};
}

Vec3 CameraPose::cam_to_world(const Vec3& p) const {
  const Vec3 q{p[0] - translation[0], p[1] - translation[1],
               p[2] - translation[2]};
  return mat3_apply(mat3_transpose(rotation), q);
}

Vec3 CameraPose::project(const Vec3& p_world, double eps) const {
  const Vec3 c = world_to_cam(p_world);
  if (c[2] <= eps)
    throw ProjectionError("point at or behind camera plane, depth " +
                          std::to_string(c[2]));
  return {fx * c[0] / c[2] + cx, fy * c[1] / c[2] + cy, c[2]};
}

Vec3 CameraPose::unproject(const Vec3& uvd) const {
  const double d = uvd[2];
  const Vec3 c{(uvd[0] - cx) * d / fx, (uvd[1] - cy) * d / fy, d};
  return cam_to_world(c);
}

CameraPose look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up,
                          double fx, double fy, double cx, double cy) {
  auto norm = [](const Vec3& v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return Vec3{v[0] / n, v[1] / n, v[2] / n};
  };
  auto cross = [](const Vec3& a, const Vec3& b) {
    return Vec3{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0]};
  };
  const Vec3 fwd = norm({target[0] - eye[0], target[1] - eye[1],
                         target[2] - eye[2]});  // +z in camera frame
  const Vec3 right = norm(cross(fwd, up));
  const Vec3 down = cross(fwd, right);  // +v grows downward in image coords
  CameraPose cam;
  cam.rotation = {right[0], right[1], right[2], down[0], down[1],
                  down[2],  fwd[0],   fwd[1],   fwd[2]};
  const Vec3 re = mat3_apply(cam.rotation, eye);
  cam.translation = {-re[0], -re[1], -re[2]};
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  return cam;
}

}  // namespace lamp
