#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace lamp {

struct ProjectionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

Vec3 mat3_apply(const Mat3& m, const Vec3& v);
Mat3 mat3_transpose(const Mat3& m);

// Pinhole camera. World-to-camera map: p_cam = R * p_world + t. Depth is the
// camera-frame z coordinate.
struct CameraPose {
  Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 translation{0, 0, 0};
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;

  void validate() const;  // orthonormal R within 1e-9, positive focals

  Vec3 world_to_cam(const Vec3& p) const;
  Vec3 cam_to_world(const Vec3& p) const;

  // (u, v, d) with d the depth along the optical axis; throws when d <= eps.
  Vec3 project(const Vec3& p_world, double eps = 1e-9) const;
  Vec3 unproject(const Vec3& uvd) const;
};

// Camera at `eye` looking toward `target` with `up` fixing the roll.
CameraPose look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up,
                          double fx, double fy, double cx, double cy);

}  // namespace lamp
