#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lamp/camera.hpp"

// Dense 3D scene-flow representation: a K_h x K_w keypoint grid tracked over
// T future timesteps, storing per-timestep increments (du, dv, dd) in a
// unified reference camera frame. Layout is row-major [K_h][K_w][T][3],
// which is also the canonical on-disk order (as 32-bit little-endian floats).

namespace lamp {

struct GridSpec {
  int k_h = 8;
  int k_w = 8;
  int t_steps = 8;
  int image_w = 32;
  int image_h = 32;

  int keypoints() const { return k_h * k_w; }
  int tokens_per_step() const { return (k_h / 2) * (k_w / 2); }
  int motion_tokens() const { return t_steps * tokens_per_step(); }
  void validate() const {
    if (k_h < 2 || k_w < 2 || k_h % 2 || k_w % 2)
      throw std::invalid_argument("grid extents must be even and >= 2");
    if (t_steps < 1 || image_w < 1 || image_h < 1)
      throw std::invalid_argument("grid spec counts must be positive");
  }
};

struct SceneFlowField {
  GridSpec spec;
  std::vector<double> values;  // [K_h][K_w][T][3]

  static SceneFlowField zeros(const GridSpec& spec) {
    spec.validate();
    return {spec, std::vector<double>(
                      static_cast<std::size_t>(spec.keypoints()) *
                      spec.t_steps * 3)};
  }
  double& at(int kh, int kw, int t, int c) {
    return values[((static_cast<std::size_t>(kh) * spec.k_w + kw) *
                       spec.t_steps +
                   t) *
                      3 +
                  c];
  }
  double at(int kh, int kw, int t, int c) const {
    return const_cast<SceneFlowField*>(this)->at(kh, kw, t, c);
  }
};

// Per-channel z-score statistics over a dataset.
struct MotionNormalizer {
  bool fitted = false;
  double mean[3] = {0, 0, 0};
  double stddev[3] = {1, 1, 1};  // floored at 1e-6 when fitted
};

// Uniform lattice with half-cell margins, row-major (u, v) pixel coords.
std::vector<std::array<double, 2>> make_grid(const GridSpec& spec);

// tracks: [K][T+1][3] with row 0 the current-frame anchor. Increments are
// track[t+1] - track[t].
SceneFlowField tracks_to_increments(const GridSpec& spec,
                                    const std::vector<double>& tracks);
std::vector<double> increments_to_tracks(const SceneFlowField& field,
                                         const std::vector<double>& anchors);

// Projects world-point tracks [K][T+1][3] into cam_ref as (u, v, d). The
// per-frame poses document the captured trajectory; the output depends only
// on cam_ref, which is what cancels camera motion.
std::vector<double> to_reference_frame(
    const std::vector<double>& tracks_world, int keypoints, int t_steps,
    const std::vector<CameraPose>& cam_per_frame, const CameraPose& cam_ref);

SceneFlowField normalize(const SceneFlowField& field,
                         const MotionNormalizer& norm);
SceneFlowField denormalize(const SceneFlowField& field,
                           const MotionNormalizer& norm);

// Zeroes the depth channel; u/v pass through untouched.
SceneFlowField mask_depth(const SceneFlowField& field);

// 2x2 spatial patchification into motion tokens [T][K_h/2][K_w/2][12].
// Within a token, features are ordered row-major over the 2x2 keypoint block
// with the 3 channels innermost: (r0c0.du, r0c0.dv, r0c0.dd, r0c1.du, ...).
std::vector<double> patchify(const SceneFlowField& field);
SceneFlowField unpatchify(const GridSpec& spec,
                          const std::vector<double>& tokens);

// Expands a per-keypoint validity mask to the matching token feature mask.
std::vector<double> patchify_mask(const GridSpec& spec,
                                  const std::vector<std::uint8_t>& valid);

}  // namespace lamp
