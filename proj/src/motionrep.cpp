#include "lamp/motionrep.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lamp {

std::vector<std::array<double, 2>> make_grid(const GridSpec& spec) {
  spec.validate();
  std::vector<std::array<double, 2>> pts;
  pts.reserve(spec.keypoints());
  const double cell_w = static_cast<double>(spec.image_w) / spec.k_w;
  const double cell_h = static_cast<double>(spec.image_h) / spec.k_h;
  for (int r = 0; r < spec.k_h; ++r)
    for (int c = 0; c < spec.k_w; ++c)
      pts.push_back({(c + 0.5) * cell_w, (r + 0.5) * cell_h});
  return pts;
}

SceneFlowField tracks_to_increments(const GridSpec& spec,
                                    const std::vector<double>& tracks) {
  spec.validate();
  const int k = spec.keypoints(), t = spec.t_steps;
  if (tracks.size() != static_cast<std::size_t>(k) * (t + 1) * 3)
    throw std::invalid_argument("tracks size mismatch");
  for (double v : tracks)
    if (!std::isfinite(v))
      throw std::invalid_argument("non-finite track value");
  SceneFlowField f = SceneFlowField::zeros(spec);
  for (int i = 0; i < k; ++i) {
    const int kh = i / spec.k_w, kw = i % spec.k_w;
    for (int s = 0; s < t; ++s)
      for (int c = 0; c < 3; ++c)
        f.at(kh, kw, s, c) = tracks[(i * (t + 1) + s + 1) * 3 + c] -
                             tracks[(i * (t + 1) + s) * 3 + c];
  }
  return f;
}

std::vector<double> increments_to_tracks(const SceneFlowField& field,
                                         const std::vector<double>& anchors) {
  const int k = field.spec.keypoints(), t = field.spec.t_steps;
  if (anchors.size() != static_cast<std::size_t>(k) * 3)
    throw std::invalid_argument("anchors size mismatch");
  std::vector<double> tracks(static_cast<std::size_t>(k) * (t + 1) * 3);
  for (int i = 0; i < k; ++i) {
    const int kh = i / field.spec.k_w, kw = i % field.spec.k_w;
    for (int c = 0; c < 3; ++c) tracks[(i * (t + 1)) * 3 + c] = anchors[i * 3 + c];
    for (int s = 0; s < t; ++s)
      for (int c = 0; c < 3; ++c)
        tracks[(i * (t + 1) + s + 1) * 3 + c] =
            tracks[(i * (t + 1) + s) * 3 + c] + field.at(kh, kw, s, c);
  }
  return tracks;
}

std::vector<double> to_reference_frame(
    const std::vector<double>& tracks_world, int keypoints, int t_steps,
    const std::vector<CameraPose>& cam_per_frame, const CameraPose& cam_ref) {
  if (tracks_world.size() !=
      static_cast<std::size_t>(keypoints) * (t_steps + 1) * 3)
    throw std::invalid_argument("world tracks size mismatch");
  if (cam_per_frame.size() != static_cast<std::size_t>(t_steps + 1))
    throw std::invalid_argument("expected one camera pose per frame");
  cam_ref.validate();
  std::vector<double> out(tracks_world.size());
  for (int i = 0; i < keypoints; ++i) {
    for (int s = 0; s <= t_steps; ++s) {
      const std::size_t base = (static_cast<std::size_t>(i) * (t_steps + 1) + s) * 3;
      const Vec3 p{tracks_world[base], tracks_world[base + 1],
                   tracks_world[base + 2]};
      Vec3 uvd;
      try {
        uvd = cam_ref.project(p);
      } catch (const ProjectionError& e) {
        throw ProjectionError("keypoint " + std::to_string(i) + " frame " +
                              std::to_string(s) + ": " + e.what());
      }
      out[base] = uvd[0];
      out[base + 1] = uvd[1];
      out[base + 2] = uvd[2];
    }
  }
  return out;
}

SceneFlowField normalize(const SceneFlowField& field,
                         const MotionNormalizer& norm) {
  if (!norm.fitted) throw std::invalid_argument("normalizer not fitted");
  SceneFlowField out = field;
  const std::size_t n = out.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 3);
    out.values[i] = (out.values[i] - norm.mean[c]) / norm.stddev[c];
  }
  return out;
}

SceneFlowField denormalize(const SceneFlowField& field,
                           const MotionNormalizer& norm) {
  if (!norm.fitted) throw std::invalid_argument("normalizer not fitted");
  SceneFlowField out = field;
  const std::size_t n = out.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 3);
    out.values[i] = out.values[i] * norm.stddev[c] + norm.mean[c];
  }
  return out;
}

SceneFlowField mask_depth(const SceneFlowField& field) {
  SceneFlowField out = field;
  for (std::size_t i = 2; i < out.values.size(); i += 3) out.values[i] = 0.0;
  return out;
}

std::vector<double> patchify(const SceneFlowField& field) {
  const GridSpec& g = field.spec;
  std::vector<double> tokens(static_cast<std::size_t>(g.motion_tokens()) * 12);
  std::size_t idx = 0;
  for (int t = 0; t < g.t_steps; ++t)
    for (int ph = 0; ph < g.k_h / 2; ++ph)
      for (int pw = 0; pw < g.k_w / 2; ++pw)
        for (int dr = 0; dr < 2; ++dr)
          for (int dc = 0; dc < 2; ++dc)
            for (int c = 0; c < 3; ++c)
              tokens[idx++] = field.at(ph * 2 + dr, pw * 2 + dc, t, c);
  return tokens;
}

SceneFlowField unpatchify(const GridSpec& spec,
                          const std::vector<double>& tokens) {
  spec.validate();
  if (tokens.size() != static_cast<std::size_t>(spec.motion_tokens()) * 12)
    throw std::invalid_argument("token count mismatch");
  SceneFlowField f = SceneFlowField::zeros(spec);
  std::size_t idx = 0;
  for (int t = 0; t < spec.t_steps; ++t)
    for (int ph = 0; ph < spec.k_h / 2; ++ph)
      for (int pw = 0; pw < spec.k_w / 2; ++pw)
        for (int dr = 0; dr < 2; ++dr)
          for (int dc = 0; dc < 2; ++dc)
            for (int c = 0; c < 3; ++c)
              f.at(ph * 2 + dr, pw * 2 + dc, t, c) = tokens[idx++];
  return f;
}

std::vector<double> patchify_mask(const GridSpec& spec,
                                  const std::vector<std::uint8_t>& valid) {
  if (valid.size() != static_cast<std::size_t>(spec.keypoints()))
    throw std::invalid_argument("validity mask size mismatch");
  std::vector<double> mask(static_cast<std::size_t>(spec.motion_tokens()) * 12);
  std::size_t idx = 0;
  for (int t = 0; t < spec.t_steps; ++t)
    for (int ph = 0; ph < spec.k_h / 2; ++ph)
      for (int pw = 0; pw < spec.k_w / 2; ++pw)
        for (int dr = 0; dr < 2; ++dr)
          for (int dc = 0; dc < 2; ++dc) {
            const double m =
                valid[(ph * 2 + dr) * spec.k_w + (pw * 2 + dc)] ? 1.0 : 0.0;
            for (int c = 0; c < 3; ++c) mask[idx++] = m;
          }
  return mask;
}

}  // namespace lamp
