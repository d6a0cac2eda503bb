#include "lamp/toyworld.hpp"

#include <algorithm>
#include <cmath>

namespace lamp::toyworld {

namespace {

double clamp(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

double xy_dist(const Vec3& a, const Vec3& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

// Support height for a disc dropped at (x, y): on top of another disc when
// their footprints overlap, otherwise on the table.
double support_z(const WorldState& s, int skip_id, double x, double y) {
  double z = kDiscHalfHeight;
  for (const auto& o : s.objects) {
    if (o.id == skip_id) continue;
    if (std::hypot(o.pos[0] - x, o.pos[1] - y) < o.radius)
      z = std::max(z, o.pos[2] + 2.0 * kDiscHalfHeight);
  }
  return z;
}

struct Colors {
  static constexpr float disc[2][3] = {{0.95f, 0.15f, 0.15f},
                                       {0.20f, 0.30f, 0.95f}};
  static constexpr float goal[3] = {0.20f, 0.80f, 0.20f};
  static constexpr float grip_open[3] = {0.95f, 0.95f, 0.95f};
  static constexpr float grip_closed[3] = {0.25f, 0.25f, 0.30f};
  static constexpr float background[3] = {0.78f, 0.76f, 0.72f};
};

}  // namespace

const std::vector<std::string> kInstructionVocab = {
    "push the red disc to the green zone",
    "push the blue disc to the green zone",
    "place the red disc in the green zone",
    "place the blue disc in the green zone",
    "stack the red disc on the blue disc",
    "stack the blue disc on the red disc",
};

TaskSpec make_task(TaskKind kind, int target_color) {
  if (target_color < 0 || target_color > 1)
    throw std::invalid_argument("target color must be 0 or 1");
  TaskSpec t;
  t.kind = kind;
  t.target_color = target_color;
  t.instruction_id = static_cast<int>(kind) * 2 + target_color;
  t.stage_count = 2;
  return t;
}

WorldState reset(const TaskSpec& task, Rng& rng) {
  // Leave room for the push standoff (gripper radius + disc radius + eps)
  // between a disc and the walls, or the expert cannot line up behind it.
  constexpr double kMargin = 0.25;
  constexpr double kMinSep = 0.28;
  for (int attempt = 0; attempt < 200; ++attempt) {
    WorldState s;
    auto place = [&rng]() {
      return Vec3{rng.uniform(kMargin, 1.0 - kMargin),
                  rng.uniform(kMargin, 1.0 - kMargin), kDiscHalfHeight};
    };
    Vec3 a = place(), b = place();
    Vec3 g{rng.uniform(kMargin, 1.0 - kMargin),
           rng.uniform(kMargin, 1.0 - kMargin), 0.0};
    if (xy_dist(a, b) < kMinSep) continue;
    const bool needs_goal = task.kind != TaskKind::stack;
    if (needs_goal && (xy_dist(a, g) < kMinSep || xy_dist(b, g) < kMinSep))
      continue;
    s.objects.push_back({0, kDiscRadius, task.target_color, a});
    s.objects.push_back({1, kDiscRadius, 1 - task.target_color, b});
    if (needs_goal) s.goals.push_back({g, kGoalRadius});
    s.gripper = {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), 0.25};
    s.gripper_open = 1.0;
    return s;
  }
  throw GenerationError("could not place scene after bounded retries");
}

WorldState step(const WorldState& state, const double action[4]) {
  WorldState s = state;
  double d[3];
  for (int i = 0; i < 3; ++i) {
    double a = std::isfinite(action[i]) ? action[i] : 0.0;
    d[i] = clamp(a, -kMaxStep, kMaxStep);
  }
  const bool want_closed = std::isfinite(action[3]) && action[3] >= 0.5;

  const Vec3 old_grip = s.gripper;
  s.gripper[0] = clamp(s.gripper[0] + d[0], 0.0, 1.0);
  s.gripper[1] = clamp(s.gripper[1] + d[1], 0.0, 1.0);
  s.gripper[2] = clamp(s.gripper[2] + d[2], 0.0, 0.5);

  // Held object is rigidly attached below the gripper.
  if (s.held_object >= 0) {
    auto& o = s.objects[s.held_object];
    for (int i = 0; i < 3; ++i) o.pos[i] += s.gripper[i] - old_grip[i];
  }

  // Side-contact pushing for the free gripper at table height.
  if (s.held_object < 0 && s.gripper[2] < 0.09) {
    for (auto& o : s.objects) {
      const double contact = kGripperRadius + o.radius;
      const double dist = xy_dist(s.gripper, o.pos);
      if (dist < contact && dist > 0.5 * contact) {
        const double nx = (o.pos[0] - s.gripper[0]) / dist;
        const double ny = (o.pos[1] - s.gripper[1]) / dist;
        o.pos[0] = clamp(s.gripper[0] + nx * contact, 0.0, 1.0);
        o.pos[1] = clamp(s.gripper[1] + ny * contact, 0.0, 1.0);
      }
    }
  }

  const bool was_closed = s.gripper_open < 0.5;
  if (want_closed && !was_closed) {
    // Grasp the nearest object within reach.
    int best = -1;
    double best_d = kGraspRadius;
    for (const auto& o : s.objects) {
      const double dxy = xy_dist(s.gripper, o.pos);
      const double dz = std::abs(s.gripper[2] - (o.pos[2] + kDiscHalfHeight));
      if (dxy <= best_d && dz <= kGraspRadius) {
        best = o.id;
        best_d = dxy;
      }
    }
    if (best >= 0) {
      s.held_object = best;
      auto& o = s.objects[best];
      o.pos[0] = s.gripper[0];
      o.pos[1] = s.gripper[1];
      o.pos[2] = s.gripper[2] - kDiscHalfHeight;
    }
  } else if (!want_closed && was_closed && s.held_object >= 0) {
    auto& o = s.objects[s.held_object];
    o.pos[2] = support_z(s, o.id, o.pos[0], o.pos[1]);
    s.held_object = -1;
  }
  s.gripper_open = want_closed ? 0.0 : 1.0;
  ++s.step_index;
  return s;
}

namespace {

void move_towards(const Vec3& from, const Vec3& to, double action_out[4]) {
  for (int i = 0; i < 3; ++i)
    action_out[i] = clamp(to[i] - from[i], -kMaxStep, kMaxStep);
}

bool placed(const WorldState& s, const TaskSpec& task) {
  const auto& obj = s.objects[0];
  if (s.held_object == 0) return false;
  switch (task.kind) {
    case TaskKind::push:
    case TaskKind::pick_place:
      return xy_dist(obj.pos, s.goals[0].pos) < 0.6 * s.goals[0].radius;
    case TaskKind::stack: {
      const auto& base = s.objects[1];
      return xy_dist(obj.pos, base.pos) < 0.6 * base.radius &&
             obj.pos[2] > kDiscHalfHeight + 1e-6;
    }
  }
  return false;
}

}  // namespace

void scripted_expert(const WorldState& state, const TaskSpec& task,
                     double action_out[4], bool* failed) {
  if (failed) *failed = false;
  action_out[0] = action_out[1] = action_out[2] = 0.0;
  action_out[3] = state.gripper_open < 0.5 ? 1.0 : 0.0;
  const auto& obj = state.objects[0];  // object 0 is always the target

  if (placed(state, task)) {
    action_out[3] = 0.0;
    return;
  }

  if (task.kind == TaskKind::push) {
    const Vec3 goal = state.goals[0].pos;
    double gx = goal[0] - obj.pos[0], gy = goal[1] - obj.pos[1];
    const double gd = std::hypot(gx, gy);
    if (gd < 1e-9) return;
    gx /= gd;
    gy /= gd;
    const double standoff_r = kGripperRadius + obj.radius + 0.005;
    const Vec3 standoff{obj.pos[0] - gx * standoff_r,
                        obj.pos[1] - gy * standoff_r, 0.04};
    const double to_standoff = xy_dist(state.gripper, standoff);
    action_out[3] = 0.0;
    if (to_standoff < 0.035 && state.gripper[2] < 0.06) {
      // In pushing position: drive toward the goal with a step smaller than
      // half the contact distance, so the gripper stays on the pushing ring
      // instead of jumping past the disc.
      const double drive = 0.045;
      action_out[0] = gx * drive;
      action_out[1] = gy * drive;
      action_out[2] = clamp(0.04 - state.gripper[2], -kMaxStep, kMaxStep);
    } else if (to_standoff > 0.05 && state.gripper[2] < kHoverZ - 0.01) {
      move_towards(state.gripper,
                   {state.gripper[0], state.gripper[1], kHoverZ}, action_out);
    } else if (to_standoff > 0.02) {
      move_towards(state.gripper, {standoff[0], standoff[1], kHoverZ},
                   action_out);
    } else {
      move_towards(state.gripper, standoff, action_out);
    }
    return;
  }

  // pick_place / stack
  Vec3 dest;
  double place_z;
  if (task.kind == TaskKind::pick_place) {
    dest = state.goals[0].pos;
    place_z = kDiscHalfHeight * 2 + 0.015;
  } else {
    const auto& base = state.objects[1];
    dest = base.pos;
    place_z = base.pos[2] + 3 * kDiscHalfHeight + 0.015;
  }

  if (state.held_object != 0) {
    if (state.held_object == 1) {
      // Wrong object in hand; drop it where we are.
      action_out[3] = 0.0;
      return;
    }
    const double dxy = xy_dist(state.gripper, obj.pos);
    if (dxy > 0.015) {
      action_out[3] = 0.0;
      if (state.gripper[2] < kHoverZ - 0.01 && dxy > 0.05)
        move_towards(state.gripper,
                     {state.gripper[0], state.gripper[1], kHoverZ},
                     action_out);
      else
        move_towards(state.gripper, {obj.pos[0], obj.pos[1], kHoverZ},
                     action_out);
    } else {
      const double grasp_z = obj.pos[2] + kDiscHalfHeight;
      if (state.gripper[2] > grasp_z + 0.01) {
        action_out[3] = 0.0;
        move_towards(state.gripper, {obj.pos[0], obj.pos[1], grasp_z},
                     action_out);
      } else {
        action_out[3] = 1.0;  // close
      }
    }
    return;
  }

  // Holding the target.
  action_out[3] = 1.0;
  const double dxy = xy_dist(state.gripper, dest);
  if (dxy > 0.015) {
    if (state.gripper[2] < kHoverZ - 0.01 && dxy > 0.05)
      move_towards(state.gripper,
                   {state.gripper[0], state.gripper[1], kHoverZ}, action_out);
    else
      move_towards(state.gripper, {dest[0], dest[1], kHoverZ}, action_out);
  } else {
    const double target_grip_z = place_z + kDiscHalfHeight;
    if (state.gripper[2] > target_grip_z + 0.01) {
      move_towards(state.gripper, {dest[0], dest[1], target_grip_z},
                   action_out);
    } else {
      action_out[3] = 0.0;  // release
    }
  }
}

CameraPose default_camera(int image_w, int image_h) {
  const double f = 1.35 * image_w;
  return look_at_camera({0.5, -0.75, 0.85}, {0.5, 0.5, 0.0}, {0, 0, 1}, f, f,
                        image_w / 2.0, image_h / 2.0);
}

namespace {

struct Billboard {
  Vec3 center;      // world
  double radius;    // world units
  const float* color;
};

void splat(Observation& obs, const CameraPose& cam, const Billboard& b) {
  Vec3 uvd;
  try {
    uvd = cam.project(b.center);
  } catch (const ProjectionError&) {
    return;
  }
  const double pr = cam.fx * b.radius / uvd[2];
  const int x0 = std::max(0, static_cast<int>(std::floor(uvd[0] - pr)));
  const int x1 = std::min(obs.width - 1, static_cast<int>(std::ceil(uvd[0] + pr)));
  const int y0 = std::max(0, static_cast<int>(std::floor(uvd[1] - pr)));
  const int y1 = std::min(obs.height - 1, static_cast<int>(std::ceil(uvd[1] + pr)));
  const std::size_t plane = static_cast<std::size_t>(obs.width) * obs.height;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double du = x + 0.5 - uvd[0], dv = y + 0.5 - uvd[1];
      if (du * du + dv * dv > pr * pr) continue;
      const std::size_t pix = static_cast<std::size_t>(y) * obs.width + x;
      if (uvd[2] >= obs.depth[pix]) continue;
      obs.depth[pix] = static_cast<float>(uvd[2]);
      for (int c = 0; c < 3; ++c) obs.rgb[c * plane + pix] = b.color[c];
    }
  }
}

}  // namespace

Observation render(const WorldState& state, const CameraPose& camera) {
  Observation obs;
  obs.width = static_cast<int>(camera.cx * 2.0 + 0.5);
  obs.height = static_cast<int>(camera.cy * 2.0 + 0.5);
  const std::size_t plane = static_cast<std::size_t>(obs.width) * obs.height;
  obs.rgb.resize(3 * plane);
  obs.depth.assign(plane, static_cast<float>(kFarDepth));
  for (int c = 0; c < 3; ++c)
    std::fill(obs.rgb.begin() + c * plane, obs.rgb.begin() + (c + 1) * plane,
              Colors::background[c]);
  for (const auto& g : state.goals)
    splat(obs, camera, {g.pos, g.radius, Colors::goal});
  for (const auto& o : state.objects)
    splat(obs, camera, {o.pos, o.radius, Colors::disc[o.color_id]});
  splat(obs, camera,
        {state.gripper, kGripperRadius,
         state.gripper_open >= 0.5 ? Colors::grip_open : Colors::grip_closed});
  return obs;
}

namespace {

// Entity a frame-0 keypoint is attached to: object index, -2 for the
// gripper, -1 for the static background. Returns the billboard depth.
int hit_entity(const WorldState& s, const CameraPose& cam, double u, double v,
               double* depth_out) {
  int best = -1;
  double best_d = kFarDepth;
  auto consider = [&](int id, const Vec3& center, double radius) {
    Vec3 uvd;
    try {
      uvd = cam.project(center);
    } catch (const ProjectionError&) {
      return;
    }
    const double pr = cam.fx * radius / uvd[2];
    const double du = u - uvd[0], dv = v - uvd[1];
    if (du * du + dv * dv <= pr * pr && uvd[2] < best_d) {
      best = id;
      best_d = uvd[2];
    }
  };
  for (std::size_t i = 0; i < s.objects.size(); ++i)
    consider(static_cast<int>(i), s.objects[i].pos, s.objects[i].radius);
  consider(-2, s.gripper, kGripperRadius);
  *depth_out = best_d;
  return best;
}

Vec3 entity_pos(const WorldState& s, int entity) {
  if (entity >= 0) return s.objects[entity].pos;
  return s.gripper;
}

}  // namespace

FlowResult ground_truth_flow(const std::vector<WorldState>& states,
                             const std::vector<CameraPose>& cameras,
                             const CameraPose& cam_ref, const GridSpec& grid) {
  grid.validate();
  if (states.size() != static_cast<std::size_t>(grid.t_steps) + 1 ||
      cameras.size() != states.size())
    throw std::invalid_argument("ground_truth_flow: length mismatch");
  const int k = grid.keypoints();
  const int tp1 = grid.t_steps + 1;
  const auto pts = make_grid(grid);

  std::vector<double> tracks_world(static_cast<std::size_t>(k) * tp1 * 3);
  std::vector<std::uint8_t> valid(k, 1);
  for (int i = 0; i < k; ++i) {
    double d0;
    const int entity = hit_entity(states[0], cameras[0], pts[i][0], pts[i][1],
                                  &d0);
    const Vec3 anchor = cameras[0].unproject({pts[i][0], pts[i][1], d0});
    const Vec3 base = entity == -1 ? Vec3{0, 0, 0} : entity_pos(states[0], entity);
    for (int s = 0; s < tp1; ++s) {
      Vec3 w = anchor;
      if (entity != -1) {
        const Vec3 p = entity_pos(states[s], entity);
        w = {anchor[0] + p[0] - base[0], anchor[1] + p[1] - base[1],
             anchor[2] + p[2] - base[2]};
      }
      const std::size_t off = (static_cast<std::size_t>(i) * tp1 + s) * 3;
      tracks_world[off] = w[0];
      tracks_world[off + 1] = w[1];
      tracks_world[off + 2] = w[2];
      // Frustum check against cam_ref.
      try {
        const Vec3 uvd = cam_ref.project(w);
        if (uvd[0] < 0 || uvd[0] > grid.image_w || uvd[1] < 0 ||
            uvd[1] > grid.image_h)
          valid[i] = 0;
      } catch (const ProjectionError&) {
        valid[i] = 0;
        // Park the point at unit depth so projection below stays finite.
        tracks_world[off] = 0;
        tracks_world[off + 1] = 0;
        tracks_world[off + 2] = 0;
      }
    }
  }
  // Invalid keypoints get zero tracks at a safe depth.
  for (int i = 0; i < k; ++i) {
    if (valid[i]) continue;
    const Vec3 safe = cam_ref.unproject({grid.image_w / 2.0,
                                         grid.image_h / 2.0, 1.0});
    for (int s = 0; s < tp1; ++s) {
      const std::size_t off = (static_cast<std::size_t>(i) * tp1 + s) * 3;
      tracks_world[off] = safe[0];
      tracks_world[off + 1] = safe[1];
      tracks_world[off + 2] = safe[2];
    }
  }
  const auto tracks_uvd =
      to_reference_frame(tracks_world, k, grid.t_steps, cameras, cam_ref);
  FlowResult res{tracks_to_increments(grid, tracks_uvd), std::move(valid)};
  return res;
}

double progress_score(const std::vector<WorldState>& trajectory,
                      const TaskSpec& task) {
  if (trajectory.empty()) return 0.0;
  const WorldState& last = trajectory.back();
  bool stage1 = false, stage2 = false;
  switch (task.kind) {
    case TaskKind::pick_place:
    case TaskKind::stack: {
      for (const auto& s : trajectory) stage1 = stage1 || s.held_object == 0;
      stage2 = placed(last, task);
      break;
    }
    case TaskKind::push: {
      const double d0 = xy_dist(trajectory.front().objects[0].pos,
                                trajectory.front().goals[0].pos);
      const double d1 = xy_dist(last.objects[0].pos, last.goals[0].pos);
      stage1 = d0 - d1 > 0.05;
      stage2 = d1 < 0.6 * last.goals[0].radius;
      break;
    }
  }
  if (stage2) return 1.0;
  return stage1 ? 0.5 : 0.0;
}

}  // namespace lamp::toyworld
