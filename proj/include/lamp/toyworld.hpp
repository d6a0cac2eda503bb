#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lamp/camera.hpp"
#include "lamp/motionrep.hpp"
#include "lamp/rng.hpp"

// Kinematic 2.5D tabletop world: colored discs on a unit table, a point
// gripper, scripted experts, rasterized RGB-D observations, and analytic
// ground-truth scene flow. Actions are (dx, dy, dz, gripper) with the
// gripper command thresholded at 0.5 (>= 0.5 closes).

namespace lamp::toyworld {

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TaskKind { push = 0, pick_place = 1, stack = 2 };

inline const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::push: return "push";
    case TaskKind::pick_place: return "pick_place";
    default: return "stack";
  }
}

// Fixed instruction vocabulary; id = kind * 2 + target color (0 red, 1 blue).
extern const std::vector<std::string> kInstructionVocab;

struct TaskSpec {
  TaskKind kind = TaskKind::pick_place;
  int target_color = 0;  // 0 red, 1 blue
  int instruction_id = 1 * 2 + 0;
  int stage_count = 2;
};

TaskSpec make_task(TaskKind kind, int target_color);

struct DiscObject {
  int id = 0;
  double radius = 0.07;
  int color_id = 0;  // 0 red, 1 blue
  Vec3 pos{0, 0, 0};
};

struct GoalZone {
  Vec3 pos{0, 0, 0};
  double radius = 0.10;
};

struct WorldState {
  Vec3 gripper{0.5, 0.5, 0.25};
  double gripper_open = 1.0;  // 1 open, 0 closed
  std::vector<DiscObject> objects;
  std::vector<GoalZone> goals;
  int held_object = -1;
  int step_index = 0;
};

// Geometry constants shared by the simulator, experts, and the metric.
constexpr double kDiscRadius = 0.14;
constexpr double kDiscHalfHeight = 0.02;
constexpr double kGripperRadius = 0.10;
constexpr double kGraspRadius = 0.06;
constexpr double kMaxStep = 0.05;
constexpr double kGoalRadius = 0.10;
constexpr double kHoverZ = 0.16;
constexpr double kFarDepth = 3.0;

WorldState reset(const TaskSpec& task, Rng& rng);
WorldState step(const WorldState& state, const double action[4]);

// Deterministic proportional controller through the task's stages. Sets
// *failed when the goal is unreachable from the state.
void scripted_expert(const WorldState& state, const TaskSpec& task,
                     double action_out[4], bool* failed = nullptr);

struct Observation {
  int width = 0, height = 0;
  std::vector<float> rgb;    // [3][H][W], values in [0,1]
  std::vector<float> depth;  // [H][W], meters
};

// Default desk camera over the table.
CameraPose default_camera(int image_w, int image_h);

Observation render(const WorldState& state, const CameraPose& camera);

// Analytic flow for grid keypoints of frame 0, advected by each entity's
// rigid motion across the state sequence and expressed in cam_ref.
// Out-of-frustum keypoints are flagged invalid, not errors.
struct FlowResult {
  SceneFlowField field;
  std::vector<std::uint8_t> valid;  // per keypoint
};
FlowResult ground_truth_flow(const std::vector<WorldState>& states,
                             const std::vector<CameraPose>& cameras,
                             const CameraPose& cam_ref, const GridSpec& grid);

// Fraction of completed stages; 1.0 is success.
double progress_score(const std::vector<WorldState>& trajectory,
                      const TaskSpec& task);

}  // namespace lamp::toyworld
