#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lamp/action_expert.hpp"
#include "lamp/checkpoint.hpp"
#include "lamp/dataset.hpp"
#include "lamp/guidance.hpp"
#include "lamp/motion_expert.hpp"
#include "lamp/percept.hpp"

// Two-stage training. Stage 1 fits the perception encoder and Motion Expert
// jointly with the masked motion flow-matching loss. Stage 2 freezes both,
// taps one-step motion hidden states, and fits the guidance module and
// Action Expert on the action flow-matching loss. Training runs in float;
// all randomness flows through the caller's Rng so runs are reproducible.

namespace lamp {

// All four modules plus everything needed to run them, as one unit that maps
// 1:1 onto a checkpoint file.
struct ModelBundle {
  PerceptConfig pcfg;
  MotionExpertConfig mcfg;
  GuidanceConfig gcfg;
  ActionExpertConfig acfg;
  PerceptionEncoder<float> percept;
  MotionExpert<float> motion;
  GuidanceModule<float> guidance;
  ActionExpert<float> action;
  MotionNormalizer motion_norm;
  ActionNormalizer action_norm;
  int motion_solver_steps = 10;  // N
  int action_solver_steps = 4;
  bool depth_masked = false;  // 2D ablation: depth channel zeroed everywhere

  ParamRefs<float> stage1_params();  // percept + motion
  ParamRefs<float> stage2_params();  // guidance + action
  ParamRefs<float> all_params();
};

ModelBundle make_models(const PerceptConfig& p, const MotionExpertConfig& m,
                        const GuidanceConfig& g, const ActionExpertConfig& a,
                        std::uint64_t seed);

Checkpoint to_checkpoint(ModelBundle& models);
ModelBundle models_from_checkpoint(const Checkpoint& ck);

// Learning rate at `step` of `total`: starts at base_lr, cosine-decays to
// min_lr at the final step.
double cosine_with_min_lr(double base_lr, double min_lr, std::int64_t step,
                          std::int64_t total);

struct StageConfig {
  int steps = 400;
  int batch = 4;
  double lr = 2e-4;
  double min_lr = 2e-5;
  double weight_decay = 1e-8;
  double clip = 1.0;
  int freeze_check_every = 50;  // stage 2 only
};

struct TrainResult {
  std::vector<double> loss_trace;  // one entry per step
  double initial_loss = 0;         // mean of the first 10 steps
  double final_loss = 0;           // mean of the last 10 steps
  double wall_seconds = 0;         // measured, excluded from trace files
};

// Deterministic text trace, one "%.9g" loss per line.
void write_loss_trace(const std::vector<double>& trace,
                      const std::string& path);

TrainResult train_stage1(ModelBundle& models, const Dataset& data,
                         const StageConfig& cfg, Rng& rng);

// Verifies frozen-parameter hashes every cfg.freeze_check_every steps and at
// the end; any drift is a hard TrainingError.
TrainResult train_stage2(ModelBundle& models, const Dataset& data,
                         const StageConfig& cfg, Rng& rng);

// Normalized flow tokens for one record, honoring the depth-masked variant.
Tensor<float> record_flow_tokens(const EpisodeRecord& rec,
                                 const ModelBundle& models);
// Token feature mask from the record's keypoint validity flags.
std::vector<float> record_flow_mask(const EpisodeRecord& rec,
                                    const GridSpec& grid);
// Normalized action chunk [H x 4].
Tensor<float> record_action_chunk(const EpisodeRecord& rec,
                                  const ModelBundle& models);

}  // namespace lamp
