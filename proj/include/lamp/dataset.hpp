#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lamp/motionrep.hpp"
#include "lamp/rng.hpp"
#include "lamp/toyworld.hpp"

// "LAMPDS1" dataset container. One record is one training sample:
// observation at a decision step, instruction id, robot state, the
// ground-truth scene flow over the next T env steps, the expert action chunk
// for the next H steps, and the keypoint validity mask. All floats are
// 32-bit little-endian; normalizer statistics are 64-bit little-endian in
// the header; the file ends with an FNV-1a 64 checksum over everything
// before it. Full byte layout is documented in the README.

namespace lamp {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ActionNormalizer {
  bool fitted = false;
  double mean[4] = {0, 0, 0, 0};
  double stddev[4] = {1, 1, 1, 1};
};

struct EpisodeRecord {
  std::vector<float> rgb;    // [3][H_img][W_img]
  std::vector<float> depth;  // [H_img][W_img]
  std::uint32_t instruction_id = 0;
  float state[4] = {0, 0, 0, 0};  // gripper x, y, z, open
  std::vector<float> flow;        // [K_h][K_w][T][3], raw cam_ref units
  std::vector<float> actions;     // [H][4]
  std::vector<std::uint8_t> valid;  // [K]
};

struct Dataset {
  GridSpec grid;
  int chunk_h = 4;
  MotionNormalizer motion_norm;
  ActionNormalizer action_norm;
  std::uint32_t expert_resamples = 0;
  std::vector<EpisodeRecord> records;
};

struct DatagenConfig {
  GridSpec grid;
  int chunk_h = 4;
  int episodes = 100;
  int max_episode_steps = 120;
  int max_resamples_per_episode = 20;
  std::vector<toyworld::TaskKind> task_mix = {
      toyworld::TaskKind::push, toyworld::TaskKind::pick_place,
      toyworld::TaskKind::stack};
};

// Rolls the scripted expert and emits records at stride H; failed episodes
// are resampled (count recorded). Deterministic in (cfg, seed).
Dataset generate_dataset(const DatagenConfig& cfg, Rng& rng);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// Recomputes normalizer statistics from records (the generation-time path
// and the verification oracle are this same function).
void fit_normalizers(Dataset& ds);

}  // namespace lamp
