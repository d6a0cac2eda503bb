#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lamp/toyworld.hpp"
#include "lamp/trainer.hpp"

// Closed-loop policy execution and evaluation. One inference pass is one
// motion velocity evaluation (zero in mode none) followed by the action
// solver's evaluations; the motion hidden state is tapped after a single
// solver step, never a full rollout.

namespace lamp {

struct InferStats {
  std::int64_t motion_evals = 0;
  std::int64_t action_evals = 0;
};

// One action chunk [H x 4] in raw action units for the given observation.
std::vector<double> infer(ModelBundle& models, const toyworld::Observation& obs,
                          int instruction_id, const double state[4], Rng& rng,
                          InferStats* stats = nullptr);

// Runs a full episode, executing whole chunks between inference calls.
// Returns the progress score of the trajectory.
double rollout(ModelBundle& models, const toyworld::TaskSpec& task,
               std::uint64_t episode_seed, int max_steps = 120);

struct EvalRow {
  std::string task;
  std::uint64_t seed = 0;
  std::uint64_t init_hash = 0;  // hash of the initial world state
  double score = 0;
};

struct EvalReport {
  std::string variant;
  std::vector<EvalRow> rows;
  double mean_score = 0;           // recomputed from rows
  std::vector<double> task_means;  // push, pick_place, stack

  void finalize();  // fills the aggregates from rows
  std::string to_json() const;  // deterministic; no timing fields
};

// Paired evaluation: episode i always uses reset seed (seed_base + i) and a
// policy-noise stream forked from it, so different model variants see
// identical initial states.
EvalReport evaluate(ModelBundle& models, const std::string& variant_name,
                    std::uint64_t seed_base, int episodes_per_task,
                    int max_steps = 120);

std::uint64_t hash_world_state(const toyworld::WorldState& s);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace lamp
