#include "lamp/policy.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace lamp {

using toyworld::TaskKind;
using toyworld::TaskSpec;
using toyworld::WorldState;

std::vector<double> infer(ModelBundle& models, const toyworld::Observation& obs,
                          int instruction_id, const double state[4], Rng& rng,
                          InferStats* stats) {
  const std::int64_t motion_before = models.motion.velocity_evals;
  const std::int64_t action_before = models.action.velocity_evals;

  auto z = models.percept.encode(obs.rgb, obs.depth, instruction_id);
  Tensor<float> z_guided;
  if (models.gcfg.mode != GuidanceMode::none) {
    const SolverSchedule motion_schedule(models.motion_solver_steps);
    auto z_m = models.motion.one_step_hidden(z, motion_schedule, rng);
    z_guided = models.guidance.forward(z, z_m);
  } else {
    z_guided = z;
  }
  const float fstate[4] = {
      static_cast<float>(state[0]), static_cast<float>(state[1]),
      static_cast<float>(state[2]), static_cast<float>(state[3])};
  const FlowTime t1(1.0 / models.motion_solver_steps);
  auto chunk = models.action.sample_chunk(
      z_guided, fstate, t1, SolverSchedule(models.action_solver_steps), rng,
      models.action_norm);
  if (stats) {
    stats->motion_evals = models.motion.velocity_evals - motion_before;
    stats->action_evals = models.action.velocity_evals - action_before;
  }
  return chunk;
}

double rollout(ModelBundle& models, const TaskSpec& task,
               std::uint64_t episode_seed, int max_steps) {
  Rng reset_rng(episode_seed);
  Rng policy_rng = reset_rng.fork(1);
  auto cam = toyworld::default_camera(models.pcfg.image_w, models.pcfg.image_h);
  auto state = toyworld::reset(task, reset_rng);
  std::vector<WorldState> traj{state};
  const int h = models.acfg.chunk_h;
  for (int t = 0; t < max_steps && toyworld::progress_score(traj, task) < 1.0;
       t += h) {
    auto obs = toyworld::render(traj.back(), cam);
    const auto& g = traj.back().gripper;
    const double s[4] = {g[0], g[1], g[2], traj.back().gripper_open};
    auto chunk = infer(models, obs, task.instruction_id, s, policy_rng);
    for (int i = 0; i < h; ++i) {
      double a[4] = {chunk[i * 4 + 0], chunk[i * 4 + 1], chunk[i * 4 + 2],
                     chunk[i * 4 + 3]};
      traj.push_back(toyworld::step(traj.back(), a));
    }
  }
  return toyworld::progress_score(traj, task);
}

std::uint64_t hash_world_state(const WorldState& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ULL;
    }
  };
  mix(s.gripper.data(), sizeof(double) * 3);
  mix(&s.gripper_open, sizeof(double));
  for (const auto& o : s.objects) {
    mix(o.pos.data(), sizeof(double) * 3);
    mix(&o.color_id, sizeof(int));
  }
  for (const auto& g : s.goals) mix(g.pos.data(), sizeof(double) * 3);
  return h;
}

void EvalReport::finalize() {
  task_means.assign(3, 0.0);
  std::vector<int> counts(3, 0);
  double acc = 0;
  for (const auto& r : rows) {
    acc += r.score;
    for (int k = 0; k < 3; ++k)
      if (r.task == toyworld::task_name(static_cast<TaskKind>(k))) {
        task_means[k] += r.score;
        ++counts[k];
      }
  }
  mean_score = rows.empty() ? 0.0 : acc / static_cast<double>(rows.size());
  for (int k = 0; k < 3; ++k)
    if (counts[k]) task_means[k] /= counts[k];
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = variant;
  j["episodes"] = rows.size();
  j["mean_score"] = mean_score;
  for (int k = 0; k < 3; ++k)
    j["task_means"][toyworld::task_name(static_cast<TaskKind>(k))] =
        task_means.size() == 3 ? task_means[k] : 0.0;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["task"] = r.task;
    row["seed"] = r.seed;
    row["init_hash"] = r.init_hash;
    row["score"] = r.score;
    j["rows"].push_back(row);
  }
  return j.dump(2) + "\n";
}

EvalReport evaluate(ModelBundle& models, const std::string& variant_name,
                    std::uint64_t seed_base, int episodes_per_task,
                    int max_steps) {
  EvalReport report;
  report.variant = variant_name;
  for (int k = 0; k < 3; ++k) {
    const auto kind = static_cast<TaskKind>(k);
    for (int i = 0; i < episodes_per_task; ++i) {
      const std::uint64_t seed = seed_base + static_cast<std::uint64_t>(
                                                 k * episodes_per_task + i);
      auto task = toyworld::make_task(kind, static_cast<int>(seed % 2));
      Rng probe(seed);
      auto init = toyworld::reset(task, probe);
      EvalRow row;
      row.task = toyworld::task_name(kind);
      row.seed = seed;
      row.init_hash = hash_world_state(init);
      row.score = rollout(models, task, seed, max_steps);
      report.rows.push_back(row);
    }
  }
  report.finalize();
  return report;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
}

}  // namespace lamp
