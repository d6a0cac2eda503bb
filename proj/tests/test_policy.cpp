#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lamp/policy.hpp"

using namespace lamp;
using namespace lamp::toyworld;

namespace {

ModelBundle tiny_models(GuidanceMode mode, std::uint64_t seed) {
  PerceptConfig p;
  p.d_z = 32;
  p.layers = 1;
  p.heads = 2;
  MotionExpertConfig m;
  m.d_m = 32;
  m.layers = 1;
  m.heads = 2;
  m.d_time = 16;
  m.d_z = p.d_z;
  m.grid = GridSpec{8, 8, 8, 32, 32};
  GuidanceConfig g;
  g.mode = mode;
  g.heads = 2;
  g.d_z = p.d_z;
  g.d_m = m.d_m;
  ActionExpertConfig a;
  a.d_h = 32;
  a.layers = 1;
  a.heads = 2;
  a.d_time = 16;
  a.d_z = p.d_z;
  auto b = make_models(p, m, g, a, seed);
  b.motion_norm.fitted = true;
  b.action_norm.fitted = true;
  return b;
}

}  // namespace

TEST_CASE("inference call-count contract") {
  auto cam = default_camera(32, 32);
  auto task = make_task(TaskKind::pick_place, 0);
  Rng wrng(1);
  auto state = reset(task, wrng);
  auto obs = render(state, cam);
  const double s[4] = {state.gripper[0], state.gripper[1], state.gripper[2],
                       state.gripper_open};

  for (auto mode : {GuidanceMode::gated, GuidanceMode::add,
                    GuidanceMode::concat_mlp, GuidanceMode::none}) {
    CAPTURE(guidance_mode_name(mode));
    auto models = tiny_models(mode, 5);
    Rng rng(2);
    InferStats stats;
    auto chunk = infer(models, obs, task.instruction_id, s, rng, &stats);
    CHECK(chunk.size() == 4u * models.acfg.chunk_h);
    CHECK(stats.action_evals == models.action_solver_steps);
    CHECK(stats.motion_evals == (mode == GuidanceMode::none ? 0 : 1));
  }
}

TEST_CASE("inference is deterministic in the rng") {
  auto cam = default_camera(32, 32);
  auto task = make_task(TaskKind::push, 1);
  Rng wrng(3);
  auto state = reset(task, wrng);
  auto obs = render(state, cam);
  const double s[4] = {state.gripper[0], state.gripper[1], state.gripper[2],
                       state.gripper_open};
  auto models = tiny_models(GuidanceMode::gated, 5);
  Rng r1(7), r2(7), r3(8);
  auto c1 = infer(models, obs, task.instruction_id, s, r1);
  auto c2 = infer(models, obs, task.instruction_id, s, r2);
  auto c3 = infer(models, obs, task.instruction_id, s, r3);
  CHECK(c1 == c2);
  CHECK(c1 != c3);  // fresh noise gives a different chunk
}

TEST_CASE("zero actions make no progress; the expert reaches 1.0") {
  for (int k = 0; k < 3; ++k) {
    const auto kind = static_cast<TaskKind>(k);
    auto task = make_task(kind, 0);
    Rng rng(100 + k);
    auto s = reset(task, rng);
    std::vector<WorldState> idle{s};
    for (int t = 0; t < 40; ++t) {
      double a[4] = {0, 0, 0, 0};
      idle.push_back(step(idle.back(), a));
    }
    CHECK(progress_score(idle, task) == 0.0);

    std::vector<WorldState> traj{s};
    bool failed = false;
    for (int t = 0; t < 200 && !failed; ++t) {
      double a[4];
      scripted_expert(traj.back(), task, a, &failed);
      traj.push_back(step(traj.back(), a));
      if (progress_score(traj, task) == 1.0) break;
    }
    CHECK(progress_score(traj, task) == 1.0);
  }
}

TEST_CASE("rollout runs a full episode and is deterministic") {
  auto models = tiny_models(GuidanceMode::gated, 5);
  auto task = make_task(TaskKind::push, 0);
  const double s1 = rollout(models, task, 42, 24);
  const double s2 = rollout(models, task, 42, 24);
  CHECK(s1 == s2);
  CHECK(s1 >= 0.0);
  CHECK(s1 <= 1.0);
}

TEST_CASE("evaluation reports") {
  auto models = tiny_models(GuidanceMode::gated, 5);
  auto report = evaluate(models, "gated", 1000, 2, 16);
  CHECK(report.rows.size() == 6);  // 2 per task, 3 tasks

  SUBCASE("aggregates are recomputed from rows") {
    double acc = 0;
    for (const auto& r : report.rows) acc += r.score;
    CHECK(report.mean_score == doctest::Approx(acc / 6).epsilon(1e-12));
    EvalReport copy = report;
    copy.mean_score = -1;
    copy.finalize();
    CHECK(copy.mean_score == report.mean_score);
  }

  SUBCASE("reports are byte-identical across runs") {
    auto report2 = evaluate(models, "gated", 1000, 2, 16);
    CHECK(report.to_json() == report2.to_json());
  }

  SUBCASE("paired seeds give identical initial states across variants") {
    auto other = tiny_models(GuidanceMode::none, 99);
    auto report2 = evaluate(other, "none", 1000, 2, 16);
    REQUIRE(report2.rows.size() == report.rows.size());
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
      CHECK(report.rows[i].seed == report2.rows[i].seed);
      CHECK(report.rows[i].init_hash == report2.rows[i].init_hash);
    }
  }

  SUBCASE("init hashes differ across seeds") {
    CHECK(report.rows[0].init_hash != report.rows[1].init_hash);
  }

  SUBCASE("json has the documented top-level fields") {
    auto j = report.to_json();
    CHECK(j.find("\"variant\"") != std::string::npos);
    CHECK(j.find("\"mean_score\"") != std::string::npos);
    CHECK(j.find("\"task_means\"") != std::string::npos);
    CHECK(j.find("\"rows\"") != std::string::npos);
    CHECK(j.find("wall") == std::string::npos);  // no timing fields
  }
}
