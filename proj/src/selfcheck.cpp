#include "lamp/selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "lamp/trainer.hpp"

namespace lamp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

GridSpec desk_grid() { return GridSpec{8, 8, 8, 32, 32}; }

ModelBundle desk_models(GuidanceMode mode, std::uint64_t seed) {
  PerceptConfig p;
  p.d_z = 48;
  p.layers = 2;
  p.heads = 4;
  MotionExpertConfig m;
  m.d_m = 48;
  m.layers = 2;
  m.heads = 4;
  m.d_time = 16;
  m.d_z = p.d_z;
  m.grid = desk_grid();
  GuidanceConfig g;
  g.mode = mode;
  g.heads = 4;
  g.d_z = p.d_z;
  g.d_m = m.d_m;
  ActionExpertConfig a;
  a.d_h = 48;
  a.layers = 2;
  a.heads = 4;
  a.d_time = 16;
  a.d_z = p.d_z;
  return make_models(p, m, g, a, seed);
}

}  // namespace

CheckResult check_gradients(double budget_seconds) {
  const auto t0 = Clock::now();
  using T = Tensor<double>;
  double worst = 0;
  bool ok = true;
  for (int seed = 0; seed < 20 && ok; ++seed) {
    Rng rng(1000 + seed);
    auto x = T::gaussian({3, 6}, rng);
    auto w = T::gaussian({6, 4}, rng);
    auto sc = T::gaussian({6}, rng);
    auto sh = T::gaussian({6}, rng);
    std::vector<std::function<T(const T&)>> fns = {
        [&](const T& t) { return mean_all(matmul(t, w)); },
        [&](const T& t) { return mean_all(mul(t, t)); },
        [&](const T& t) { return mean_all(gelu(t)); },
        [&](const T& t) { return mean_all(sigmoid(t)); },
        [&](const T& t) { return mean_all(layer_norm(t, sc, sh, 1e-5)); },
        [&](const T& t) { return sum_all(softmax_rows(t)); },
        [&](const T& t) {
          return mse(softmax_rows(t), softmax_rows(scale(t, 0.5)));
        },
        [&](const T& t) { return mean_all(add_row_vector(t, sc)); },
        [&](const T& t) { return mean_all(mul_row_vector(t, sc)); },
        [&](const T& t) { return mean_all(embedding_lookup(t, {0, 2, 1})); },
        [&](const T& t) { return mean_all(transpose(t)); },
        [&](const T& t) { return mean_all(concat_cols<double>({t, t})); },
    };
    for (auto& f : fns) {
      const double e = grad_check<double>(f, x, 1e-6);
      worst = std::max(worst, e);
      if (e > 1e-5) ok = false;
    }
  }

  // One-layer experts, double precision.
  {
    MotionExpertConfig mc;
    mc.d_m = 16;
    mc.layers = 1;
    mc.heads = 2;
    mc.d_time = 8;
    mc.d_z = 16;
    mc.grid = GridSpec{2, 2, 2, 16, 16};
    ActionExpertConfig ac;
    ac.d_h = 16;
    ac.layers = 1;
    ac.heads = 2;
    ac.d_time = 8;
    ac.d_z = 16;
    for (int seed = 0; seed < 20 && ok; ++seed) {
      Rng rng(2000 + seed);
      MotionExpert<double> moe(mc, rng);
      ActionExpert<double> ae(ac, rng);
      ParamRefs<double> ps;
      moe.collect(ps);
      ae.collect(ps);
      for (auto* p : ps)
        for (auto& v : p->tensor.values()) v = rng.gaussian() * 0.05;
      auto ctx = Tensor<double>::gaussian({3, 16}, rng);
      auto tokens = Tensor<double>::gaussian({mc.grid.motion_tokens(), 12},
                                             rng);
      const double e1 = grad_check<double>(
          [&](const Tensor<double>& t) {
            auto v = moe.velocity(t, FlowTime(0.4), ctx);
            return mean_all(mul(v, v));
          },
          tokens, 1e-6);
      const double state[4] = {0.4, 0.5, 0.1, 1.0};
      auto chunk = Tensor<double>::gaussian({ac.chunk_h, ac.d_a}, rng);
      const double e2 = grad_check<double>(
          [&](const Tensor<double>& t) {
            auto v = ae.velocity(t, FlowTime(0.6), ctx, state, FlowTime(0.1));
            return mean_all(mul(v, v));
          },
          chunk, 1e-6);
      worst = std::max(worst, std::max(e1, e2));
      if (worst > 1e-5) ok = false;
    }
  }
  const double secs = seconds_since(t0);
  char detail[128];
  std::snprintf(detail, sizeof detail, "max rel err %.2e in %.1fs", worst,
                secs);
  return {ok && secs <= budget_seconds, detail};
}

CheckResult check_flow_identities() {
  using T = Tensor<double>;
  bool ok = true;
  Rng rng(42);
  auto noise = T::gaussian({5, 4}, rng);
  auto data = T::gaussian({5, 4}, rng);
  ok = ok && interpolate(noise, data, FlowTime(0)).values() == noise.values();
  ok = ok && interpolate(noise, data, FlowTime(1)).values() == data.values();

  // Oracle-velocity Euler lands on the data to 1e-12.
  auto v = velocity_target(noise, data);
  VelocityField<double> oracle = [&](const T&, FlowTime) { return v; };
  auto reached = euler_integrate(oracle, noise, SolverSchedule(10));
  for (std::int64_t i = 0; i < reached.size(); ++i)
    ok = ok && std::abs(reached.values()[i] - data.values()[i]) <= 1e-12;

  // partial_denoise(N) is bit-identical to the full integration.
  VelocityField<double> fld = [](const T& x, FlowTime t) {
    return scale(x, 0.2 + t.tau);
  };
  auto a = euler_integrate(fld, noise, SolverSchedule(10));
  auto b = partial_denoise(fld, noise, SolverSchedule(10), 10);
  ok = ok && a.values() == b.values();

  // Linear-ODE error halves when N doubles (first-order convergence).
  VelocityField<double> lin = [](const T& x, FlowTime) { return x; };
  auto x0 = T::scalar(1.0);
  double prev = 0;
  for (int n : {20, 40, 80}) {
    const double err =
        std::abs(euler_integrate(lin, x0, SolverSchedule(n)).item() -
                 std::exp(1.0));
    if (prev > 0) {
      const double ratio = prev / err;
      ok = ok && ratio >= 1.6 && ratio <= 2.4;
    }
    prev = err;
  }
  return {ok, ""};
}

CheckResult check_beta_sampler() {
  FlowTimeSampler s(1.5, 1.0);
  bool ok = s.from_uniform(0.125) == 0.25;
  Rng rng(7);
  double acc = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) acc += s.sample(rng).tau;
  const double mean = acc / n;
  ok = ok && std::abs(mean - 0.6) <= 0.01;
  char detail[64];
  std::snprintf(detail, sizeof detail, "mean %.4f", mean);
  return {ok, detail};
}

CheckResult check_bijections() {
  bool ok = true;
  Rng rng(11);
  GridSpec g = desk_grid();
  const int k = g.keypoints(), t = g.t_steps;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    std::vector<double> tracks(static_cast<std::size_t>(k) * (t + 1) * 3);
    for (auto& v : tracks) v = rng.uniform(-2, 2);
    auto inc = tracks_to_increments(g, tracks);
    std::vector<double> anchors(static_cast<std::size_t>(k) * 3);
    for (int i = 0; i < k; ++i)
      for (int c = 0; c < 3; ++c)
        anchors[i * 3 + c] =
            tracks[static_cast<std::size_t>(i) * (t + 1) * 3 + c];
    ok = ok && increments_to_tracks(inc, anchors) == tracks;

    auto f = SceneFlowField::zeros(g);
    for (auto& v : f.values) v = rng.uniform(-3, 3);
    ok = ok && unpatchify(g, patchify(f)).values == f.values;
  }

  // Camera compensation: static world, moving capture cameras, zero field.
  auto task = toyworld::make_task(toyworld::TaskKind::push, 0);
  Rng wrng(3);
  auto state = toyworld::reset(task, wrng);
  std::vector<toyworld::WorldState> states(g.t_steps + 1, state);
  auto ref = toyworld::default_camera(32, 32);
  std::vector<CameraPose> moving;
  for (int i = 0; i <= g.t_steps; ++i)
    moving.push_back(look_at_camera({0.5 + 0.02 * i, -0.7, 0.9},
                                    {0.5, 0.5, 0.0}, {0, 0, 1}, ref.fx, ref.fy,
                                    ref.cx, ref.cy));
  auto flow = toyworld::ground_truth_flow(states, moving, ref, g);
  for (auto v : flow.field.values) ok = ok && std::abs(v) <= 1e-9;
  return {ok, ""};
}

CheckResult check_one_step_cost() {
  auto models = desk_models(GuidanceMode::gated, 3);
  // Identity normalizer; this check only counts evaluations and wall clock.
  models.motion_norm.fitted = true;
  for (int c = 0; c < 3; ++c) {
    models.motion_norm.mean[c] = 0.0;
    models.motion_norm.stddev[c] = 1.0;
  }
  Rng drng(4);
  auto ctx = Tensor<float>::gaussian({models.pcfg.context_tokens(),
                                      models.pcfg.d_z},
                                     drng);
  const SolverSchedule schedule(10);

  models.motion.velocity_evals = 0;
  Rng r1(5);
  (void)models.motion.one_step_hidden(ctx, schedule, r1);
  const bool one_eval = models.motion.velocity_evals == 1;

  models.motion.velocity_evals = 0;
  Rng r2(5);
  (void)models.motion.generate_flow(ctx, schedule, r2, models.motion_norm);
  const bool ten_evals = models.motion.velocity_evals == 10;

  // Wall clock, averaged over repeats.
  const int reps = 10;
  const auto ta = Clock::now();
  for (int i = 0; i < reps; ++i) {
    Rng r(6 + i);
    (void)models.motion.one_step_hidden(ctx, schedule, r);
  }
  const double t_one = seconds_since(ta);
  const auto tb = Clock::now();
  for (int i = 0; i < reps; ++i) {
    Rng r(6 + i);
    (void)models.motion.generate_flow(ctx, schedule, r, models.motion_norm);
  }
  const double t_full = seconds_since(tb);
  const double frac = t_one / t_full;
  char detail[96];
  std::snprintf(detail, sizeof detail,
                "evals 1 vs 10, wall %.1f%% of full generation", frac * 100);
  return {one_eval && ten_evals && frac <= 0.15, detail};
}

}  // namespace lamp
