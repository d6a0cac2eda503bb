#include "lamp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace lamp {

namespace {

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t n) {
  double acc = 0;
  for (std::size_t i = from; i < from + n; ++i) acc += v[i];
  return acc / static_cast<double>(n);
}

// Depth-masked runs replace the fitted depth statistics with the identity so
// the zeroed channel stays exactly zero after normalization.
MotionNormalizer effective_motion_norm(const ModelBundle& m) {
  MotionNormalizer n = m.motion_norm;
  if (m.depth_masked) {
    n.mean[2] = 0.0;
    n.stddev[2] = 1.0;
  }
  return n;
}

}  // namespace

ParamRefs<float> ModelBundle::stage1_params() {
  ParamRefs<float> ps;
  percept.collect(ps);
  motion.collect(ps);
  return ps;
}

ParamRefs<float> ModelBundle::stage2_params() {
  ParamRefs<float> ps;
  guidance.collect(ps);
  action.collect(ps);
  return ps;
}

ParamRefs<float> ModelBundle::all_params() {
  ParamRefs<float> ps = stage1_params();
  auto s2 = stage2_params();
  ps.insert(ps.end(), s2.begin(), s2.end());
  return ps;
}

ModelBundle make_models(const PerceptConfig& p, const MotionExpertConfig& m,
                        const GuidanceConfig& g, const ActionExpertConfig& a,
                        std::uint64_t seed) {
  if (m.d_z != p.d_z || g.d_z != p.d_z || a.d_z != p.d_z)
    throw ShapeError("context width d_z disagrees across module configs");
  if (g.d_m != m.d_m)
    throw ShapeError("motion hidden width d_m disagrees with guidance config");
  Rng rng(seed);
  ModelBundle b{p,
                m,
                g,
                a,
                PerceptionEncoder<float>(p, rng),
                MotionExpert<float>(m, rng),
                GuidanceModule<float>(g, rng),
                ActionExpert<float>(a, rng),
                {},
                {},
                10,
                4,
                false};
  return b;
}

Checkpoint to_checkpoint(ModelBundle& models) {
  Checkpoint ck;
  Config& c = ck.config;
  c.set_int("percept.image_w", models.pcfg.image_w);
  c.set_int("percept.image_h", models.pcfg.image_h);
  c.set_int("percept.patch", models.pcfg.patch);
  c.set_int("percept.d_z", models.pcfg.d_z);
  c.set_int("percept.layers", models.pcfg.layers);
  c.set_int("percept.heads", models.pcfg.heads);
  c.set_int("percept.vocab", models.pcfg.vocab);
  c.set_double("percept.far_depth", models.pcfg.far_depth);
  c.set_int("motion.d_m", models.mcfg.d_m);
  c.set_int("motion.layers", models.mcfg.layers);
  c.set_int("motion.heads", models.mcfg.heads);
  c.set_int("motion.d_time", models.mcfg.d_time);
  c.set_int("grid.k_h", models.mcfg.grid.k_h);
  c.set_int("grid.k_w", models.mcfg.grid.k_w);
  c.set_int("grid.t_steps", models.mcfg.grid.t_steps);
  c.set_int("grid.image_w", models.mcfg.grid.image_w);
  c.set_int("grid.image_h", models.mcfg.grid.image_h);
  c.set("guidance.mode", guidance_mode_name(models.gcfg.mode));
  c.set_int("guidance.heads", models.gcfg.heads);
  c.set_double("guidance.gate_init", models.gcfg.gate_init);
  c.set_int("action.chunk_h", models.acfg.chunk_h);
  c.set_int("action.d_a", models.acfg.d_a);
  c.set_int("action.d_h", models.acfg.d_h);
  c.set_int("action.layers", models.acfg.layers);
  c.set_int("action.heads", models.acfg.heads);
  c.set_int("action.d_time", models.acfg.d_time);
  c.set_int("solver.motion_steps", models.motion_solver_steps);
  c.set_int("solver.action_steps", models.action_solver_steps);
  c.set_int("variant.depth_masked", models.depth_masked ? 1 : 0);
  for (int i = 0; i < 3; ++i) {
    c.set_double("norm.motion.mean" + std::to_string(i),
                 models.motion_norm.mean[i]);
    c.set_double("norm.motion.stddev" + std::to_string(i),
                 models.motion_norm.stddev[i]);
  }
  for (int i = 0; i < 4; ++i) {
    c.set_double("norm.action.mean" + std::to_string(i),
                 models.action_norm.mean[i]);
    c.set_double("norm.action.stddev" + std::to_string(i),
                 models.action_norm.stddev[i]);
  }
  c.set_int("norm.fitted",
            models.motion_norm.fitted && models.action_norm.fitted ? 1 : 0);
  auto ps = models.all_params();
  ck.add_params(ps);
  return ck;
}

ModelBundle models_from_checkpoint(const Checkpoint& ck) {
  const Config& c = ck.config;
  PerceptConfig p;
  p.image_w = static_cast<int>(c.get_int("percept.image_w", p.image_w));
  p.image_h = static_cast<int>(c.get_int("percept.image_h", p.image_h));
  p.patch = static_cast<int>(c.get_int("percept.patch", p.patch));
  p.d_z = static_cast<int>(c.get_int("percept.d_z", p.d_z));
  p.layers = static_cast<int>(c.get_int("percept.layers", p.layers));
  p.heads = static_cast<int>(c.get_int("percept.heads", p.heads));
  p.vocab = static_cast<int>(c.get_int("percept.vocab", p.vocab));
  p.far_depth = c.get_double("percept.far_depth", p.far_depth);
  MotionExpertConfig m;
  m.d_m = static_cast<int>(c.get_int("motion.d_m", m.d_m));
  m.layers = static_cast<int>(c.get_int("motion.layers", m.layers));
  m.heads = static_cast<int>(c.get_int("motion.heads", m.heads));
  m.d_time = static_cast<int>(c.get_int("motion.d_time", m.d_time));
  m.d_z = p.d_z;
  m.grid.k_h = static_cast<int>(c.get_int("grid.k_h", m.grid.k_h));
  m.grid.k_w = static_cast<int>(c.get_int("grid.k_w", m.grid.k_w));
  m.grid.t_steps = static_cast<int>(c.get_int("grid.t_steps", m.grid.t_steps));
  m.grid.image_w = static_cast<int>(c.get_int("grid.image_w", m.grid.image_w));
  m.grid.image_h = static_cast<int>(c.get_int("grid.image_h", m.grid.image_h));
  GuidanceConfig g;
  g.mode = parse_guidance_mode(c.get_str("guidance.mode", "gated"));
  g.heads = static_cast<int>(c.get_int("guidance.heads", g.heads));
  g.gate_init = c.get_double("guidance.gate_init", g.gate_init);
  g.d_z = p.d_z;
  g.d_m = m.d_m;
  ActionExpertConfig a;
  a.chunk_h = static_cast<int>(c.get_int("action.chunk_h", a.chunk_h));
  a.d_a = static_cast<int>(c.get_int("action.d_a", a.d_a));
  a.d_h = static_cast<int>(c.get_int("action.d_h", a.d_h));
  a.layers = static_cast<int>(c.get_int("action.layers", a.layers));
  a.heads = static_cast<int>(c.get_int("action.heads", a.heads));
  a.d_time = static_cast<int>(c.get_int("action.d_time", a.d_time));
  a.d_z = p.d_z;

  ModelBundle b = make_models(p, m, g, a, /*seed=*/0);
  b.motion_solver_steps =
      static_cast<int>(c.get_int("solver.motion_steps", 10));
  b.action_solver_steps = static_cast<int>(c.get_int("solver.action_steps", 4));
  b.depth_masked = c.get_int("variant.depth_masked", 0) != 0;
  const bool fitted = c.get_int("norm.fitted", 0) != 0;
  b.motion_norm.fitted = fitted;
  b.action_norm.fitted = fitted;
  for (int i = 0; i < 3; ++i) {
    b.motion_norm.mean[i] =
        c.get_double("norm.motion.mean" + std::to_string(i), 0.0);
    b.motion_norm.stddev[i] =
        c.get_double("norm.motion.stddev" + std::to_string(i), 1.0);
  }
  for (int i = 0; i < 4; ++i) {
    b.action_norm.mean[i] =
        c.get_double("norm.action.mean" + std::to_string(i), 0.0);
    b.action_norm.stddev[i] =
        c.get_double("norm.action.stddev" + std::to_string(i), 1.0);
  }
  auto ps = b.all_params();
  ck.load_params(ps);
  return b;
}

double cosine_with_min_lr(double base_lr, double min_lr, std::int64_t step,
                          std::int64_t total) {
  if (total <= 1) return base_lr;
  const double frac =
      static_cast<double>(step) / static_cast<double>(total - 1);
  const double c = 0.5 * (1.0 + std::cos(frac * 3.14159265358979323846));
  return min_lr + (base_lr - min_lr) * c;
}

void write_loss_trace(const std::vector<double>& trace,
                      const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open trace file " + path);
  char buf[64];
  for (double v : trace) {
    std::snprintf(buf, sizeof buf, "%.9g\n", v);
    out << buf;
  }
}

Tensor<float> record_flow_tokens(const EpisodeRecord& rec,
                                 const ModelBundle& models) {
  const GridSpec& grid = models.mcfg.grid;
  auto field = SceneFlowField::zeros(grid);
  if (rec.flow.size() != field.values.size())
    throw ShapeError("record flow size does not match the model grid");
  for (std::size_t i = 0; i < rec.flow.size(); ++i)
    field.values[i] = rec.flow[i];
  if (models.depth_masked) field = mask_depth(field);
  field = normalize(field, effective_motion_norm(models));
  auto tokens = patchify(field);
  std::vector<float> vals(tokens.begin(), tokens.end());
  return Tensor<float>::from_values({grid.motion_tokens(), 12},
                                    std::move(vals));
}

std::vector<float> record_flow_mask(const EpisodeRecord& rec,
                                    const GridSpec& grid) {
  auto mask = patchify_mask(grid, rec.valid);
  return std::vector<float>(mask.begin(), mask.end());
}

Tensor<float> record_action_chunk(const EpisodeRecord& rec,
                                  const ModelBundle& models) {
  const int h = models.acfg.chunk_h;
  if (rec.actions.size() != static_cast<std::size_t>(h) * 4)
    throw ShapeError("record action chunk does not match the model horizon");
  std::vector<float> vals(rec.actions.size());
  for (int i = 0; i < h; ++i)
    for (int c = 0; c < 4; ++c)
      vals[i * 4 + c] = static_cast<float>(
          (rec.actions[i * 4 + c] - models.action_norm.mean[c]) /
          models.action_norm.stddev[c]);
  return Tensor<float>::from_values({h, 4}, std::move(vals));
}

TrainResult train_stage1(ModelBundle& models, const Dataset& data,
                         const StageConfig& cfg, Rng& rng) {
  if (data.records.empty())
    throw TrainingError("stage 1 requires a non-empty dataset");
  if (!data.motion_norm.fitted)
    throw TrainingError("dataset normalizers are not fitted");
  models.motion_norm = data.motion_norm;
  models.action_norm = data.action_norm;

  auto params = models.stage1_params();
  AdamW<float> opt(static_cast<float>(cfg.lr), 0.9f, 0.95f, 1e-8f,
                   static_cast<float>(cfg.weight_decay));
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  // Low flow times are where the velocity must come from perception alone
  // (the noisy tokens carry no signal yet), and that regime trains orders of
  // magnitude slower than denoising. Sample tau from a mixture: half the
  // draws sit exactly at 0 (the state generation starts from), the rest are
  // uniform so the rest of the solver path stays accurate.
  constexpr float kActiveWeight = 8.0f;
  FlowTimeSampler tau_sampler(1.0, 1.0);
  for (int step = 0; step < cfg.steps; ++step) {
    zero_grads(params);
    Tensor<float> total;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& rec =
          data.records[rng.next_below(data.records.size())];
      auto z = models.percept.encode(rec.rgb, rec.depth,
                                     static_cast<int>(rec.instruction_id));
      auto tokens = record_flow_tokens(rec, models);
      auto mask = record_flow_mask(rec, models.mcfg.grid);
      // Scene flow is sparse: well under 1% of the entries are nonzero, so
      // under a flat MSE their gradient is drowned out by the trivially
      // predictable zeros and the model never learns where the motion is.
      // Upweight entries whose data token is active; masked_mse renormalizes
      // by the weight sum.
      for (std::int64_t i = 0; i < tokens.size(); ++i)
        if (tokens.values()[i] != 0.0f) mask[i] *= kActiveWeight;
      auto noise =
          Tensor<float>::gaussian(tokens.shape(), rng);
      const FlowTime tau = rng.next_below(4) == 0 ? FlowTime(0.0)
                                                  : tau_sampler.sample(rng);
      auto xt = interpolate(noise, tokens, tau);
      auto pred = models.motion.velocity(xt, tau, z);
      auto loss = masked_mse(pred, velocity_target(noise, tokens), mask);
      // Weight by (1 - tau)^2: equivalent to an MSE on the displacement the
      // network actually predicts, so every flow time contributes gradients
      // of the same scale instead of 1/(1-tau)^2-amplified ones.
      const float tw = static_cast<float>((1.0 - tau.tau) * (1.0 - tau.tau));
      loss = scale(loss, tw);
      total = b ? add(total, loss) : loss;
    }
    total = scale(total, 1.0f / static_cast<float>(cfg.batch));
    total.backward();
    clip_grad_norm(params, static_cast<float>(cfg.clip));
    opt.set_lr(static_cast<float>(
        cosine_with_min_lr(cfg.lr, cfg.min_lr, step, cfg.steps)));
    opt.step(params);
    res.loss_trace.push_back(total.item());
  }
  const std::size_t k =
      std::min<std::size_t>(10, res.loss_trace.size());
  res.initial_loss = mean_of(res.loss_trace, 0, k);
  res.final_loss = mean_of(res.loss_trace, res.loss_trace.size() - k, k);
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return res;
}

TrainResult train_stage2(ModelBundle& models, const Dataset& data,
                         const StageConfig& cfg, Rng& rng) {
  if (data.records.empty())
    throw TrainingError("stage 2 requires a non-empty dataset");
  if (!models.motion_norm.fitted)
    throw TrainingError("stage 2 requires a stage-1-trained bundle");

  auto frozen = models.stage1_params();
  set_frozen(frozen, true);
  const std::uint64_t frozen_hash = params_hash(frozen);
  auto check_frozen = [&](int step) {
    if (params_hash(frozen) != frozen_hash)
      throw TrainingError("frozen parameters changed by step " +
                          std::to_string(step));
  };

  auto params = models.stage2_params();
  AdamW<float> opt(static_cast<float>(cfg.lr), 0.9f, 0.95f, 1e-8f,
                   static_cast<float>(cfg.weight_decay));
  FlowTimeSampler tau_sampler(1.5, 1.0);
  const SolverSchedule motion_schedule(models.motion_solver_steps);
  const FlowTime t1(1.0 / models.motion_solver_steps);
  const bool uses_motion = models.gcfg.mode != GuidanceMode::none;

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  for (int step = 0; step < cfg.steps; ++step) {
    zero_grads(params);
    Tensor<float> total;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& rec =
          data.records[rng.next_below(data.records.size())];
      auto z = models.percept.encode(rec.rgb, rec.depth,
                                     static_cast<int>(rec.instruction_id));
      Tensor<float> z_guided;
      if (uses_motion) {
        auto z_m = models.motion.one_step_hidden(z, motion_schedule, rng);
        z_guided = models.guidance.forward(z, z_m);
      } else {
        z_guided = z;
      }
      auto chunk = record_action_chunk(rec, models);
      auto noise = Tensor<float>::gaussian(chunk.shape(), rng);
      const FlowTime tau = tau_sampler.sample(rng);
      const float state[4] = {rec.state[0], rec.state[1], rec.state[2],
                              rec.state[3]};
      auto loss =
          models.action.action_loss(chunk, noise, tau, z_guided, state, t1);
      total = b ? add(total, loss) : loss;
    }
    total = scale(total, 1.0f / static_cast<float>(cfg.batch));
    total.backward();
    clip_grad_norm(params, static_cast<float>(cfg.clip));
    opt.set_lr(static_cast<float>(
        cosine_with_min_lr(cfg.lr, cfg.min_lr, step, cfg.steps)));
    opt.step(params);
    res.loss_trace.push_back(total.item());
    if (cfg.freeze_check_every > 0 && (step + 1) % cfg.freeze_check_every == 0)
      check_frozen(step + 1);
  }
  check_frozen(cfg.steps);
  const std::size_t k =
      std::min<std::size_t>(10, res.loss_trace.size());
  res.initial_loss = mean_of(res.loss_trace, 0, k);
  res.final_loss = mean_of(res.loss_trace, res.loss_trace.size() - k, k);
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return res;
}

}  // namespace lamp
