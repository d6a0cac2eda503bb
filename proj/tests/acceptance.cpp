// Acceptance gate: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Heavier end-to-end checks (training progress, ablation,
// determinism) share artifacts to stay inside the runtime budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lamp/policy.hpp"
#include "lamp/selfcheck.hpp"
#include "lamp/trainer.hpp"
#include "lamp/viz.hpp"

using namespace lamp;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int idx, const std::string& name, bool pass,
            const std::string& detail = "") {
  std::printf("%s criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", idx,
              name.c_str(), detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

// ---- shared desk-scale configuration ----

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

// ---- criteria 1..5: shared fast checks (see lamp/selfcheck.hpp) ----

void criterion_gradients() {
  auto r = check_gradients(120.0);
  report(1, "gradient correctness", r.pass, r.detail);
}

void criterion_flow_identities() {
  auto r = check_flow_identities();
  report(2, "flow-matching identities", r.pass, r.detail);
}

void criterion_beta_sampler() {
  auto r = check_beta_sampler();
  report(3, "beta flow-time sampler", r.pass, r.detail);
}

void criterion_bijections() {
  auto r = check_bijections();
  report(4, "representation bijections", r.pass, r.detail);
}

void criterion_one_step_cost() {
  auto r = check_one_step_cost();
  report(5, "one-step guidance cost", r.pass, r.detail);
}


// ---- criteria 6..11 share trained artifacts ----

struct TrainedArtifacts {
  Dataset data;
  Dataset heldout;
  ModelBundle stage1;  // gated 3D backbone after stage 1
  TrainResult stage1_result;
  double stage1_seconds = 0;
};

TrainedArtifacts train_backbone(std::uint64_t seed, int s1_steps) {
  DatagenConfig dcfg;
  dcfg.grid = desk_grid();
  dcfg.episodes = 24;
  Rng drng(seed);
  TrainedArtifacts art{generate_dataset(dcfg, drng),
                       Dataset{},
                       desk_models(GuidanceMode::gated, seed),
                       {},
                       0};
  DatagenConfig hcfg = dcfg;
  hcfg.episodes = 6;
  Rng hrng(seed + 500);
  art.heldout = generate_dataset(hcfg, hrng);

  StageConfig s1;
  s1.steps = s1_steps;
  s1.batch = 4;
  s1.lr = 2e-4;
  s1.min_lr = 2e-5;
  s1.weight_decay = 1e-8;
  const auto t0 = Clock::now();
  Rng trng(seed + 1);
  art.stage1_result = train_stage1(art.stage1, art.data, s1, trng);
  art.stage1_seconds = seconds_since(t0);
  return art;
}

// Mean squared error of a generated flow field against the ground truth,
// averaged over held-out records; the all-zero predictor is the baseline.
std::pair<double, double> heldout_flow_mse(ModelBundle& models,
                                           const Dataset& heldout) {
  double mse_model = 0, mse_zero = 0;
  std::size_t n = 0;
  Rng rng(99);
  for (const auto& rec : heldout.records) {
    auto z = models.percept.encode(rec.rgb, rec.depth,
                                   static_cast<int>(rec.instruction_id));
    auto field = models.motion.generate_flow(z, SolverSchedule(10), rng,
                                             models.motion_norm);
    for (std::size_t i = 0; i < rec.flow.size(); ++i) {
      const double d = field.values[i] - rec.flow[i];
      mse_model += d * d;
      mse_zero += static_cast<double>(rec.flow[i]) * rec.flow[i];
      ++n;
    }
  }
  return {mse_model / n, mse_zero / n};
}

void criterion_training_and_freeze(TrainedArtifacts& art, int s2_steps,
                                   ModelBundle& stage2_out) {
  const auto t0 = Clock::now();
  const auto& trace = art.stage1_result.loss_trace;
  double best = trace.empty() ? 1e9 : trace.front();
  for (double v : trace) best = std::min(best, v);
  const bool halved = best <= 0.5 * art.stage1_result.initial_loss;

  auto [m_model, m_zero] = heldout_flow_mse(art.stage1, art.heldout);

  // Stage 2 on the frozen backbone.
  auto frozen_ps = art.stage1.stage1_params();
  const auto hash_before = params_hash(frozen_ps);
  stage2_out = models_from_checkpoint(to_checkpoint(art.stage1));
  StageConfig s2;
  s2.steps = s2_steps;
  s2.batch = 4;
  s2.lr = 1e-4;
  s2.min_lr = 1e-5;
  s2.weight_decay = 0.0;
  Rng rng(77);
  auto res = train_stage2(stage2_out, art.data, s2, rng);
  const bool s2_ok = res.final_loss <= 0.6 * res.initial_loss;

  auto frozen_after = stage2_out.stage1_params();
  const bool frozen_ok = params_hash(frozen_after) == hash_before;

  const double total_secs =
      art.stage1_seconds + seconds_since(t0);
  char d6[96], d8[192];
  std::snprintf(d6, sizeof d6, "stage-1 hash %s after stage 2",
                frozen_ok ? "unchanged" : "CHANGED");
  report(6, "freeze contract", frozen_ok, d6);
  std::snprintf(d8, sizeof d8,
                "stage1 %.3f->%.3f (best %.3f), flow mse %.3e vs zero %.3e, "
                "stage2 %.3f->%.3f, %.0fs",
                art.stage1_result.initial_loss, art.stage1_result.final_loss,
                best, m_model, m_zero, res.initial_loss, res.final_loss,
                total_secs);
  report(8, "training progress",
         halved && m_model < m_zero && s2_ok && total_secs <= 1800.0, d8);
}

void criterion_gate_behavior(TrainedArtifacts& art, ModelBundle& stage2) {
  bool ok = true;
  GuidanceConfig gc;
  gc.d_z = 48;
  gc.d_m = 48;
  gc.heads = 4;
  Rng rng(13);
  Rng drng(14);
  auto z = Tensor<double>::gaussian({9, gc.d_z}, drng);
  auto z_m = Tensor<double>::gaussian({8, gc.d_m}, drng);

  GuidanceConfig closed = gc;
  closed.gate_init = -30.0;
  GuidanceModule<double> gneg(closed, rng);
  auto out = gneg.forward(z, z_m);
  for (std::int64_t i = 0; i < z.size(); ++i)
    ok = ok && std::abs(out.values()[i] - z.values()[i]) <= 1e-8;

  GuidanceModule<double> gzero(gc, rng);
  auto o = gzero.forward(z, z_m);
  auto h = gzero.ln_motion.forward(gzero.w_proj.forward(z_m));
  auto ca = multi_head_attention(gzero.wq.forward(gzero.ln_q.forward(z)),
                                 gzero.wk.forward(h), gzero.wv.forward(h),
                                 gc.heads, gzero.wo);
  for (std::int64_t i = 0; i < z.size(); ++i)
    ok = ok &&
         std::abs(o.values()[i] - (z.values()[i] + 0.5 * ca.values()[i])) <=
             1e-12 * std::max(1.0, std::abs(o.values()[i]));

  // dL/dg on a generic batch from the stage-2-trained pipeline. The action
  // expert must be past its zero-initialized output layer, otherwise no
  // gradient reaches the gate.
  auto models = models_from_checkpoint(to_checkpoint(stage2));
  const auto& rec = art.data.records[0];
  auto zf = models.percept.encode(rec.rgb, rec.depth,
                                  static_cast<int>(rec.instruction_id));
  Rng srng(15);
  auto z_mf = models.motion.one_step_hidden(zf, SolverSchedule(10), srng);
  models.guidance.gate.tensor.set_requires_grad(true);
  models.guidance.gate.tensor.zero_grad();
  auto zg = models.guidance.forward(zf, z_mf);
  auto chunk = record_action_chunk(rec, models);
  auto noise = Tensor<float>::gaussian(chunk.shape(), srng);
  const float state[4] = {rec.state[0], rec.state[1], rec.state[2],
                          rec.state[3]};
  auto loss = models.action.action_loss(chunk, noise, FlowTime(0.4), zg, state,
                                        FlowTime(0.1));
  loss.backward();
  ok = ok && models.guidance.gate.tensor.grad().size() == 1 &&
       models.guidance.gate.tensor.grad()[0] != 0.0f;
  report(7, "gate behavior", ok);
}

void criterion_ablation(std::uint64_t base_seed, int s1_steps, int s2_steps,
                        int episodes_per_task) {
  const auto t0 = Clock::now();
  struct VariantScore {
    double sum = 0;
    double stack_sum = 0;
    int n = 0;
  };
  std::map<std::string, VariantScore> scores;

  for (int si = 0; si < 3; ++si) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(si);
    auto art = train_backbone(seed, s1_steps);

    auto art2d = desk_models(GuidanceMode::gated, seed);
    art2d.depth_masked = true;
    StageConfig s1;
    s1.steps = s1_steps;
    s1.batch = 4;
    s1.lr = 2e-4;
    s1.min_lr = 2e-5;
    s1.weight_decay = 1e-8;
    Rng trng(seed + 1);
    train_stage1(art2d, art.data, s1, trng);

    struct V {
      const char* name;
      GuidanceMode mode;
      bool masked;
    };
    const std::vector<V> variants = {
        {"gated_3d", GuidanceMode::gated, false},
        {"gated_2d", GuidanceMode::gated, true},
        {"add", GuidanceMode::add, false},
        {"concat_mlp", GuidanceMode::concat_mlp, false},
        {"none", GuidanceMode::none, false},
    };
    std::vector<EvalRow> first_rows;
    for (const auto& v : variants) {
      auto models = models_from_checkpoint(
          to_checkpoint(v.masked ? art2d : art.stage1));
      models.gcfg.mode = v.mode;
      Rng grng(seed + 7);
      models.guidance = GuidanceModule<float>(models.gcfg, grng);
      StageConfig s2;
      s2.steps = s2_steps;
      s2.batch = 4;
      s2.lr = 1e-4;
      s2.min_lr = 1e-5;
      s2.weight_decay = 0.0;
      Rng srng(seed + 2);
      train_stage2(models, art.data, s2, srng);
      auto report_v = evaluate(models, v.name, seed * 1000 + 1,
                               episodes_per_task);
      if (first_rows.empty()) first_rows = report_v.rows;
      for (std::size_t i = 0; i < report_v.rows.size(); ++i)
        if (report_v.rows[i].init_hash != first_rows[i].init_hash) {
          report(9, "directional ablation", false,
                 "paired initial states diverged");
          return;
        }
      auto& sc = scores[v.name];
      sc.sum += report_v.mean_score;
      sc.stack_sum += report_v.task_means[2];
      sc.n += 1;
      std::printf("  [ablation seed %d] %-10s mean %.3f stack %.3f\n", si,
                  v.name, report_v.mean_score, report_v.task_means[2]);
      std::fflush(stdout);
    }
  }

  auto mean = [&](const char* k) { return scores[k].sum / scores[k].n; };
  auto stack = [&](const char* k) {
    return scores[k].stack_sum / scores[k].n;
  };
  const bool a = stack("gated_3d") >= stack("none");
  const bool b = stack("gated_3d") >= stack("gated_2d");
  const bool c =
      mean("gated_3d") >= mean("add") && mean("gated_3d") >= mean("concat_mlp");
  const double secs = seconds_since(t0);
  char detail[256];
  std::snprintf(detail, sizeof detail,
                "stack: gated %.3f none %.3f 2d %.3f | mean: gated %.3f add "
                "%.3f concat %.3f | %.0fs",
                stack("gated_3d"), stack("none"), stack("gated_2d"),
                mean("gated_3d"), mean("add"), mean("concat_mlp"), secs);
  report(9, "directional ablation", a && b && c && secs <= 7200.0, detail);
}

void criterion_determinism() {
  auto run = [&](const std::string& tag) {
    DatagenConfig dcfg;
    dcfg.grid = desk_grid();
    dcfg.episodes = 4;
    Rng drng(21);
    auto data = generate_dataset(dcfg, drng);
    save_dataset(data, tag + ".lampds");
    auto models = desk_models(GuidanceMode::gated, 21);
    StageConfig s1;
    s1.steps = 6;
    s1.batch = 2;
    Rng r1(22);
    auto res1 = train_stage1(models, data, s1, r1);
    write_loss_trace(res1.loss_trace, tag + ".s1trace");
    StageConfig s2;
    s2.steps = 6;
    s2.batch = 2;
    s2.weight_decay = 0.0;
    Rng r2(23);
    auto res2 = train_stage2(models, data, s2, r2);
    write_loss_trace(res2.loss_trace, tag + ".s2trace");
    save_checkpoint(to_checkpoint(models), tag + ".lampck");
    auto report_e = evaluate(models, "gated", 500, 2, 24);
    write_text_file(tag + ".eval.json", report_e.to_json());
  };
  run("det_a");
  run("det_b");
  bool ok = true;
  for (const char* suffix :
       {".lampds", ".s1trace", ".s2trace", ".lampck", ".eval.json"}) {
    const auto a = slurp(std::string("det_a") + suffix);
    const auto b = slurp(std::string("det_b") + suffix);
    ok = ok && !a.empty() && a == b;
  }
  for (const char* tag : {"det_a", "det_b"})
    for (const char* suffix :
         {".lampds", ".s1trace", ".s2trace", ".lampck", ".eval.json"})
      std::remove((std::string(tag) + suffix).c_str());
  report(10, "end-to-end determinism", ok);
}

void criterion_serialization() {
  bool ok = true;
  // Dataset round trip.
  DatagenConfig dcfg;
  dcfg.grid = desk_grid();
  dcfg.episodes = 2;
  Rng drng(31);
  auto data = generate_dataset(dcfg, drng);
  save_dataset(data, "acc1.lampds");
  auto back = load_dataset("acc1.lampds");
  save_dataset(back, "acc2.lampds");
  ok = ok && slurp("acc1.lampds") == slurp("acc2.lampds");

  // Checkpoint round trip.
  auto models = desk_models(GuidanceMode::gated, 33);
  save_checkpoint(to_checkpoint(models), "acc1.lampck");
  auto ck = load_checkpoint("acc1.lampck");
  save_checkpoint(ck, "acc2.lampck");
  ok = ok && slurp("acc1.lampck") == slurp("acc2.lampck");

  // Corruption detection on both containers.
  for (const char* path : {"acc1.lampds", "acc1.lampck"}) {
    auto bytes = slurp(path);
    bytes[bytes.size() / 2] ^= 0x01;
    const std::string bad = std::string("bad_") + path;
    std::ofstream out(bad, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    bool threw = false;
    try {
      if (bad.find("lampds") != std::string::npos)
        (void)load_dataset(bad);
      else
        (void)load_checkpoint(bad);
    } catch (const std::exception&) {
      threw = true;
    }
    ok = ok && threw;
    std::remove(bad.c_str());
  }
  for (const char* p :
       {"acc1.lampds", "acc2.lampds", "acc1.lampck", "acc2.lampck"})
    std::remove(p);
  report(11, "serialization", ok,
         "selftest subcommand covered by the CLI test");
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  criterion_gradients();
  criterion_flow_identities();
  criterion_beta_sampler();
  criterion_bijections();
  criterion_one_step_cost();

  auto art = train_backbone(/*seed=*/101, /*s1_steps=*/600);
  ModelBundle stage2 = desk_models(GuidanceMode::gated, 0);
  criterion_training_and_freeze(art, /*s2_steps=*/500, stage2);
  criterion_gate_behavior(art, stage2);
  criterion_ablation(/*base_seed=*/201, /*s1_steps=*/600, /*s2_steps=*/500,
                     /*episodes_per_task=*/34);
  criterion_determinism();
  criterion_serialization();

  std::printf("acceptance finished in %.0fs with %d failure(s)\n",
              seconds_since(t0), g_failures);
  return g_failures ? 1 : 0;
}
