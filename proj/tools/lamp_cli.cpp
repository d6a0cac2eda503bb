#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "lamp/checkpoint.hpp"
#include "lamp/dataset.hpp"
#include "lamp/kernels.hpp"
#include "lamp/policy.hpp"
#include "lamp/selfcheck.hpp"
#include "lamp/trainer.hpp"
#include "lamp/viz.hpp"

using namespace lamp;

namespace {

GridSpec desk_grid() { return GridSpec{8, 8, 8, 32, 32}; }

ModelBundle fresh_models(GuidanceMode mode, std::uint64_t seed) {
  PerceptConfig p;
  MotionExpertConfig m;
  m.grid = desk_grid();
  GuidanceConfig g;
  g.mode = mode;
  ActionExpertConfig a;
  return make_models(p, m, g, a, seed);
}

void write_timing_sidecar(const std::string& path, double seconds) {
  std::ofstream out(path, std::ios::binary);
  char buf[64];
  std::snprintf(buf, sizeof buf, "wall_seconds = %.3f\n", seconds);
  out << buf;
}

int run_selftest() {
  // Fast correctness checks shared with the acceptance gate: gradients,
  // flow-matching identities, the flow-time sampler, representation
  // bijections, and the one-step hidden-state cost contract.
  struct Named {
    const char* name;
    CheckResult result;
  };
  const Named checks[] = {
      {"gradients", check_gradients()},
      {"flow identities", check_flow_identities()},
      {"beta sampler", check_beta_sampler()},
      {"bijections", check_bijections()},
      {"one-step cost", check_one_step_cost()},
  };
  for (const auto& c : checks) {
    std::cout << "selftest " << c.name << ": "
              << (c.result.pass ? "ok" : "FAILED")
              << (c.result.detail.empty() ? "" : " (" + c.result.detail + ")")
              << "\n";
    if (!c.result.pass) return 1;
  }

  // Serialization and kernel sanity without any training.
  Config c;
  c.set_int("a", 7);
  c.set_double("pi", 3.14159265358979);
  if (Config::parse(c.serialize()).serialize() != c.serialize()) {
    std::cerr << "selftest: config round trip failed\n";
    return 1;
  }

  DatagenConfig dcfg;
  dcfg.grid = desk_grid();
  dcfg.episodes = 2;
  Rng rng(1);
  auto ds = generate_dataset(dcfg, rng);
  save_dataset(ds, "selftest.lampds");
  auto back = load_dataset("selftest.lampds");
  std::remove("selftest.lampds");
  if (back.records.size() != ds.records.size() ||
      back.records[0].flow != ds.records[0].flow) {
    std::cerr << "selftest: dataset round trip failed\n";
    return 1;
  }

  auto models = fresh_models(GuidanceMode::gated, 11);
  auto ck = to_checkpoint(models);
  save_checkpoint(ck, "selftest.lampck");
  auto ck2 = load_checkpoint("selftest.lampck");
  std::remove("selftest.lampck");
  auto models2 = models_from_checkpoint(ck2);
  auto p1 = models.all_params();
  auto p2 = models2.all_params();
  if (params_hash(p1) != params_hash(p2)) {
    std::cerr << "selftest: checkpoint round trip failed\n";
    return 1;
  }

  Rng krng(5);
  auto a = Tensor<float>::gaussian({9, 7}, krng);
  auto b = Tensor<float>::gaussian({7, 5}, krng);
  std::vector<float> serial(9 * 5), omp(9 * 5);
  kernels::matmul_nn_serial(a.values().data(), b.values().data(),
                            serial.data(), 9, 7, 5);
  kernels::matmul_nn_omp(a.values().data(), b.values().data(), omp.data(), 9,
                         7, 5);
  if (serial != omp) {
    std::cerr << "selftest: kernel parity failed\n";
    return 1;
  }

  std::cout << "selftest ok\n";
  return 0;
}

struct AblationResult {
  std::string variant;
  EvalReport report;
};

int run_ablate(const std::string& out_dir, std::uint64_t seed, int episodes,
               int s1_steps, int s2_steps, int datagen_episodes,
               int eval_episodes_per_task) {
  DatagenConfig dcfg;
  dcfg.grid = desk_grid();
  dcfg.episodes = datagen_episodes;
  Rng drng(seed);
  auto data = generate_dataset(dcfg, drng);

  StageConfig s1;
  s1.steps = s1_steps;
  s1.lr = 2e-4;
  s1.min_lr = 2e-5;
  s1.weight_decay = 1e-8;
  StageConfig s2;
  s2.steps = s2_steps;
  s2.lr = 1e-4;
  s2.min_lr = 1e-5;
  s2.weight_decay = 0.0;

  // Two stage-1 backbones: full 3D flow and the depth-masked 2D variant.
  auto base3d = fresh_models(GuidanceMode::gated, seed);
  Rng t1(seed + 1);
  auto r3d = train_stage1(base3d, data, s1, t1);
  std::cout << "stage1 3d: " << r3d.initial_loss << " -> " << r3d.final_loss
            << "\n";
  auto ck3d = to_checkpoint(base3d);

  auto base2d = fresh_models(GuidanceMode::gated, seed);
  base2d.depth_masked = true;
  Rng t2(seed + 1);
  auto r2d = train_stage1(base2d, data, s1, t2);
  std::cout << "stage1 2d: " << r2d.initial_loss << " -> " << r2d.final_loss
            << "\n";
  auto ck2d = to_checkpoint(base2d);

  struct VariantSpec {
    std::string name;
    GuidanceMode mode;
    bool masked;
  };
  const std::vector<VariantSpec> variants = {
      {"gated_3d", GuidanceMode::gated, false},
      {"gated_2d", GuidanceMode::gated, true},
      {"add", GuidanceMode::add, false},
      {"concat_mlp", GuidanceMode::concat_mlp, false},
      {"none", GuidanceMode::none, false},
  };

  std::vector<AblationResult> results;
  std::vector<EvalRow> first_rows;
  for (const auto& v : variants) {
    const Checkpoint& base_ck = v.masked ? ck2d : ck3d;
    auto models = models_from_checkpoint(base_ck);
    models.gcfg.mode = v.mode;
    Rng grng(seed + 7);
    GuidanceConfig gc = models.gcfg;
    models.guidance = GuidanceModule<float>(gc, grng);
    Rng srng(seed + 2);
    auto res = train_stage2(models, data, s2, srng);
    std::cout << "stage2 " << v.name << ": " << res.initial_loss << " -> "
              << res.final_loss << "\n";
    auto report = evaluate(models, v.name, seed + 100, eval_episodes_per_task);
    write_text_file(out_dir + "/eval_" + v.name + ".json", report.to_json());
    auto ck = to_checkpoint(models);
    save_checkpoint(ck, out_dir + "/" + v.name + ".lampck");
    if (first_rows.empty()) first_rows = report.rows;
    // Paired evaluation: every variant must see identical initial states.
    for (std::size_t i = 0; i < report.rows.size(); ++i)
      if (report.rows[i].init_hash != first_rows[i].init_hash) {
        std::cerr << "ablate: paired initial states diverged\n";
        return 1;
      }
    results.push_back({v.name, report});
  }

  std::string table = "variant mean push pick_place stack\n";
  char buf[160];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%s %.4f %.4f %.4f %.4f\n",
                  r.variant.c_str(), r.report.mean_score,
                  r.report.task_means[0], r.report.task_means[1],
                  r.report.task_means[2]);
    table += buf;
  }
  write_text_file(out_dir + "/ablation_table.txt", table);
  std::cout << table;
  (void)episodes;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-expert manipulation policy: data, training, evaluation"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "global random seed")->capture_default_str();

  // datagen
  auto* datagen = app.add_subcommand("datagen", "generate a demo dataset");
  std::string dg_out = "data.lampds";
  int dg_episodes = 60;
  datagen->add_option("--out", dg_out, "output dataset path");
  datagen->add_option("--episodes", dg_episodes, "episode count");

  // train-motion (stage 1)
  auto* tm = app.add_subcommand("train-motion",
                                "stage 1: perception + motion expert");
  std::string tm_data = "data.lampds", tm_out = "stage1.lampck";
  int tm_steps = 400, tm_batch = 4;
  double tm_lr = 2e-4;
  bool tm_mask = false;
  tm->add_option("--data", tm_data, "dataset path");
  tm->add_option("--out", tm_out, "output checkpoint path");
  tm->add_option("--steps", tm_steps, "optimizer steps");
  tm->add_option("--batch", tm_batch, "batch size");
  tm->add_option("--lr", tm_lr, "peak learning rate");
  tm->add_flag("--mask-depth", tm_mask, "train the depth-masked 2D variant");

  // train-action (stage 2)
  auto* ta = app.add_subcommand("train-action",
                                "stage 2: guidance + action expert");
  std::string ta_data = "data.lampds", ta_init = "stage1.lampck",
              ta_out = "stage2.lampck", ta_mode = "gated";
  int ta_steps = 400, ta_batch = 4;
  double ta_lr = 1e-4;
  ta->add_option("--data", ta_data, "dataset path");
  ta->add_option("--init", ta_init, "stage-1 checkpoint");
  ta->add_option("--out", ta_out, "output checkpoint path");
  ta->add_option("--steps", ta_steps, "optimizer steps");
  ta->add_option("--batch", ta_batch, "batch size");
  ta->add_option("--lr", ta_lr, "peak learning rate");
  ta->add_option("--mode", ta_mode, "guidance mode: gated|add|concat_mlp|none");

  // eval
  auto* ev = app.add_subcommand("eval", "closed-loop policy evaluation");
  std::string ev_ckpt = "stage2.lampck", ev_out = "eval.json";
  int ev_episodes = 10;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path");
  ev->add_option("--out", ev_out, "report path");
  ev->add_option("--episodes", ev_episodes, "episodes per task");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and compare all variants");
  std::string ab_out = ".";
  int ab_s1 = 400, ab_s2 = 400, ab_data = 30, ab_eval = 10;
  ab->add_option("--out", ab_out, "output directory");
  ab->add_option("--stage1-steps", ab_s1, "stage 1 steps per backbone");
  ab->add_option("--stage2-steps", ab_s2, "stage 2 steps per variant");
  ab->add_option("--datagen-episodes", ab_data, "demo episodes");
  ab->add_option("--eval-episodes", ab_eval, "eval episodes per task");

  // visualize
  auto* vz = app.add_subcommand("visualize", "overlay predicted motion");
  std::string vz_ckpt = "stage1.lampck", vz_out = "motion";
  int vz_task = 1;
  vz->add_option("--ckpt", vz_ckpt, "checkpoint path");
  vz->add_option("--out", vz_out, "output prefix (.ppm/.svg)");
  vz->add_option("--task", vz_task, "task kind 0..2");

  // selftest
  app.add_subcommand(
      "selftest",
      "fast correctness checks: gradients, flow identities, sampler, "
      "bijections, one-step cost, serialization, kernel parity");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("selftest")) return run_selftest();

    if (app.got_subcommand("datagen")) {
      DatagenConfig cfg;
      cfg.grid = desk_grid();
      cfg.episodes = dg_episodes;
      Rng rng(seed);
      auto ds = generate_dataset(cfg, rng);
      save_dataset(ds, dg_out);
      std::cout << "wrote " << ds.records.size() << " records ("
                << ds.expert_resamples << " resamples) to " << dg_out << "\n";
      return 0;
    }

    if (app.got_subcommand("train-motion")) {
      auto data = load_dataset(tm_data);
      auto models = fresh_models(GuidanceMode::gated, seed);
      models.depth_masked = tm_mask;
      StageConfig cfg;
      cfg.steps = tm_steps;
      cfg.batch = tm_batch;
      cfg.lr = tm_lr;
      cfg.min_lr = tm_lr * 0.1;
      cfg.weight_decay = 1e-8;
      Rng rng(seed + 1);
      auto res = train_stage1(models, data, cfg, rng);
      auto ck = to_checkpoint(models);
      save_checkpoint(ck, tm_out);
      write_loss_trace(res.loss_trace, tm_out + ".trace.txt");
      write_timing_sidecar(tm_out + ".timing.txt", res.wall_seconds);
      std::cout << "stage1 loss " << res.initial_loss << " -> "
                << res.final_loss << " in " << res.wall_seconds << "s\n";
      return 0;
    }

    if (app.got_subcommand("train-action")) {
      auto data = load_dataset(ta_data);
      auto models = models_from_checkpoint(load_checkpoint(ta_init));
      const auto mode = parse_guidance_mode(ta_mode);
      if (mode != models.gcfg.mode) {
        models.gcfg.mode = mode;
        Rng grng(seed + 7);
        models.guidance = GuidanceModule<float>(models.gcfg, grng);
      }
      StageConfig cfg;
      cfg.steps = ta_steps;
      cfg.batch = ta_batch;
      cfg.lr = ta_lr;
      cfg.min_lr = ta_lr * 0.1;
      cfg.weight_decay = 0.0;
      Rng rng(seed + 2);
      auto res = train_stage2(models, data, cfg, rng);
      auto ck = to_checkpoint(models);
      save_checkpoint(ck, ta_out);
      write_loss_trace(res.loss_trace, ta_out + ".trace.txt");
      write_timing_sidecar(ta_out + ".timing.txt", res.wall_seconds);
      std::cout << "stage2 loss " << res.initial_loss << " -> "
                << res.final_loss << " in " << res.wall_seconds << "s\n";
      return 0;
    }

    if (app.got_subcommand("eval")) {
      auto models = models_from_checkpoint(load_checkpoint(ev_ckpt));
      auto report = evaluate(models, guidance_mode_name(models.gcfg.mode),
                             seed + 100, ev_episodes);
      write_text_file(ev_out, report.to_json());
      std::cout << "mean score " << report.mean_score << " over "
                << report.rows.size() << " episodes\n";
      return 0;
    }

    if (app.got_subcommand("ablate"))
      return run_ablate(ab_out, seed, 0, ab_s1, ab_s2, ab_data, ab_eval);

    if (app.got_subcommand("visualize")) {
      auto models = models_from_checkpoint(load_checkpoint(vz_ckpt));
      auto task = toyworld::make_task(static_cast<toyworld::TaskKind>(vz_task),
                                      0);
      Rng rng(seed + 3);
      auto state = toyworld::reset(task, rng);
      auto cam = toyworld::default_camera(models.pcfg.image_w,
                                          models.pcfg.image_h);
      auto obs = toyworld::render(state, cam);
      visualize_motion(models, obs, task.instruction_id, rng, vz_out + ".ppm",
                       vz_out + ".svg");
      std::cout << "wrote " << vz_out << ".ppm and " << vz_out << ".svg\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
