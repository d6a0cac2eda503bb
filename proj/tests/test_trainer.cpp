#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "lamp/trainer.hpp"

using namespace lamp;

namespace {

PerceptConfig tiny_pcfg() {
  PerceptConfig p;
  p.d_z = 32;
  p.layers = 1;
  p.heads = 2;
  return p;
}

ModelBundle tiny_models(GuidanceMode mode, std::uint64_t seed) {
  PerceptConfig p = tiny_pcfg();
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
  return make_models(p, m, g, a, seed);
}

Dataset tiny_dataset(std::uint64_t seed = 41, int episodes = 2) {
  DatagenConfig cfg;
  cfg.grid = GridSpec{8, 8, 8, 32, 32};
  cfg.episodes = episodes;
  Rng rng(seed);
  return generate_dataset(cfg, rng);
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cosine schedule with a floor") {
  const double base = 2e-4, min = 2e-5;
  const int total = 100;
  CHECK(cosine_with_min_lr(base, min, 0, total) == base);
  CHECK(cosine_with_min_lr(base, min, total - 1, total) ==
        doctest::Approx(min).epsilon(1e-12));
  double prev = base + 1;
  for (int s = 0; s < total; ++s) {
    const double lr = cosine_with_min_lr(base, min, s, total);
    CHECK(lr <= prev);
    CHECK(lr >= min - 1e-15);
    prev = lr;
  }
}

TEST_CASE("config round trips") {
  Config c;
  c.set_int("alpha", -42);
  c.set_double("ratio", 0.1234567890123456789);
  c.set("name", "gated");
  auto text = c.serialize();
  auto back = Config::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.get_int("alpha", 0) == -42);
  CHECK(back.get_double("ratio", 0) == c.get_double("ratio", 1));
  CHECK(back.require_str("name") == "gated");
  CHECK_THROWS_AS(back.require_str("missing"), ConfigError);
  CHECK_THROWS_AS(Config::parse("not a key value line\n"), ConfigError);
}

TEST_CASE("checkpoint save/load/save is byte-identical") {
  auto models = tiny_models(GuidanceMode::gated, 7);
  models.motion_norm.fitted = true;
  models.action_norm.fitted = true;
  models.motion_norm.mean[1] = 0.125;
  auto ck = to_checkpoint(models);
  save_checkpoint(ck, "ck1.lampck");
  auto loaded = load_checkpoint("ck1.lampck");
  save_checkpoint(loaded, "ck2.lampck");
  CHECK(slurp("ck1.lampck") == slurp("ck2.lampck"));

  auto models2 = models_from_checkpoint(loaded);
  auto p1 = models.all_params();
  auto p2 = models2.all_params();
  CHECK(params_hash(p1) == params_hash(p2));
  CHECK(models2.motion_norm.mean[1] == 0.125);
  CHECK(models2.gcfg.mode == GuidanceMode::gated);

  SUBCASE("payload corruption is detected") {
    auto bytes = slurp("ck1.lampck");
    bytes[bytes.size() / 3] ^= 0x10;
    std::ofstream out("ck_bad.lampck", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_checkpoint("ck_bad.lampck"), CheckpointError);
    std::remove("ck_bad.lampck");
  }

  SUBCASE("bad magic is rejected") {
    auto bytes = slurp("ck1.lampck");
    bytes[0] = 'X';
    std::ofstream out("ck_magic.lampck", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_checkpoint("ck_magic.lampck"), CheckpointError);
    std::remove("ck_magic.lampck");
  }

  SUBCASE("size-mismatched blob is rejected on load_params") {
    Checkpoint broken = loaded;
    for (auto& [name, blob] : broken.blobs)
      if (name == "motion.in_proj.weight") blob.resize(blob.size() - 1);
    auto ps = models2.all_params();
    CHECK_THROWS_AS(broken.load_params(ps), CheckpointError);
  }

  std::remove("ck1.lampck");
  std::remove("ck2.lampck");
}

TEST_CASE("grid mismatch between checkpoint and dataset is an error") {
  auto models = tiny_models(GuidanceMode::gated, 7);
  auto data = tiny_dataset();
  // Pretend the model was built for a different grid.
  models.mcfg.grid.t_steps = 4;
  StageConfig cfg;
  cfg.steps = 1;
  Rng rng(1);
  CHECK_THROWS_AS(train_stage1(models, data, cfg, rng), ShapeError);
}

TEST_CASE("record helpers") {
  auto models = tiny_models(GuidanceMode::gated, 7);
  auto data = tiny_dataset();
  models.motion_norm = data.motion_norm;
  models.action_norm = data.action_norm;
  const auto& rec = data.records[0];

  auto tokens = record_flow_tokens(rec, models);
  CHECK(tokens.rows() == models.mcfg.grid.motion_tokens());
  CHECK(tokens.cols() == 12);

  auto mask = record_flow_mask(rec, models.mcfg.grid);
  CHECK(mask.size() == static_cast<std::size_t>(tokens.size()));

  auto chunk = record_action_chunk(rec, models);
  CHECK(chunk.rows() == models.acfg.chunk_h);
  CHECK(chunk.cols() == 4);

  SUBCASE("depth-masked variant zeroes every depth feature") {
    models.depth_masked = true;
    auto masked = record_flow_tokens(rec, models);
    // Token features: 2x2 keypoints x 3 channels; depth is every third.
    for (std::int64_t i = 0; i < masked.size(); ++i)
      if (i % 3 == 2) CHECK(masked.values()[i] == 0.0f);
  }
}

TEST_CASE("stage 1 training") {
  auto data = tiny_dataset();

  SUBCASE("zero steps changes nothing") {
    auto models = tiny_models(GuidanceMode::gated, 7);
    auto ps = models.stage1_params();
    const auto before = params_hash(ps);
    StageConfig cfg;
    cfg.steps = 0;
    Rng rng(2);
    auto res = train_stage1(models, data, cfg, rng);
    CHECK(params_hash(ps) == before);
    CHECK(res.loss_trace.empty());
  }

  SUBCASE("identical runs are bit-identical") {
    StageConfig cfg;
    cfg.steps = 4;
    cfg.batch = 2;
    auto m1 = tiny_models(GuidanceMode::gated, 7);
    auto m2 = tiny_models(GuidanceMode::gated, 7);
    Rng r1(3), r2(3);
    auto res1 = train_stage1(m1, data, cfg, r1);
    auto res2 = train_stage1(m2, data, cfg, r2);
    CHECK(res1.loss_trace == res2.loss_trace);
    auto p1 = m1.stage1_params();
    auto p2 = m2.stage1_params();
    CHECK(params_hash(p1) == params_hash(p2));
  }

  SUBCASE("loss decreases over a short run") {
    StageConfig cfg;
    cfg.steps = 150;
    cfg.batch = 2;
    auto models = tiny_models(GuidanceMode::gated, 7);
    Rng rng(4);
    auto res = train_stage1(models, data, cfg, rng);
    CHECK(res.final_loss < res.initial_loss);
    CHECK(models.motion_norm.fitted);
  }

  SUBCASE("empty dataset is an error") {
    Dataset empty;
    empty.grid = data.grid;
    auto models = tiny_models(GuidanceMode::gated, 7);
    StageConfig cfg;
    Rng rng(5);
    CHECK_THROWS_AS(train_stage1(models, empty, cfg, rng), TrainingError);
  }
}

TEST_CASE("stage 2 training") {
  auto data = tiny_dataset();
  StageConfig s1;
  s1.steps = 3;
  s1.batch = 2;

  SUBCASE("frozen backbone stays bit-identical across modes") {
    for (auto mode : {GuidanceMode::gated, GuidanceMode::add,
                      GuidanceMode::concat_mlp, GuidanceMode::none}) {
      CAPTURE(guidance_mode_name(mode));
      auto models = tiny_models(mode, 7);
      Rng r1(6);
      train_stage1(models, data, s1, r1);
      auto frozen = models.stage1_params();
      const auto before = params_hash(frozen);
      const auto motion_evals_before = models.motion.velocity_evals;
      StageConfig s2;
      s2.steps = 4;
      s2.batch = 2;
      s2.weight_decay = 0.0;
      s2.freeze_check_every = 2;
      Rng r2(8);
      auto res = train_stage2(models, data, s2, r2);
      CHECK(params_hash(frozen) == before);
      CHECK(res.loss_trace.size() == 4);
      if (mode == GuidanceMode::none)
        CHECK(models.motion.velocity_evals == motion_evals_before);
      else
        CHECK(models.motion.velocity_evals ==
              motion_evals_before + 4 * 2);  // one per sample
    }
  }

  SUBCASE("stage 2 without stage 1 statistics is an error") {
    auto models = tiny_models(GuidanceMode::gated, 7);
    StageConfig s2;
    Rng rng(9);
    CHECK_THROWS_AS(train_stage2(models, data, s2, rng), TrainingError);
  }

  SUBCASE("any frozen-parameter drift changes the hash") {
    auto models = tiny_models(GuidanceMode::gated, 7);
    auto frozen = models.stage1_params();
    set_frozen(frozen, true);
    const auto h0 = params_hash(frozen);
    frozen.back()->tensor.values()[0] += 1.0f;
    CHECK(params_hash(frozen) != h0);
  }

  SUBCASE("identical runs are bit-identical") {
    auto m1 = tiny_models(GuidanceMode::gated, 7);
    auto m2 = tiny_models(GuidanceMode::gated, 7);
    Rng a1(6), a2(6);
    train_stage1(m1, data, s1, a1);
    train_stage1(m2, data, s1, a2);
    StageConfig s2;
    s2.steps = 3;
    s2.batch = 2;
    Rng b1(11), b2(11);
    auto r1 = train_stage2(m1, data, s2, b1);
    auto r2 = train_stage2(m2, data, s2, b2);
    CHECK(r1.loss_trace == r2.loss_trace);
    auto p1 = m1.all_params();
    auto p2 = m2.all_params();
    CHECK(params_hash(p1) == params_hash(p2));
  }
}

TEST_CASE("loss trace files are deterministic") {
  std::vector<double> trace{1.5, 0.25, 0.12345678901234};
  write_loss_trace(trace, "trace1.txt");
  write_loss_trace(trace, "trace2.txt");
  CHECK(slurp("trace1.txt") == slurp("trace2.txt"));
  std::remove("trace1.txt");
  std::remove("trace2.txt");
}
