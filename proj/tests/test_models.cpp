#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lamp/action_expert.hpp"
#include "lamp/guidance.hpp"
#include "lamp/motion_expert.hpp"
#include "lamp/percept.hpp"

using namespace lamp;
using T = Tensor<double>;

namespace {

PerceptConfig small_pcfg() {
  PerceptConfig c;
  c.image_w = 16;
  c.image_h = 16;
  c.patch = 8;
  c.d_z = 16;
  c.layers = 1;
  c.heads = 2;
  return c;
}

MotionExpertConfig small_mcfg() {
  MotionExpertConfig c;
  c.d_m = 16;
  c.layers = 1;
  c.heads = 2;
  c.d_time = 8;
  c.d_z = 16;
  c.grid = GridSpec{2, 2, 2, 16, 16};
  return c;
}

ActionExpertConfig small_acfg() {
  ActionExpertConfig c;
  c.chunk_h = 4;
  c.d_h = 16;
  c.layers = 1;
  c.heads = 2;
  c.d_time = 8;
  c.d_z = 16;
  return c;
}

// Zero-initialized heads make initial outputs exactly zero; fill them with
// noise when a test needs gradients to flow end to end.
void randomize(ParamRefs<double>& ps, Rng& rng) {
  for (auto* p : ps)
    for (auto& v : p->tensor.values()) v = rng.gaussian() * 0.05;
}

toyworld::Observation fake_obs(int w, int h, Rng& rng) {
  toyworld::Observation o;
  o.width = w;
  o.height = h;
  o.rgb.resize(3u * w * h);
  o.depth.resize(static_cast<std::size_t>(w) * h);
  for (auto& v : o.rgb) v = static_cast<float>(rng.uniform());
  for (auto& v : o.depth) v = static_cast<float>(rng.uniform(0.5, 2.0));
  return o;
}

}  // namespace

TEST_CASE("perception encoder contracts") {
  auto cfg = small_pcfg();
  Rng rng(1);
  PerceptionEncoder<double> enc(cfg, rng);
  Rng org(2);
  auto obs = fake_obs(16, 16, org);

  auto z = enc.encode(obs.rgb, obs.depth, 3);
  CHECK(z.rows() == cfg.context_tokens());
  CHECK(z.cols() == cfg.d_z);

  SUBCASE("deterministic") {
    auto z2 = enc.encode(obs.rgb, obs.depth, 3);
    CHECK(z.values() == z2.values());
  }

  SUBCASE("instruction id changes the output") {
    auto z2 = enc.encode(obs.rgb, obs.depth, 4);
    CHECK(z.values() != z2.values());
  }

  SUBCASE("bad inputs are shape errors") {
    CHECK_THROWS_AS(enc.encode(obs.rgb, std::vector<float>(5), 0), ShapeError);
    CHECK_THROWS_AS(enc.encode(obs.rgb, obs.depth, 99), ShapeError);
    CHECK_THROWS_AS(enc.encode(obs.rgb, obs.depth, -1), ShapeError);
  }

  SUBCASE("freeze makes the forward tape-free") {
    CHECK(z.requires_grad());
    enc.freeze();
    auto z2 = enc.encode(obs.rgb, obs.depth, 3);
    CHECK(!z2.requires_grad());
    CHECK(z.values() == z2.values());  // freezing must not change values
  }

  SUBCASE("gradient check through the full encoder") {
    ParamRefs<double> ps;
    enc.collect(ps);
    auto& w = enc.patch_embed.weight.tensor;
    auto f = [&](const T&) {
      auto out = enc.encode(obs.rgb, obs.depth, 3);
      return mean_all(mul(out, out));
    };
    CHECK(grad_check<double>(f, w, 1e-6) <= 1e-5);
  }
}

TEST_CASE("motion expert contracts") {
  auto mcfg = small_mcfg();
  Rng rng(3);
  MotionExpert<double> moe(mcfg, rng);
  const std::int64_t lm = mcfg.grid.motion_tokens();
  Rng drng(4);
  auto context = T::gaussian({3, mcfg.d_z}, drng);
  auto tokens = T::gaussian({lm, 12}, drng);

  SUBCASE("zero-initialized output head gives exactly zero velocity") {
    auto v = moe.velocity(tokens, FlowTime(0.3), context);
    for (auto x : v.values()) CHECK(x == 0.0);
    CHECK(v.rows() == lm);
    CHECK(v.cols() == 12);
  }

  SUBCASE("shape violations") {
    CHECK_THROWS_AS(moe.velocity(T::zeros({lm, 11}), FlowTime(0.1), context),
                    ShapeError);
    CHECK_THROWS_AS(
        moe.velocity(tokens, FlowTime(0.1), T::zeros({3, mcfg.d_z + 1})),
        ShapeError);
  }

  SUBCASE("velocity evaluation counter") {
    moe.velocity_evals = 0;
    (void)moe.velocity(tokens, FlowTime(0.2), context);
    CHECK(moe.velocity_evals == 1);
    Rng r(5);
    (void)moe.one_step_hidden(context, SolverSchedule(10), r);
    CHECK(moe.velocity_evals == 2);
  }

  SUBCASE("one-step hidden shape and tap point") {
    Rng r(6);
    auto h = moe.one_step_hidden(context, SolverSchedule(10), r);
    CHECK(h.rows() == lm);
    CHECK(h.cols() == mcfg.d_m);
    // Same rng seed, same context: deterministic.
    Rng r2(6);
    auto h2 = moe.one_step_hidden(context, SolverSchedule(10), r2);
    CHECK(h.values() == h2.values());
  }

  SUBCASE("flow time sensitivity once heads are non-zero") {
    ParamRefs<double> ps;
    moe.collect(ps);
    Rng nz(7);
    randomize(ps, nz);
    auto v1 = moe.velocity(tokens, FlowTime(0.1), context);
    auto v2 = moe.velocity(tokens, FlowTime(0.9), context);
    CHECK(v1.values() != v2.values());
  }

  SUBCASE("gradient check through the full expert") {
    ParamRefs<double> ps;
    moe.collect(ps);
    Rng nz(8);
    randomize(ps, nz);
    auto f = [&](const T& x) {
      auto v = moe.velocity(x, FlowTime(0.4), context);
      return mean_all(mul(v, v));
    };
    CHECK(grad_check<double>(f, tokens, 1e-6) <= 1e-5);
    auto g = [&](const T&) {
      auto v = moe.velocity(tokens, FlowTime(0.4), context);
      return mean_all(mul(v, v));
    };
    CHECK(grad_check<double>(g, moe.cond_in.weight.tensor, 1e-6) <= 1e-5);
  }

  SUBCASE("frozen expert produces tape-free hidden states") {
    moe.freeze();
    Rng r(9);
    auto h = moe.one_step_hidden(context, SolverSchedule(10), r);
    CHECK(!h.requires_grad());
  }
}

TEST_CASE("guidance module") {
  GuidanceConfig cfg;
  cfg.d_z = 16;
  cfg.d_m = 16;
  cfg.heads = 2;
  Rng rng(11);
  Rng drng(12);
  auto z = T::gaussian({5, cfg.d_z}, drng);
  auto z_m = T::gaussian({4, cfg.d_m}, drng);

  SUBCASE("gate at -30 is a pass-through within 1e-8") {
    GuidanceConfig c = cfg;
    c.gate_init = -30.0;
    GuidanceModule<double> g(c, rng);
    auto out = g.forward(z, z_m);
    for (std::int64_t i = 0; i < z.size(); ++i)
      CHECK(std::abs(out.values()[i] - z.values()[i]) <= 1e-8);
  }

  SUBCASE("gate at 0 contributes exactly half the cross-attention read") {
    GuidanceModule<double> g(cfg, rng);
    CHECK(g.gate.tensor.item() == 0.0);
    auto out = g.forward(z, z_m);
    // Recompute the ungated cross-attention read.
    auto h = g.ln_motion.forward(g.w_proj.forward(z_m));
    auto ca = multi_head_attention(g.wq.forward(g.ln_q.forward(z)),
                                   g.wk.forward(h), g.wv.forward(h), cfg.heads,
                                   g.wo);
    for (std::int64_t i = 0; i < z.size(); ++i)
      CHECK(out.values()[i] ==
            doctest::Approx(z.values()[i] + 0.5 * ca.values()[i])
                .epsilon(1e-12));
  }

  SUBCASE("gradient reaches the gate scalar") {
    GuidanceModule<double> g(cfg, rng);
    auto f = [&](const T&) {
      auto out = g.forward(z, z_m);
      return mean_all(mul(out, out));
    };
    CHECK(grad_check<double>(f, g.gate.tensor, 1e-6) <= 1e-5);
  }

  SUBCASE("full gradient check through gated guidance") {
    GuidanceModule<double> g(cfg, rng);
    auto f = [&](const T& x) {
      auto out = g.forward(x, z_m);
      return mean_all(mul(out, out));
    };
    CHECK(grad_check<double>(f, z, 1e-6) <= 1e-5);
    auto f2 = [&](const T& x) {
      auto out = g.forward(z, x);
      return mean_all(mul(out, out));
    };
    CHECK(grad_check<double>(f2, z_m, 1e-6) <= 1e-5);
  }

  SUBCASE("variants produce distinct outputs") {
    GuidanceModule<double> gated(cfg, rng);
    GuidanceConfig ca = cfg;
    ca.mode = GuidanceMode::add;
    GuidanceModule<double> addm(ca, rng);
    GuidanceConfig cc = cfg;
    cc.mode = GuidanceMode::concat_mlp;
    GuidanceModule<double> catm(cc, rng);
    auto o1 = gated.forward(z, z_m);
    auto o2 = addm.forward(z, z_m);
    auto o3 = catm.forward(z, z_m);
    CHECK(o1.values() != o2.values());
    CHECK(o2.values() != o3.values());
    CHECK(o1.shape() == z.shape());
    CHECK(o2.shape() == z.shape());
    CHECK(o3.shape() == z.shape());
  }

  SUBCASE("mode none is the identity with zero parameters") {
    GuidanceConfig cn = cfg;
    cn.mode = GuidanceMode::none;
    GuidanceModule<double> g(cn, rng);
    auto out = g.forward(z, z_m);
    CHECK(out.values() == z.values());
    ParamRefs<double> ps;
    g.collect(ps);
    CHECK(ps.empty());
  }

  SUBCASE("mode parsing round trips") {
    for (auto m : {GuidanceMode::gated, GuidanceMode::add,
                   GuidanceMode::concat_mlp, GuidanceMode::none})
      CHECK(parse_guidance_mode(guidance_mode_name(m)) == m);
    CHECK_THROWS_AS(parse_guidance_mode("bogus"), std::invalid_argument);
  }
}

TEST_CASE("action expert contracts") {
  auto acfg = small_acfg();
  Rng rng(13);
  ActionExpert<double> ae(acfg, rng);
  Rng drng(14);
  auto z_guided = T::gaussian({5, acfg.d_z}, drng);
  auto chunk = T::gaussian({acfg.chunk_h, acfg.d_a}, drng);
  const double state[4] = {0.4, 0.5, 0.1, 1.0};
  const FlowTime t1(0.1);

  SUBCASE("zero-initialized head gives exactly zero velocity") {
    auto v = ae.velocity(chunk, FlowTime(0.5), z_guided, state, t1);
    for (auto x : v.values()) CHECK(x == 0.0);
  }

  SUBCASE("zero-velocity init pins the loss to the target magnitude") {
    Rng nrng(15);
    auto noise = T::gaussian(chunk.shape(), nrng);
    auto loss =
        ae.action_loss(chunk, noise, FlowTime(0.3), z_guided, state, t1);
    auto target = velocity_target(noise, chunk);
    CHECK(loss.item() ==
          doctest::Approx(mean_all(mul(target, target)).item())
              .epsilon(1e-12));
  }

  SUBCASE("evaluation counter and sampling call count") {
    ae.velocity_evals = 0;
    Rng srng(16);
    ActionNormalizer norm;
    auto out = ae.sample_chunk(z_guided, state, t1, SolverSchedule(4), srng,
                               norm);
    CHECK(ae.velocity_evals == 4);
    CHECK(out.size() == static_cast<std::size_t>(acfg.chunk_h) * acfg.d_a);
  }

  SUBCASE("sample_chunk denormalizes with the provided statistics") {
    // Zero velocity field: the integrated sample equals the initial noise,
    // so the output is noise * stddev + mean.
    ActionNormalizer norm;
    norm.fitted = true;
    for (int c = 0; c < 4; ++c) {
      norm.mean[c] = 0.5 * c;
      norm.stddev[c] = 1.0 + c;
    }
    Rng s1(17), s2(17);
    auto raw = Tensor<double>::gaussian({acfg.chunk_h, acfg.d_a}, s1);
    auto out = ae.sample_chunk(z_guided, state, t1, SolverSchedule(4), s2,
                               norm);
    for (int h = 0; h < acfg.chunk_h; ++h)
      for (int c = 0; c < 4; ++c)
        CHECK(out[h * 4 + c] ==
              doctest::Approx(raw.values()[h * 4 + c] * norm.stddev[c] +
                              norm.mean[c])
                  .epsilon(1e-12));
  }

  SUBCASE("gradient check through the full expert") {
    ParamRefs<double> ps;
    ae.collect(ps);
    Rng nz(18);
    randomize(ps, nz);
    auto f = [&](const T& x) {
      auto v = ae.velocity(x, FlowTime(0.6), z_guided, state, t1);
      return mean_all(mul(v, v));
    };
    CHECK(grad_check<double>(f, chunk, 1e-6) <= 1e-5);
    auto g = [&](const T& x) {
      auto v = ae.velocity(chunk, FlowTime(0.6), x, state, t1);
      return mean_all(mul(v, v));
    };
    CHECK(grad_check<double>(g, z_guided, 1e-6) <= 1e-5);
  }

  SUBCASE("conditioning on state and t1 changes the output") {
    ParamRefs<double> ps;
    ae.collect(ps);
    Rng nz(19);
    randomize(ps, nz);
    const double other_state[4] = {0.1, 0.9, 0.2, 0.0};
    auto v1 = ae.velocity(chunk, FlowTime(0.5), z_guided, state, t1);
    auto v2 = ae.velocity(chunk, FlowTime(0.5), z_guided, other_state, t1);
    auto v3 = ae.velocity(chunk, FlowTime(0.5), z_guided, state, FlowTime(0.5));
    CHECK(v1.values() != v2.values());
    CHECK(v1.values() != v3.values());
  }
}
