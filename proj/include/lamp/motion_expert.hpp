#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lamp/flowmatch.hpp"
#include "lamp/motionrep.hpp"
#include "lamp/nn.hpp"

// Flow-matching Motion Expert: a motion-token transformer that cross-attends
// to the full context token sequence in every block (spatial detail) and is
// additionally conditioned through adaptive LayerNorm on pooled context
// features plus a sinusoidal flow-time embedding. Predicts velocity fields
// over patchified scene flow, supports full ODE generation for
// visualization, and exposes the hidden state of the final block after a
// single solver step.

namespace lamp {

struct MotionExpertConfig {
  int d_m = 64;
  int layers = 4;
  int heads = 4;
  int d_time = 32;
  int d_z = 64;
  GridSpec grid;

  void validate() const {
    grid.validate();
    if (d_m % heads) throw ShapeError("d_m must be divisible by heads");
  }
};

// Cross-attention to context tokens followed by an AdaLN self-attention
// block; the pooled condition modulates the self-attention half.
template <typename S>
struct MotionBlock {
  LayerNormLayer<S> ln_cross;
  MultiHeadAttention<S> cross;
  AdaLnBlock<S> self_block;

  MotionBlock() = default;
  MotionBlock(std::int64_t d, std::int64_t heads, Rng& rng,
              const std::string& name)
      : ln_cross(d, name + ".ln_cross"),
        cross(d, heads, rng, name + ".cross"),
        self_block(d, heads, rng, name + ".self") {}

  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& cond,
                    const Tensor<S>& context) const {
    auto h = add(x, cross.forward(ln_cross.forward(x), context));
    return self_block.forward(h, cond);
  }

  void collect(ParamRefs<S>& out) {
    ln_cross.collect(out);
    cross.collect(out);
    self_block.collect(out);
  }
};

template <typename S>
struct MotionExpert {
  MotionExpertConfig cfg;
  Linear<S> in_proj;        // 12 -> d_m
  Parameter<S> time_pos;    // [T x d_m]
  Parameter<S> space_pos;   // [tokens_per_step x d_m]
  Linear<S> cond_in;        // (d_z + d_time) -> d_m
  Linear<S> ctx_proj;       // d_z -> d_m, context keys/values for the blocks
  Linear<S> ctx_gather;     // d_z -> d_m, aligned per-token context injection
  std::vector<MotionBlock<S>> blocks;
  LayerNormLayer<S> ln_f;
  Linear<S> mod_f;          // d_m -> 2*d_m, zero-init
  Linear<S> out_proj;       // d_m -> 12, zero-init
  mutable std::int64_t velocity_evals = 0;

  MotionExpert() = default;
  MotionExpert(const MotionExpertConfig& c, Rng& rng) : cfg(c) {
    c.validate();
    in_proj = Linear<S>(12, c.d_m, rng, "motion.in_proj");
    time_pos = {"motion.time_pos",
                Tensor<S>::gaussian({c.grid.t_steps, c.d_m}, rng, S(0.02),
                                    true)};
    space_pos = {"motion.space_pos",
                 Tensor<S>::gaussian({c.grid.tokens_per_step(), c.d_m}, rng,
                                     S(0.02), true)};
    cond_in = Linear<S>(c.d_z + c.d_time, c.d_m, rng, "motion.cond_in");
    ctx_proj = Linear<S>(c.d_z, c.d_m, rng, "motion.ctx_proj");
    ctx_gather = Linear<S>(c.d_z, c.d_m, rng, "motion.ctx_gather");
    for (int i = 0; i < c.layers; ++i)
      blocks.emplace_back(c.d_m, c.heads, rng,
                          "motion.block" + std::to_string(i));
    ln_f = LayerNormLayer<S>(c.d_m, "motion.ln_f");
    mod_f = Linear<S>(c.d_m, 2 * c.d_m, rng, "motion.mod_f", true);
    out_proj = Linear<S>(c.d_m, 12, rng, "motion.out_proj", true);
  }

  Tensor<S> condition_vector(const Tensor<S>& context, double tau) const {
    auto c = concat_cols<S>(
        {mean_rows(context), time_embedding<S>(static_cast<S>(tau), cfg.d_time)});
    return gelu(cond_in.forward(c));
  }

  // Velocity over motion tokens [L_m x 12]; optionally taps the final
  // block's hidden tokens (before the output modulation).
  Tensor<S> velocity(const Tensor<S>& noisy_tokens, FlowTime t,
                     const Tensor<S>& context,
                     Tensor<S>* hidden_out = nullptr) const {
    if (context.cols() != cfg.d_z)
      throw ShapeError("condition width " + std::to_string(context.cols()) +
                       " != configured d_z " + std::to_string(cfg.d_z));
    const std::int64_t lm = cfg.grid.motion_tokens();
    if (noisy_tokens.rows() != lm || noisy_tokens.cols() != 12)
      throw ShapeError("motion tokens must be [" + std::to_string(lm) +
                       " x 12]");
    ++velocity_evals;
    std::vector<std::int64_t> tids(lm), sids(lm);
    const int per_step = cfg.grid.tokens_per_step();
    for (std::int64_t i = 0; i < lm; ++i) {
      tids[i] = i / per_step;
      sids[i] = i % per_step;
    }
    auto x = add(add(in_proj.forward(noisy_tokens),
                     embedding_lookup(time_pos.tensor, tids)),
                 embedding_lookup(space_pos.tensor, sids));
    // When the context carries exactly one visual token per spatial motion
    // token (one leading instruction token, then row-major patches covering
    // the same 2x2 keypoint groups), hand every motion token its own patch
    // feature directly. Cross-attention then refines the spatial
    // correspondence instead of having to discover it from scratch, which
    // dominates training time on the desk config.
    if (context.rows() == 1 + per_step) {
      std::vector<std::int64_t> crows(lm);
      for (std::int64_t i = 0; i < lm; ++i) crows[i] = 1 + sids[i];
      x = add(x, embedding_lookup(ctx_gather.forward(context), crows));
    }
    auto c = condition_vector(context, t.tau);
    auto kv = ctx_proj.forward(context);
    for (const auto& b : blocks) x = b.forward(x, c, kv);
    if (hidden_out) *hidden_out = x;
    auto m = mod_f.forward(c);
    auto y = modulate(ln_f.forward(x), slice_cols(m, 0, cfg.d_m),
                      slice_cols(m, cfg.d_m, cfg.d_m));
    // The network predicts the remaining displacement data - x^tau, which is
    // bounded and has the same target at every flow time; dividing by
    // (1 - tau) turns it into the flow-matching velocity. Predicting the
    // velocity directly forces 1/(1-tau)-amplified outputs near tau = 1,
    // which destabilizes both training and multi-step integration.
    const S s = S(1.0 / std::max(1.0 - t.tau, 1e-6));
    return scale(out_proj.forward(y), s);
  }

  VelocityField<S> as_field(const Tensor<S>& context) const {
    return [this, context](const Tensor<S>& x, FlowTime t) {
      return velocity(x, t, context);
    };
  }

  // Full ODE rollout from noise; returns a denormalized scene-flow field.
  SceneFlowField generate_flow(const Tensor<S>& context,
                               const SolverSchedule& schedule, Rng& rng,
                               const MotionNormalizer& norm) const {
    auto x0 = Tensor<S>::gaussian({cfg.grid.motion_tokens(), 12}, rng);
    auto x1 = euler_integrate(as_field(context), x0, schedule);
    std::vector<double> tokens(x1.values().begin(), x1.values().end());
    return denormalize(unpatchify(cfg.grid, tokens), norm);
  }

  // One Euler step from pure noise; returns the final block's hidden tokens
  // [L_m x d_m]. Tape-free when the expert is frozen.
  Tensor<S> one_step_hidden(const Tensor<S>& context,
                            const SolverSchedule& schedule, Rng& rng) const {
    auto x0 = Tensor<S>::gaussian({cfg.grid.motion_tokens(), 12}, rng);
    Tensor<S> hidden;
    (void)velocity(x0, FlowTime(schedule.tau(1)), context, &hidden);
    return hidden;
  }

  void collect(ParamRefs<S>& out) {
    in_proj.collect(out);
    out.push_back(&time_pos);
    out.push_back(&space_pos);
    cond_in.collect(out);
    ctx_proj.collect(out);
    ctx_gather.collect(out);
    for (auto& b : blocks) b.collect(out);
    ln_f.collect(out);
    mod_f.collect(out);
    out_proj.collect(out);
  }

  void freeze() {
    ParamRefs<S> ps;
    collect(ps);
    set_frozen(ps, true);
  }
};

}  // namespace lamp
