#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lamp/dataset.hpp"
#include "lamp/flowmatch.hpp"
#include "lamp/nn.hpp"

// Flow-matching Action Expert: denoises H-step action chunks conditioned on
// guided context features (via cross-attention), the robot state, and the
// motion solver's first flow-time t1 (both folded into the AdaLN condition).

namespace lamp {

struct ActionExpertConfig {
  int chunk_h = 4;
  int d_a = 4;
  int d_h = 64;
  int layers = 2;
  int heads = 4;
  int d_time = 32;
  int d_z = 64;

  void validate() const {
    if (d_h % heads) throw ShapeError("d_h must be divisible by heads");
    if (chunk_h < 1) throw ShapeError("chunk horizon must be positive");
  }
};

template <typename S>
struct ActionBlock {
  AdaLnBlock<S> self_block;
  LayerNormLayer<S> ln_cross;
  MultiHeadAttention<S> cross;

  ActionBlock() = default;
  ActionBlock(std::int64_t d, std::int64_t heads, Rng& rng,
              const std::string& name)
      : self_block(d, heads, rng, name + ".self"),
        ln_cross(d, name + ".ln_cross"),
        cross(d, heads, rng, name + ".cross") {}

  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& cond,
                    const Tensor<S>& context) const {
    auto h = add(x, cross.forward(ln_cross.forward(x), context));
    return self_block.forward(h, cond);
  }

  void collect(ParamRefs<S>& out) {
    self_block.collect(out);
    ln_cross.collect(out);
    cross.collect(out);
  }
};

template <typename S>
struct ActionExpert {
  ActionExpertConfig cfg;
  Linear<S> in_proj;    // d_a -> d_h
  Parameter<S> pos_emb;  // [H x d_h]
  Linear<S> state_in;   // (4 + d_time) -> d_time, embeds (s_t, emb(t1))
  Linear<S> cond_in;    // 2*d_time -> d_h
  std::vector<ActionBlock<S>> blocks;
  LayerNormLayer<S> ln_f;
  Linear<S> mod_f;      // d_h -> 2*d_h, zero-init
  Linear<S> out_proj;   // d_h -> d_a, zero-init
  mutable std::int64_t velocity_evals = 0;

  ActionExpert() = default;
  ActionExpert(const ActionExpertConfig& c, Rng& rng) : cfg(c) {
    c.validate();
    in_proj = Linear<S>(c.d_a, c.d_h, rng, "action.in_proj");
    pos_emb = {"action.pos_emb",
               Tensor<S>::gaussian({c.chunk_h, c.d_h}, rng, S(0.02), true)};
    state_in = Linear<S>(4 + c.d_time, c.d_time, rng, "action.state_in");
    cond_in = Linear<S>(2 * c.d_time, c.d_h, rng, "action.cond_in");
    for (int i = 0; i < c.layers; ++i)
      blocks.emplace_back(c.d_h, c.heads, rng,
                          "action.block" + std::to_string(i));
    ln_f = LayerNormLayer<S>(c.d_h, "action.ln_f");
    mod_f = Linear<S>(c.d_h, 2 * c.d_h, rng, "action.mod_f", true);
    out_proj = Linear<S>(c.d_h, c.d_a, rng, "action.out_proj", true);
  }

  Tensor<S> condition_vector(double tau, const S state[4], double t1) const {
    auto s =
        Tensor<S>::from_values({1, 4}, {state[0], state[1], state[2], state[3]});
    auto s_feat = gelu(state_in.forward(concat_cols<S>(
        {s, time_embedding<S>(static_cast<S>(t1), cfg.d_time)})));
    auto c = concat_cols<S>(
        {time_embedding<S>(static_cast<S>(tau), cfg.d_time), s_feat});
    return gelu(cond_in.forward(c));
  }

  Tensor<S> velocity(const Tensor<S>& noisy_chunk, FlowTime t,
                     const Tensor<S>& z_guided, const S state[4],
                     FlowTime t1) const {
    if (noisy_chunk.rows() != cfg.chunk_h || noisy_chunk.cols() != cfg.d_a)
      throw ShapeError("action chunk must be [" + std::to_string(cfg.chunk_h) +
                       " x " + std::to_string(cfg.d_a) + "]");
    if (z_guided.cols() != cfg.d_z)
      throw ShapeError("guided context width mismatch");
    ++velocity_evals;
    auto x = add(in_proj.forward(noisy_chunk), pos_emb.tensor);
    auto cond = condition_vector(t.tau, state, t1.tau);
    for (const auto& b : blocks) x = b.forward(x, cond, z_guided);
    auto m = mod_f.forward(cond);
    auto y = modulate(ln_f.forward(x), slice_cols(m, 0, cfg.d_h),
                      slice_cols(m, cfg.d_h, cfg.d_h));
    return out_proj.forward(y);
  }

  // L_action: flow-matching loss with this expert as the velocity field.
  Tensor<S> action_loss(const Tensor<S>& data_chunk,
                        const Tensor<S>& noise_chunk, FlowTime t,
                        const Tensor<S>& z_guided, const S state[4],
                        FlowTime t1) const {
    VelocityField<S> field = [&](const Tensor<S>& x, FlowTime tau) {
      return velocity(x, tau, z_guided, state, t1);
    };
    return flow_matching_loss(field, data_chunk, noise_chunk, t);
  }

  // Integrates the learned field from noise and denormalizes to action
  // units; the gripper channel is thresholded by the caller.
  std::vector<double> sample_chunk(const Tensor<S>& z_guided, const S state[4],
                                   FlowTime t1, const SolverSchedule& schedule,
                                   Rng& rng,
                                   const ActionNormalizer& norm) const {
    auto x0 = Tensor<S>::gaussian({cfg.chunk_h, cfg.d_a}, rng);
    VelocityField<S> field = [&](const Tensor<S>& x, FlowTime tau) {
      return velocity(x, tau, z_guided, state, t1);
    };
    auto x1 = euler_integrate(field, x0, schedule);
    std::vector<double> out(x1.values().begin(), x1.values().end());
    for (int h = 0; h < cfg.chunk_h; ++h)
      for (int c = 0; c < 4 && c < cfg.d_a; ++c)
        out[static_cast<std::size_t>(h) * cfg.d_a + c] =
            out[static_cast<std::size_t>(h) * cfg.d_a + c] * norm.stddev[c] +
            norm.mean[c];
    return out;
  }

  void collect(ParamRefs<S>& out) {
    in_proj.collect(out);
    out.push_back(&pos_emb);
    state_in.collect(out);
    cond_in.collect(out);
    for (auto& b : blocks) b.collect(out);
    ln_f.collect(out);
    mod_f.collect(out);
    out_proj.collect(out);
  }
};

}  // namespace lamp
