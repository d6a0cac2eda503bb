#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "lamp/nn.hpp"

// Fusion of one-step motion hidden states into context features. The method
// is residual gated cross-attention with a single learnable scalar gate;
// the add and concat_mlp variants and the no-motion pass-through exist for
// ablations.

namespace lamp {

enum class GuidanceMode { gated, add, concat_mlp, none };

inline const char* guidance_mode_name(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::gated: return "gated";
    case GuidanceMode::add: return "add";
    case GuidanceMode::concat_mlp: return "concat_mlp";
    default: return "none";
  }
}

inline GuidanceMode parse_guidance_mode(const std::string& s) {
  if (s == "gated") return GuidanceMode::gated;
  if (s == "add") return GuidanceMode::add;
  if (s == "concat_mlp") return GuidanceMode::concat_mlp;
  if (s == "none") return GuidanceMode::none;
  throw std::invalid_argument("unknown guidance mode: " + s);
}

struct GuidanceConfig {
  GuidanceMode mode = GuidanceMode::gated;
  int heads = 4;
  double gate_init = 0.0;  // sigma(0) = 0.5; -4 gives near-closed start
  int d_z = 64;
  int d_m = 64;
};

template <typename S>
struct GuidanceModule {
  GuidanceConfig cfg;
  // gated
  Linear<S> w_proj;           // d_m -> d_z
  LayerNormLayer<S> ln_motion;
  LayerNormLayer<S> ln_q;
  Linear<S> wq, wk, wv, wo;
  Parameter<S> gate;          // single scalar, shared across heads/positions
  // add
  Linear<S> add_proj;         // d_m -> d_z
  // concat_mlp
  Linear<S> mlp1, mlp2;       // (d_z + d_m) -> d_z -> d_z

  GuidanceModule() = default;
  GuidanceModule(const GuidanceConfig& c, Rng& rng) : cfg(c) {
    if (c.d_z % c.heads) throw ShapeError("heads must divide d_z");
    switch (c.mode) {
      case GuidanceMode::gated:
        w_proj = Linear<S>(c.d_m, c.d_z, rng, "guidance.w_proj");
        ln_motion = LayerNormLayer<S>(c.d_z, "guidance.ln_motion");
        ln_q = LayerNormLayer<S>(c.d_z, "guidance.ln_q");
        wq = Linear<S>(c.d_z, c.d_z, rng, "guidance.wq");
        wk = Linear<S>(c.d_z, c.d_z, rng, "guidance.wk");
        wv = Linear<S>(c.d_z, c.d_z, rng, "guidance.wv");
        wo = Linear<S>(c.d_z, c.d_z, rng, "guidance.wo");
        gate = {"guidance.gate",
                Tensor<S>::scalar(static_cast<S>(c.gate_init), true)};
        break;
      case GuidanceMode::add:
        add_proj = Linear<S>(c.d_m, c.d_z, rng, "guidance.add_proj");
        break;
      case GuidanceMode::concat_mlp:
        mlp1 = Linear<S>(c.d_z + c.d_m, c.d_z, rng, "guidance.mlp1");
        mlp2 = Linear<S>(c.d_z, c.d_z, rng, "guidance.mlp2");
        break;
      case GuidanceMode::none:
        break;
    }
  }

  // z_guided = z + sigma(g) * CA(Q=LN(z), K=V=LN(W_proj z_m)).
  Tensor<S> guide(const Tensor<S>& z, const Tensor<S>& z_m) const {
    check_widths(z, z_m);
    auto h = ln_motion.forward(w_proj.forward(z_m));
    auto ca = multi_head_attention(wq.forward(ln_q.forward(z)),
                                   wk.forward(h), wv.forward(h), cfg.heads,
                                   wo);
    return add(z, scale_by(ca, sigmoid(gate.tensor)));
  }

  // z + project(pool(z_m)), no gate.
  Tensor<S> guide_add(const Tensor<S>& z, const Tensor<S>& z_m) const {
    check_widths(z, z_m);
    auto summary = add_proj.forward(mean_rows(z_m));
    return add(z, repeat_rows(summary, z.rows()));
  }

  // Per-token concat with the pooled motion summary, two-layer MLP back to
  // d_z. No residual: zero MLP weights give a zero output.
  Tensor<S> guide_concat_mlp(const Tensor<S>& z, const Tensor<S>& z_m) const {
    check_widths(z, z_m);
    auto pooled = repeat_rows(mean_rows(z_m), z.rows());
    return mlp2.forward(gelu(mlp1.forward(concat_cols<S>({z, pooled}))));
  }

  static Tensor<S> guide_none(const Tensor<S>& z) { return z; }

  // Dispatch on the configured mode; z_m is ignored in mode none.
  Tensor<S> forward(const Tensor<S>& z, const Tensor<S>& z_m) const {
    switch (cfg.mode) {
      case GuidanceMode::gated: return guide(z, z_m);
      case GuidanceMode::add: return guide_add(z, z_m);
      case GuidanceMode::concat_mlp: return guide_concat_mlp(z, z_m);
      default: return guide_none(z);
    }
  }

  void collect(ParamRefs<S>& out) {
    switch (cfg.mode) {
      case GuidanceMode::gated:
        w_proj.collect(out);
        ln_motion.collect(out);
        ln_q.collect(out);
        wq.collect(out);
        wk.collect(out);
        wv.collect(out);
        wo.collect(out);
        out.push_back(&gate);
        break;
      case GuidanceMode::add:
        add_proj.collect(out);
        break;
      case GuidanceMode::concat_mlp:
        mlp1.collect(out);
        mlp2.collect(out);
        break;
      case GuidanceMode::none:
        break;
    }
  }

 private:
  void check_widths(const Tensor<S>& z, const Tensor<S>& z_m) const {
    if (z.cols() != cfg.d_z)
      throw ShapeError("context width " + std::to_string(z.cols()) +
                       " != configured d_z");
    if (z_m.cols() != cfg.d_m)
      throw ShapeError("motion hidden width " + std::to_string(z_m.cols()) +
                       " != configured d_m");
  }
};

}  // namespace lamp
