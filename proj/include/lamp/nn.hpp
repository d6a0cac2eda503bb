#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "lamp/tensor.hpp"

namespace lamp {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> tensor;
  bool frozen = false;
};

// Flat list of parameter pointers collected from a model tree.
template <typename S>
using ParamRefs = std::vector<Parameter<S>*>;

template <typename S>
std::uint64_t params_hash(const ParamRefs<S>& params) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto* p : params) {
    mix(p->name.data(), p->name.size());
    mix(p->tensor.values().data(), p->tensor.values().size() * sizeof(S));
  }
  return h;
}

template <typename S>
void set_frozen(ParamRefs<S>& params, bool frozen) {
  for (auto* p : params) {
    p->frozen = frozen;
    p->tensor.set_requires_grad(!frozen);
    if (frozen) p->tensor.grad().clear();
  }
}

template <typename S>
void zero_grads(ParamRefs<S>& params) {
  for (auto* p : params)
    if (!p->frozen) p->tensor.zero_grad();
}

// Scales gradients so their global L2 norm is at most max_norm.
template <typename S>
void clip_grad_norm(ParamRefs<S>& params, S max_norm) {
  S sq = S(0);
  for (auto* p : params) {
    if (p->frozen) continue;
    for (auto g : p->tensor.grad()) sq += g * g;
  }
  const S norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const S k = max_norm / norm;
  for (auto* p : params) {
    if (p->frozen) continue;
    for (auto& g : p->tensor.grad()) g *= k;
  }
}

// Decoupled weight-decay Adam with bias correction.
template <typename S>
class AdamW {
 public:
  AdamW(S lr, S beta1 = S(0.9), S beta2 = S(0.95), S eps = S(1e-8),
        S weight_decay = S(0))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

  void set_lr(S lr) { lr_ = lr; }
  S lr() const { return lr_; }
  std::int64_t step_count() const { return step_; }

  void step(ParamRefs<S>& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i]->tensor.values().size(), S(0));
        v_[i].assign(params[i]->tensor.values().size(), S(0));
      }
    }
    ++step_;
    const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(step_));
    const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<S>& p = *params[i];
      if (p.frozen) continue;
      if (p.tensor.grad().size() != p.tensor.values().size())
        throw TrainingError("missing gradient on parameter " + p.name);
      auto& w = p.tensor.values();
      const auto& g = p.tensor.grad();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (S(1) - beta1_) * g[j];
        v_[i][j] = beta2_ * v_[i][j] + (S(1) - beta2_) * g[j] * g[j];
        const S mhat = m_[i][j] / bc1;
        const S vhat = v_[i][j] / bc2;
        w[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[j]);
      }
    }
  }

 private:
  S lr_, beta1_, beta2_, eps_, wd_;
  std::int64_t step_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

// ---- layers ----

template <typename S>
struct Linear {
  Parameter<S> weight;  // [in x out]
  Parameter<S> bias;    // [out]

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng, const std::string& name,
         bool zero_init = false) {
    const S std = zero_init ? S(0) : S(1) / std::sqrt(static_cast<S>(in));
    weight = {name + ".weight",
              Tensor<S>::gaussian({in, out}, rng, std, true)};
    bias = {name + ".bias", Tensor<S>::zeros({out}, true)};
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return add_row_vector(matmul(x, weight.tensor), bias.tensor);
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <typename S>
struct LayerNormLayer {
  Parameter<S> scale;
  Parameter<S> shift;
  S eps = S(1e-5);

  LayerNormLayer() = default;
  LayerNormLayer(std::int64_t d, const std::string& name) {
    scale = {name + ".scale", Tensor<S>::zeros({d}, true)};
    for (auto& v : scale.tensor.values()) v = S(1);
    shift = {name + ".shift", Tensor<S>::zeros({d}, true)};
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return layer_norm(x, scale.tensor, shift.tensor, eps);
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&scale);
    out.push_back(&shift);
  }
};

// Per-head scaled dot-product attention with head concatenation; projections
// live in the calling module. q:[Lq x d], k,v:[Lk x d].
template <typename S>
Tensor<S> attention_heads(const Tensor<S>& q, const Tensor<S>& k,
                          const Tensor<S>& v, std::int64_t heads) {
  const std::int64_t d = q.cols();
  if (heads < 1 || d % heads != 0)
    throw ShapeError("attention: width " + std::to_string(d) +
                     " not divisible by " + std::to_string(heads) + " heads");
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw ShapeError("attention: k/v shape mismatch");
  const std::int64_t dh = d / heads;
  const S sc = S(1) / std::sqrt(static_cast<S>(dh));
  std::vector<Tensor<S>> outs;
  outs.reserve(heads);
  for (std::int64_t h = 0; h < heads; ++h) {
    auto qh = slice_cols(q, h * dh, dh);
    auto kh = slice_cols(k, h * dh, dh);
    auto vh = slice_cols(v, h * dh, dh);
    auto logits = scale(matmul(qh, transpose(kh)), sc);
    auto w = softmax_rows(logits);
    outs.push_back(matmul(w, vh));
  }
  return concat_cols(outs);
}

// The full multi-head attention op: per-head attention over already-projected
// q/k/v followed by the output projection.
template <typename S>
Tensor<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k,
                               const Tensor<S>& v, std::int64_t heads,
                               const Linear<S>& out_proj) {
  return out_proj.forward(attention_heads(q, k, v, heads));
}

template <typename S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;
  std::int64_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::int64_t d, std::int64_t h, Rng& rng,
                     const std::string& name)
      : wq(d, d, rng, name + ".wq"),
        wk(d, d, rng, name + ".wk"),
        wv(d, d, rng, name + ".wv"),
        wo(d, d, rng, name + ".wo"),
        heads(h) {}

  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& kv) const {
    return multi_head_attention(wq.forward(x), wk.forward(kv),
                                wv.forward(kv), heads, wo);
  }

  void collect(ParamRefs<S>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
  }
};

template <typename S>
struct Mlp {
  Linear<S> fc1, fc2;

  Mlp() = default;
  Mlp(std::int64_t d, std::int64_t hidden, Rng& rng, const std::string& name)
      : fc1(d, hidden, rng, name + ".fc1"), fc2(hidden, d, rng, name + ".fc2") {}

  Tensor<S> forward(const Tensor<S>& x) const {
    return fc2.forward(gelu(fc1.forward(x)));
  }

  void collect(ParamRefs<S>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

// Pre-LN transformer encoder block.
template <typename S>
struct TransformerBlock {
  LayerNormLayer<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  Mlp<S> mlp;

  TransformerBlock() = default;
  TransformerBlock(std::int64_t d, std::int64_t heads, Rng& rng,
                   const std::string& name)
      : ln1(d, name + ".ln1"),
        ln2(d, name + ".ln2"),
        attn(d, heads, rng, name + ".attn"),
        mlp(d, d * 4, rng, name + ".mlp") {}

  Tensor<S> forward(const Tensor<S>& x) const {
    auto n1 = ln1.forward(x);
    auto h = add(x, attn.forward(n1, n1));
    return add(h, mlp.forward(ln2.forward(h)));
  }

  void collect(ParamRefs<S>& out) {
    ln1.collect(out);
    ln2.collect(out);
    attn.collect(out);
    mlp.collect(out);
  }
};

// x * (1 + scale) + shift with [1 x d] modulation rows.
template <typename S>
Tensor<S> modulate(const Tensor<S>& x, const Tensor<S>& shift,
                   const Tensor<S>& scale_t) {
  return add_row_vector(
      mul_row_vector(x, add_scalar(reshape(scale_t, {scale_t.size()}), S(1))),
      reshape(shift, {shift.size()}));
}

// Transformer block whose LayerNorms are modulated by shift/scale/gate
// vectors regressed from a conditioning vector (diffusion-transformer
// style). The modulation head is zero-initialized so the block starts as
// the identity.
template <typename S>
struct AdaLnBlock {
  LayerNormLayer<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  Mlp<S> mlp;
  Linear<S> mod;  // cond [1 x d] -> [1 x 6d]

  AdaLnBlock() = default;
  AdaLnBlock(std::int64_t d, std::int64_t heads, Rng& rng,
             const std::string& name)
      : ln1(d, name + ".ln1"),
        ln2(d, name + ".ln2"),
        attn(d, heads, rng, name + ".attn"),
        mlp(d, d * 4, rng, name + ".mlp"),
        mod(d, d * 6, rng, name + ".mod", /*zero_init=*/true) {}

  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& cond) const {
    const std::int64_t d = x.cols();
    auto m = mod.forward(cond);
    auto shift1 = slice_cols(m, 0, d);
    auto scale1 = slice_cols(m, d, d);
    auto gate1 = slice_cols(m, 2 * d, d);
    auto shift2 = slice_cols(m, 3 * d, d);
    auto scale2 = slice_cols(m, 4 * d, d);
    auto gate2 = slice_cols(m, 5 * d, d);
    auto n1 = modulate(ln1.forward(x), shift1, scale1);
    auto h = add(x, mul_row_vector(attn.forward(n1, n1),
                                   reshape(gate1, {d})));
    auto n2 = modulate(ln2.forward(h), shift2, scale2);
    return add(h, mul_row_vector(mlp.forward(n2), reshape(gate2, {d})));
  }

  void collect(ParamRefs<S>& out) {
    ln1.collect(out);
    ln2.collect(out);
    attn.collect(out);
    mlp.collect(out);
    mod.collect(out);
  }
};

// Sinusoidal embedding of a scalar in [0,1]; returned as a [1 x dim]
// constant tensor.
template <typename S>
Tensor<S> time_embedding(S t, std::int64_t dim) {
  std::vector<S> v(static_cast<std::size_t>(dim));
  const std::int64_t half = dim / 2;
  for (std::int64_t i = 0; i < half; ++i) {
    const S freq = std::pow(S(10000), -static_cast<S>(i) / static_cast<S>(half));
    v[i] = std::sin(t * freq * S(1000));
    v[half + i] = std::cos(t * freq * S(1000));
  }
  if (dim % 2) v[dim - 1] = t;
  return Tensor<S>::from_values({1, dim}, std::move(v));
}

// Central-difference gradient verification: evaluates f at x +/- step per
// element and compares to the autodiff gradient. Returns the max relative
// error, with absolute error used near zero.
template <typename S>
S grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, Tensor<S> x,
             S step = S(1e-6)) {
  x.set_requires_grad(true);
  x.zero_grad();
  auto loss = f(x);
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw NumericError("grad_check: non-finite loss");
  loss.backward();
  std::vector<S> analytic = x.grad();
  S max_rel = S(0);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const S orig = x.values()[i];
    x.values()[i] = orig + step;
    const S fp = f(x).item();
    x.values()[i] = orig - step;
    const S fm = f(x).item();
    x.values()[i] = orig;
    if (!std::isfinite(static_cast<double>(fp)) ||
        !std::isfinite(static_cast<double>(fm)))
      throw NumericError("grad_check: non-finite perturbed loss");
    const S fd = (fp - fm) / (S(2) * step);
    const S denom = std::max(std::abs(fd), std::max(std::abs(analytic[i]), S(1e-3)));
    max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / denom);
  }
  return max_rel;
}

}  // namespace lamp
