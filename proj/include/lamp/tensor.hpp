#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "lamp/kernels.hpp"
#include "lamp/rng.hpp"

// Dense tensors with reverse-mode autodiff on a dynamic tape. Nodes record
// their parents and a backward closure at construction time; backward() does
// a topological sweep from a scalar loss. Tensors without a grad-requiring
// ancestor record nothing, so frozen subgraphs are tape-free.

namespace lamp {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::int64_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // same size as value once touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  std::function<void(TensorNode<S>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(static_cast<std::size_t>(numel(t.node_->shape)),
                          S(0));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_values(Shape shape, std::vector<S> values,
                            bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != numel(shape))
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return from_values({1}, {v}, requires_grad);
  }

  static Tensor gaussian(Shape shape, Rng& rng, S stddev = S(1),
                         bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->value) v = static_cast<S>(rng.gaussian()) * stddev;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
  std::int64_t rows() const {
    return node_->shape.empty() ? 1 : node_->shape.front();
  }
  std::int64_t cols() const { return size() / rows(); }

  std::vector<S>& values() { return node_->value; }
  const std::vector<S>& values() const { return node_->value; }
  std::vector<S>& grad() { return node_->grad; }
  const std::vector<S>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  void zero_grad() {
    if (node_) node_->grad.assign(node_->value.size(), S(0));
  }

  S item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor");
    return node_->value[0];
  }

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

  // Reverse-mode sweep from a scalar loss.
  void backward() const {
    if (size() != 1) throw ShapeError("backward() requires a scalar");
    std::vector<TensorNode<S>*> order;
    std::unordered_set<TensorNode<S>*> seen;
    std::function<void(TensorNode<S>*)> visit = [&](TensorNode<S>* n) {
      if (!n || seen.count(n)) return;
      seen.insert(n);
      for (auto& p : n->parents) visit(p.get());
      order.push_back(n);
    };
    visit(node_.get());
    node_->ensure_grad();
    node_->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode<S>* n = *it;
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

  static Tensor make_op(Shape shape, std::vector<S> values,
                        std::vector<Tensor> parents,
                        std::function<void(TensorNode<S>&)> backward_fn) {
    Tensor t = from_values(std::move(shape), std::move(values));
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      t.node_->requires_grad = true;
      for (auto& p : parents) t.node_->parents.push_back(p.node_);
      t.node_->backward_fn = std::move(backward_fn);
    }
    return t;
  }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

namespace detail {
template <typename S>
void accumulate(TensorNode<S>& parent, const std::vector<S>& delta) {
  parent.ensure_grad();
  for (std::size_t i = 0; i < delta.size(); ++i) parent.grad[i] += delta[i];
}
template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b,
                      const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
}  // namespace detail

// ---- elementwise ----

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<S> out(a.values());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] += b.values()[i];
  auto an = a.node(), bn = b.node();
  return Tensor<S>::make_op(a.shape(), std::move(out), {a, b},
                            [an, bn](TensorNode<S>& n) {
                              if (an->requires_grad)
                                detail::accumulate(*an, n.grad);
                              if (bn->requires_grad)
                                detail::accumulate(*bn, n.grad);
                            });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<S> out(a.values());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] -= b.values()[i];
  auto an = a.node(), bn = b.node();
  return Tensor<S>::make_op(
      a.shape(), std::move(out), {a, b}, [an, bn](TensorNode<S>& n) {
        if (an->requires_grad) detail::accumulate(*an, n.grad);
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i)
            bn->grad[i] -= n.grad[i];
        }
      });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<S> out(a.values());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] *= b.values()[i];
  auto an = a.node(), bn = b.node();
  return Tensor<S>::make_op(
      a.shape(), std::move(out), {a, b}, [an, bn](TensorNode<S>& n) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i)
            an->grad[i] += n.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i)
            bn->grad[i] += n.grad[i] * an->value[i];
        }
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.values());
  for (auto& v : out) v *= c;
  auto an = a.node();
  return Tensor<S>::make_op(a.shape(), std::move(out), {a},
                            [an, c](TensorNode<S>& n) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < n.grad.size(); ++i)
                                an->grad[i] += c * n.grad[i];
                            });
}

// x scaled by a differentiable scalar tensor (the guidance gate path).
template <typename S>
Tensor<S> scale_by(const Tensor<S>& x, const Tensor<S>& s) {
  if (s.size() != 1) throw ShapeError("scale_by: scale must be scalar");
  const S c = s.values()[0];
  std::vector<S> out(x.values());
  for (auto& v : out) v *= c;
  auto xn = x.node(), sn = s.node();
  return Tensor<S>::make_op(
      x.shape(), std::move(out), {x, s}, [xn, sn, c](TensorNode<S>& n) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i)
            xn->grad[i] += c * n.grad[i];
        }
        if (sn->requires_grad) {
          sn->ensure_grad();
          S acc = S(0);
          for (std::size_t i = 0; i < n.grad.size(); ++i)
            acc += n.grad[i] * xn->value[i];
          sn->grad[0] += acc;
        }
      });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  std::vector<S> out(x.values());
  for (auto& v : out) {
    v = v >= S(0) ? S(1) / (S(1) + std::exp(-v))
                  : std::exp(v) / (S(1) + std::exp(v));
  }
  auto xn = x.node();
  auto y = out;
  return Tensor<S>::make_op(x.shape(), std::move(out), {x},
                            [xn, y](TensorNode<S>& n) {
                              xn->ensure_grad();
                              for (std::size_t i = 0; i < n.grad.size(); ++i)
                                xn->grad[i] +=
                                    n.grad[i] * y[i] * (S(1) - y[i]);
                            });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  const S inv_sqrt2 = S(0.70710678118654752440);
  const S inv_sqrt2pi = S(0.39894228040143267794);
  std::vector<S> out(x.values());
  for (auto& v : out) {
    v = S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2));
  }
  auto xn = x.node();
  return Tensor<S>::make_op(
      x.shape(), std::move(out), {x},
      [xn, inv_sqrt2, inv_sqrt2pi](TensorNode<S>& n) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          const S v = xn->value[i];
          const S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
          const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * v * v);
          xn->grad[i] += n.grad[i] * (cdf + v * pdf);
        }
      });
}

// ---- matmul family ----

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<S> out(m * n);
  kernels::matmul_nn(a.values().data(), b.values().data(), out.data(), m, k,
                     n);
  auto an = a.node(), bn = b.node();
  return Tensor<S>::make_op(
      {(std::int64_t)m, (std::int64_t)n}, std::move(out), {a, b},
      [an, bn, m, k, n](TensorNode<S>& nd) {
        if (an->requires_grad) {
          std::vector<S> da(m * k);
          kernels::matmul_nt(nd.grad.data(), bn->value.data(), da.data(), m,
                             n, k);
          detail::accumulate(*an, da);
        }
        if (bn->requires_grad) {
          std::vector<S> db(k * n);
          kernels::matmul_tn(an->value.data(), nd.grad.data(), db.data(), k,
                             m, n);
          detail::accumulate(*bn, db);
        }
      });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose: rank-2 only");
  const std::int64_t m = a.shape()[0], n = a.shape()[1];
  std::vector<S> out(a.size());
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  auto an = a.node();
  return Tensor<S>::make_op({n, m}, std::move(out), {a},
                            [an, m, n](TensorNode<S>& nd) {
                              an->ensure_grad();
                              for (std::int64_t i = 0; i < m; ++i)
                                for (std::int64_t j = 0; j < n; ++j)
                                  an->grad[i * n + j] += nd.grad[j * m + i];
                            });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: element count mismatch " +
                     shape_str(a.shape()) + " -> " + shape_str(shape));
  auto an = a.node();
  return Tensor<S>::make_op(std::move(shape), a.values(), {a},
                            [an](TensorNode<S>& nd) {
                              detail::accumulate(*an, nd.grad);
                            });
}

// Adds a length-n vector to every row of an [m x n] tensor (trailing-axis
// broadcast, the only broadcast the engine supports).
template <typename S>
Tensor<S> add_row_vector(const Tensor<S>& a, const Tensor<S>& v) {
  const std::int64_t n = a.shape().back();
  if (v.size() != n)
    throw ShapeError("add_row_vector: vector length " + shape_str(v.shape()) +
                     " vs trailing axis of " + shape_str(a.shape()));
  const std::int64_t rows = a.size() / n;
  std::vector<S> out(a.values());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < n; ++j) out[r * n + j] += v.values()[j];
  auto an = a.node(), vn = v.node();
  return Tensor<S>::make_op(
      a.shape(), std::move(out), {a, v}, [an, vn, rows, n](TensorNode<S>& nd) {
        if (an->requires_grad) detail::accumulate(*an, nd.grad);
        if (vn->requires_grad) {
          vn->ensure_grad();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < n; ++j)
              vn->grad[j] += nd.grad[r * n + j];
        }
      });
}

// Multiplies every row of an [m x n] tensor by a length-n vector.
template <typename S>
Tensor<S> mul_row_vector(const Tensor<S>& a, const Tensor<S>& v) {
  const std::int64_t n = a.shape().back();
  if (v.size() != n)
    throw ShapeError("mul_row_vector: vector length " + shape_str(v.shape()) +
                     " vs trailing axis of " + shape_str(a.shape()));
  const std::int64_t rows = a.size() / n;
  std::vector<S> out(a.values());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < n; ++j) out[r * n + j] *= v.values()[j];
  auto an = a.node(), vn = v.node();
  return Tensor<S>::make_op(
      a.shape(), std::move(out), {a, v}, [an, vn, rows, n](TensorNode<S>& nd) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < n; ++j)
              an->grad[r * n + j] += nd.grad[r * n + j] * vn->value[j];
        }
        if (vn->requires_grad) {
          vn->ensure_grad();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < n; ++j)
              vn->grad[j] += nd.grad[r * n + j] * an->value[r * n + j];
        }
      });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  std::vector<S> out(a.values());
  for (auto& v : out) v += c;
  auto an = a.node();
  return Tensor<S>::make_op(a.shape(), std::move(out), {a},
                            [an](TensorNode<S>& nd) {
                              detail::accumulate(*an, nd.grad);
                            });
}

// ---- reductions & normalization ----

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  S acc = S(0);
  for (auto v : a.values()) acc += v;
  auto an = a.node();
  return Tensor<S>::make_op({1}, {acc}, {a}, [an](TensorNode<S>& nd) {
    an->ensure_grad();
    for (auto& g : an->grad) g += nd.grad[0];
  });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  const S inv = S(1) / static_cast<S>(a.size());
  S acc = S(0);
  for (auto v : a.values()) acc += v;
  acc *= inv;
  auto an = a.node();
  return Tensor<S>::make_op({1}, {acc}, {a}, [an, inv](TensorNode<S>& nd) {
    an->ensure_grad();
    for (auto& g : an->grad) g += inv * nd.grad[0];
  });
}

// Column means over rows: [m x n] -> [1 x n].
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& a) {
  const std::int64_t n = a.shape().back();
  const std::int64_t m = a.size() / n;
  const S inv = S(1) / static_cast<S>(m);
  std::vector<S> out(n, S(0));
  for (std::int64_t r = 0; r < m; ++r)
    for (std::int64_t j = 0; j < n; ++j) out[j] += a.values()[r * n + j];
  for (auto& v : out) v *= inv;
  auto an = a.node();
  return Tensor<S>::make_op({1, n}, std::move(out), {a},
                            [an, m, n, inv](TensorNode<S>& nd) {
                              an->ensure_grad();
                              for (std::int64_t r = 0; r < m; ++r)
                                for (std::int64_t j = 0; j < n; ++j)
                                  an->grad[r * n + j] += inv * nd.grad[j];
                            });
}

// Repeats a [1 x n] row m times -> [m x n].
template <typename S>
Tensor<S> repeat_rows(const Tensor<S>& v, std::int64_t m) {
  const std::int64_t n = v.size();
  std::vector<S> out(static_cast<std::size_t>(m * n));
  for (std::int64_t r = 0; r < m; ++r)
    std::copy(v.values().begin(), v.values().end(), out.begin() + r * n);
  auto vn = v.node();
  return Tensor<S>::make_op({m, n}, std::move(out), {v},
                            [vn, m, n](TensorNode<S>& nd) {
                              vn->ensure_grad();
                              for (std::int64_t r = 0; r < m; ++r)
                                for (std::int64_t j = 0; j < n; ++j)
                                  vn->grad[j] += nd.grad[r * n + j];
                            });
}

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
  const std::int64_t n = a.shape().back();
  if (n < 1) throw ShapeError("softmax: empty trailing axis");
  const std::int64_t m = a.size() / n;
  std::vector<S> out(a.size());
  for (std::int64_t r = 0; r < m; ++r) {
    const S* x = a.values().data() + r * n;
    S* y = out.data() + r * n;
    S mx = x[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    S z = S(0);
    for (std::int64_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    const S inv = S(1) / z;
    for (std::int64_t j = 0; j < n; ++j) y[j] *= inv;
  }
  auto an = a.node();
  auto yv = out;
  return Tensor<S>::make_op(
      a.shape(), std::move(out), {a}, [an, yv, m, n](TensorNode<S>& nd) {
        an->ensure_grad();
        for (std::int64_t r = 0; r < m; ++r) {
          const S* y = yv.data() + r * n;
          const S* dy = nd.grad.data() + r * n;
          S dot = S(0);
          for (std::int64_t j = 0; j < n; ++j) dot += dy[j] * y[j];
          for (std::int64_t j = 0; j < n; ++j)
            an->grad[r * n + j] += y[j] * (dy[j] - dot);
        }
      });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& scale_p,
                     const Tensor<S>& shift_p, S eps) {
  const std::int64_t d = x.shape().back();
  if (d == 0) throw ShapeError("layer_norm: empty trailing axis");
  if (scale_p.size() != d || shift_p.size() != d)
    throw ShapeError("layer_norm: scale/shift length must equal " +
                     std::to_string(d));
  if (eps <= S(0)) throw ShapeError("layer_norm: eps must be positive");
  const std::int64_t m = x.size() / d;
  std::vector<S> out(x.size());
  std::vector<S> xhat(x.size());
  std::vector<S> inv_std(m);
  for (std::int64_t r = 0; r < m; ++r) {
    const S* xr = x.values().data() + r * d;
    S mu = S(0);
    for (std::int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<S>(d);
    S var = S(0);
    for (std::int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<S>(d);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::int64_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * is;
      out[r * d + j] =
          xhat[r * d + j] * scale_p.values()[j] + shift_p.values()[j];
    }
  }
  auto xn = x.node(), sn = scale_p.node(), bn = shift_p.node();
  return Tensor<S>::make_op(
      x.shape(), std::move(out), {x, scale_p, shift_p},
      [xn, sn, bn, xhat, inv_std, m, d](TensorNode<S>& nd) {
        for (std::int64_t r = 0; r < m; ++r) {
          const S* dy = nd.grad.data() + r * d;
          const S* xh = xhat.data() + r * d;
          if (sn->requires_grad) {
            sn->ensure_grad();
            for (std::int64_t j = 0; j < d; ++j)
              sn->grad[j] += dy[j] * xh[j];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t j = 0; j < d; ++j) bn->grad[j] += dy[j];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            S mean_g = S(0), mean_gx = S(0);
            for (std::int64_t j = 0; j < d; ++j) {
              const S g = dy[j] * sn->value[j];
              mean_g += g;
              mean_gx += g * xh[j];
            }
            mean_g /= static_cast<S>(d);
            mean_gx /= static_cast<S>(d);
            for (std::int64_t j = 0; j < d; ++j) {
              const S g = dy[j] * sn->value[j];
              xn->grad[r * d + j] +=
                  inv_std[r] * (g - mean_g - xh[j] * mean_gx);
            }
          }
        }
      });
}

// ---- layout ops ----

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::int64_t m = parts[0].rows();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row count mismatch");
    total += p.cols();
  }
  std::vector<S> out(static_cast<std::size_t>(m * total));
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t c = p.cols();
    for (std::int64_t r = 0; r < m; ++r)
      std::copy(p.values().begin() + r * c, p.values().begin() + (r + 1) * c,
                out.begin() + r * total + off);
    off += c;
  }
  std::vector<std::shared_ptr<TensorNode<S>>> nodes;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.cols());
  }
  return Tensor<S>::make_op(
      {m, total}, std::move(out), parts,
      [nodes, widths, m, total](TensorNode<S>& nd) {
        std::int64_t off = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          const std::int64_t c = widths[i];
          if (nodes[i]->requires_grad) {
            nodes[i]->ensure_grad();
            for (std::int64_t r = 0; r < m; ++r)
              for (std::int64_t j = 0; j < c; ++j)
                nodes[i]->grad[r * c + j] += nd.grad[r * total + off + j];
          }
          off += c;
        }
      });
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::int64_t n = parts[0].cols();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeError("concat_rows: column count mismatch");
    total += p.rows();
  }
  std::vector<S> out;
  out.reserve(static_cast<std::size_t>(total * n));
  for (const auto& p : parts)
    out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<std::shared_ptr<TensorNode<S>>> nodes;
  std::vector<std::int64_t> counts;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    counts.push_back(p.size());
  }
  return Tensor<S>::make_op({total, n}, std::move(out), parts,
                            [nodes, counts](TensorNode<S>& nd) {
                              std::int64_t off = 0;
                              for (std::size_t i = 0; i < nodes.size(); ++i) {
                                if (nodes[i]->requires_grad) {
                                  nodes[i]->ensure_grad();
                                  for (std::int64_t j = 0; j < counts[i]; ++j)
                                    nodes[i]->grad[j] += nd.grad[off + j];
                                }
                                off += counts[i];
                              }
                            });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, std::int64_t start,
                     std::int64_t len) {
  const std::int64_t m = a.rows(), n = a.cols();
  if (start < 0 || start + len > n)
    throw ShapeError("slice_cols: range out of bounds");
  std::vector<S> out(static_cast<std::size_t>(m * len));
  for (std::int64_t r = 0; r < m; ++r)
    std::copy(a.values().begin() + r * n + start,
              a.values().begin() + r * n + start + len, out.begin() + r * len);
  auto an = a.node();
  return Tensor<S>::make_op({m, len}, std::move(out), {a},
                            [an, m, n, start, len](TensorNode<S>& nd) {
                              an->ensure_grad();
                              for (std::int64_t r = 0; r < m; ++r)
                                for (std::int64_t j = 0; j < len; ++j)
                                  an->grad[r * n + start + j] +=
                                      nd.grad[r * len + j];
                            });
}

// Row gather from an embedding table [V x d].
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table,
                           const std::vector<std::int64_t>& ids) {
  const std::int64_t v = table.rows(), d = table.cols();
  for (auto id : ids)
    if (id < 0 || id >= v)
      throw ShapeError("embedding_lookup: id " + std::to_string(id) +
                       " out of range [0," + std::to_string(v) + ")");
  std::vector<S> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(table.values().begin() + ids[i] * d,
              table.values().begin() + (ids[i] + 1) * d, out.begin() + i * d);
  auto tn = table.node();
  return Tensor<S>::make_op({(std::int64_t)ids.size(), d}, std::move(out),
                            {table}, [tn, ids, d](TensorNode<S>& nd) {
                              tn->ensure_grad();
                              for (std::size_t i = 0; i < ids.size(); ++i)
                                for (std::int64_t j = 0; j < d; ++j)
                                  tn->grad[ids[i] * d + j] +=
                                      nd.grad[i * d + j];
                            });
}

// ---- losses ----

template <typename S>
Tensor<S> mse(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mse");
  auto d = sub(a, b);
  return mean_all(mul(d, d));
}

// MSE restricted to entries with mask == 1; mask is plain data, not a
// differentiable input.
template <typename S>
Tensor<S> masked_mse(const Tensor<S>& a, const Tensor<S>& b,
                     const std::vector<S>& mask) {
  detail::check_same_shape(a, b, "masked_mse");
  if (static_cast<std::int64_t>(mask.size()) != a.size())
    throw ShapeError("masked_mse: mask size mismatch");
  S denom = S(0);
  for (auto m : mask) denom += m;
  if (denom <= S(0)) denom = S(1);
  S acc = S(0);
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const S d = a.values()[i] - b.values()[i];
    acc += mask[i] * d * d;
  }
  acc /= denom;
  auto an = a.node(), bn = b.node();
  return Tensor<S>::make_op(
      {1}, {acc}, {a, b}, [an, bn, mask, denom](TensorNode<S>& nd) {
        const S g = nd.grad[0] / denom;
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < mask.size(); ++i)
            an->grad[i] += S(2) * g * mask[i] * (an->value[i] - bn->value[i]);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < mask.size(); ++i)
            bn->grad[i] -= S(2) * g * mask[i] * (an->value[i] - bn->value[i]);
        }
      });
}

}  // namespace lamp
