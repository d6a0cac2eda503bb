#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lamp/rng.hpp"
#include "lamp/tensor.hpp"

// Conditional flow matching shared by both experts: linear interpolants,
// velocity targets, the matching loss, flow-time sampling, and the explicit
// Euler solver over a uniform schedule.

namespace lamp {

struct FlowTime {
  double tau = 0.0;
  explicit FlowTime(double t) : tau(t) {
    if (!(t >= 0.0 && t <= 1.0))
      throw std::invalid_argument("flow time " + std::to_string(t) +
                                  " outside [0,1]");
  }
};

// Uniform grid tau_n = (n-1)/N for n = 1..N+1.
struct SolverSchedule {
  int steps;
  explicit SolverSchedule(int n) : steps(n) {
    if (n < 1) throw std::invalid_argument("solver steps must be positive");
  }
  double tau(int n) const {  // n in [1, steps+1]
    return static_cast<double>(n - 1) / static_cast<double>(steps);
  }
};

// Beta(alpha, beta) flow-time sampler. Only beta = 1 has the closed-form
// inverse CDF tau = u^(1/alpha) used here; that covers Beta(1.5, 1.0) for
// action flow-times and Beta(1,1) = uniform for motion pretraining.
struct FlowTimeSampler {
  double alpha = 1.0;
  double beta = 1.0;
  FlowTimeSampler(double a, double b) : alpha(a), beta(b) {
    if (a <= 0.0 || b <= 0.0)
      throw std::invalid_argument("Beta parameters must be positive");
    if (b != 1.0)
      throw std::invalid_argument(
          "only beta = 1 flow-time samplers are supported");
  }
  double from_uniform(double u) const { return std::pow(u, 1.0 / alpha); }
  FlowTime sample(Rng& rng) const {
    return FlowTime(from_uniform(rng.uniform()));
  }
};

// x^tau = (1 - tau) * noise + tau * data. Endpoints are exact: the scaled
// terms use weights 0 and 1 so no rounding enters.
template <typename S>
Tensor<S> interpolate(const Tensor<S>& noise, const Tensor<S>& data,
                      FlowTime t) {
  detail::check_same_shape(noise, data, "interpolate");
  const S tau = static_cast<S>(t.tau);
  return add(scale(noise, S(1) - tau), scale(data, tau));
}

// v = data - noise.
template <typename S>
Tensor<S> velocity_target(const Tensor<S>& noise, const Tensor<S>& data) {
  detail::check_same_shape(noise, data, "velocity_target");
  return sub(data, noise);
}

// A velocity field: maps (state, flow time) to a velocity of the same shape.
// Conditioning is closed over by the caller.
template <typename S>
using VelocityField = std::function<Tensor<S>(const Tensor<S>&, FlowTime)>;

template <typename S>
Tensor<S> flow_matching_loss(const VelocityField<S>& field,
                             const Tensor<S>& data, const Tensor<S>& noise,
                             FlowTime t) {
  auto xt = interpolate(noise, data, t);
  auto pred = field(xt, t);
  if (pred.shape() != data.shape())
    throw ShapeError("flow_matching_loss: model output " +
                     shape_str(pred.shape()) + " vs data " +
                     shape_str(data.shape()));
  return mse(pred, velocity_target(noise, data));
}

// Explicit Euler truncated after steps_taken of schedule.steps steps.
template <typename S>
Tensor<S> partial_denoise(const VelocityField<S>& field, const Tensor<S>& x0,
                          const SolverSchedule& schedule, int steps_taken) {
  if (steps_taken < 1 || steps_taken > schedule.steps)
    throw std::invalid_argument("steps_taken out of range");
  const S dt = S(1) / static_cast<S>(schedule.steps);
  Tensor<S> x = x0;
  for (int n = 1; n <= steps_taken; ++n) {
    auto v = field(x, FlowTime(schedule.tau(n)));
    for (auto val : v.values())
      if (!std::isfinite(static_cast<double>(val)))
        throw NumericError("non-finite velocity at solver step " +
                           std::to_string(n));
    x = add(x, scale(v, dt));
  }
  return x;
}

// Full integration from tau = 0 to tau = 1 (N field evaluations).
template <typename S>
Tensor<S> euler_integrate(const VelocityField<S>& field, const Tensor<S>& x0,
                          const SolverSchedule& schedule) {
  return partial_denoise(field, x0, schedule, schedule.steps);
}

}  // namespace lamp
