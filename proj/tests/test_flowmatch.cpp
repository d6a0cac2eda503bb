#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lamp/flowmatch.hpp"

using namespace lamp;
using T = Tensor<double>;

TEST_CASE("flow time validation") {
  CHECK_NOTHROW(FlowTime(0.0));
  CHECK_NOTHROW(FlowTime(1.0));
  CHECK_THROWS_AS(FlowTime(-0.001), std::invalid_argument);
  CHECK_THROWS_AS(FlowTime(1.001), std::invalid_argument);
  CHECK_THROWS_AS(FlowTime(std::nan("")), std::invalid_argument);
}

TEST_CASE("solver schedule") {
  SolverSchedule s(10);
  CHECK(s.tau(1) == 0.0);
  CHECK(s.tau(10) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.tau(11) == 1.0);
  CHECK_THROWS_AS(SolverSchedule(0), std::invalid_argument);
}

TEST_CASE("interpolant endpoints and midpoint are exact") {
  Rng rng(7);
  auto noise = T::gaussian({4, 3}, rng);
  auto data = T::gaussian({4, 3}, rng);
  CHECK(interpolate(noise, data, FlowTime(0.0)).values() == noise.values());
  CHECK(interpolate(noise, data, FlowTime(1.0)).values() == data.values());
  auto m = interpolate(noise, data, FlowTime(0.5));
  for (std::int64_t i = 0; i < m.size(); ++i)
    CHECK(m.values()[i] ==
          doctest::Approx(0.5 * (noise.values()[i] + data.values()[i]))
              .epsilon(1e-15));
  CHECK_THROWS_AS(interpolate(noise, T::zeros({2, 2}), FlowTime(0.5)),
                  ShapeError);
}

TEST_CASE("velocity target is the interpolant time derivative") {
  Rng rng(8);
  auto noise = T::gaussian({2, 5}, rng);
  auto data = T::gaussian({2, 5}, rng);
  auto v = velocity_target(noise, data);
  const double h = 1e-6;
  auto x0 = interpolate(noise, data, FlowTime(0.4 - h));
  auto x1 = interpolate(noise, data, FlowTime(0.4 + h));
  for (std::int64_t i = 0; i < v.size(); ++i) {
    const double fd = (x1.values()[i] - x0.values()[i]) / (2 * h);
    CHECK(v.values()[i] == doctest::Approx(fd).epsilon(1e-8));
  }
}

TEST_CASE("moving along the target velocity from any tau lands on the data") {
  Rng rng(9);
  auto noise = T::gaussian({3, 3}, rng);
  auto data = T::gaussian({3, 3}, rng);
  auto v = velocity_target(noise, data);
  for (double tau : {0.0, 0.3, 0.7, 1.0}) {
    auto x = interpolate(noise, data, FlowTime(tau));
    for (std::int64_t i = 0; i < x.size(); ++i) {
      const double reached = x.values()[i] + (1.0 - tau) * v.values()[i];
      CHECK(reached == doctest::Approx(data.values()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("beta flow-time sampler") {
  FlowTimeSampler sampler(1.5, 1.0);
  // Fixed quantile: u = 0.125 -> u^(1/1.5) = 0.25 exactly.
  CHECK(sampler.from_uniform(0.125) == doctest::Approx(0.25).epsilon(1e-15));

  // Empirical mean over 1e5 draws is alpha/(alpha+beta) = 0.6 within 0.01.
  Rng rng(12345);
  double acc = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) acc += sampler.sample(rng).tau;
  CHECK(std::abs(acc / n - 0.6) <= 0.01);

  // Beta(1,1) degenerates to the uniform distribution.
  FlowTimeSampler uni(1.0, 1.0);
  CHECK(uni.from_uniform(0.37) == 0.37);

  CHECK_THROWS_AS(FlowTimeSampler(1.5, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(FlowTimeSampler(0.0, 1.0), std::invalid_argument);
}

TEST_CASE("flow matching loss on the exact velocity field is zero") {
  Rng rng(10);
  auto noise = T::gaussian({4, 4}, rng);
  auto data = T::gaussian({4, 4}, rng);
  auto v = velocity_target(noise, data);
  VelocityField<double> field = [&](const T&, FlowTime) { return v; };
  CHECK(flow_matching_loss(field, data, noise, FlowTime(0.37)).item() == 0.0);

  VelocityField<double> bad = [](const T&, FlowTime) {
    return T::zeros({1, 1});
  };
  CHECK_THROWS_AS(flow_matching_loss(bad, data, noise, FlowTime(0.5)),
                  ShapeError);
}

TEST_CASE("euler integration of a linear ODE converges at first order") {
  // dx/dtau = x, x(0) = 1, exact x(1) = e.
  VelocityField<double> field = [](const T& x, FlowTime) { return x; };
  auto x0 = T::scalar(1.0);
  double prev_err = 0;
  for (int n : {10, 20, 40, 80}) {
    auto xn = euler_integrate(field, x0, SolverSchedule(n));
    const double err = std::abs(xn.item() - std::exp(1.0));
    if (prev_err > 0) {
      const double ratio = prev_err / err;
      CHECK(ratio > 1.7);
      CHECK(ratio < 2.4);
    }
    prev_err = err;
  }
}

TEST_CASE("partial denoise with the full step count equals full integration") {
  Rng rng(13);
  auto x0 = T::gaussian({3, 4}, rng);
  VelocityField<double> field = [](const T& x, FlowTime t) {
    return scale(x, 0.3 + t.tau);
  };
  SolverSchedule s(10);
  auto a = euler_integrate(field, x0, s);
  auto b = partial_denoise(field, x0, s, 10);
  CHECK(a.values() == b.values());  // bit-exact
}

TEST_CASE("partial denoise call count and visited times") {
  Rng rng(14);
  auto x0 = T::gaussian({2, 2}, rng);
  int calls = 0;
  double last_t = -1;
  VelocityField<double> field = [&](const T& x, FlowTime t) {
    ++calls;
    last_t = t.tau;
    return scale(x, 0.0);
  };
  SolverSchedule s(10);
  auto one = partial_denoise(field, x0, s, 1);
  CHECK(calls == 1);
  CHECK(last_t == 0.0);
  CHECK(one.values() == x0.values());  // zero velocity leaves state fixed

  calls = 0;
  euler_integrate(field, x0, s);
  CHECK(calls == 10);
  CHECK(last_t == doctest::Approx(0.9).epsilon(1e-15));

  CHECK_THROWS_AS(partial_denoise(field, x0, s, 0), std::invalid_argument);
  CHECK_THROWS_AS(partial_denoise(field, x0, s, 11), std::invalid_argument);
}

TEST_CASE("non-finite velocity raises a numeric error naming the step") {
  auto x0 = T::scalar(1.0);
  VelocityField<double> field = [](const T&, FlowTime t) {
    return T::scalar(t.tau > 0.3 ? std::nan("") : 0.0);
  };
  CHECK_THROWS_WITH_AS(euler_integrate(field, x0, SolverSchedule(10)),
                       doctest::Contains("step"), NumericError);
}
