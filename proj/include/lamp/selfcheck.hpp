#pragma once

// Fast self-contained correctness checks shared by the acceptance gate and
// the CLI `selftest` subcommand. Each check is independent of trained
// artifacts and runs in seconds.

#include <string>

namespace lamp {

struct CheckResult {
  bool pass = false;
  std::string detail;
};

// Central-difference gradient checks (64-bit, step 1e-6, rel err <= 1e-5)
// over every differentiable primitive and one-layer experts, 20 seeds each.
CheckResult check_gradients(double budget_seconds = 120.0);

// Interpolant endpoints, oracle-velocity Euler recovery, bit-exact partial
// denoising, and first-order convergence on a linear ODE.
CheckResult check_flow_identities();

// Inverse-CDF flow-time sampler: u = 0.125 maps to 0.25 exactly and the
// empirical mean over 1e5 draws is 0.6 +/- 0.01.
CheckResult check_beta_sampler();

// Track/increment and patchify/unpatchify round trips on 1e3 random fields,
// plus camera compensation (static scene, moving cameras, zero field).
CheckResult check_bijections();

// One-step hidden-state tap costs exactly 1 velocity evaluation vs 10 for a
// full generation, and at most 15% of its wall clock.
CheckResult check_one_step_cost();

}  // namespace lamp
