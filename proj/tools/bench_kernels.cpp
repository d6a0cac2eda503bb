#include <chrono>
#include <cstdio>
#include <vector>

#include "lamp/kernels.hpp"
#include "lamp/rng.hpp"

// Times the serial reference kernels against the OpenMP ones and verifies
// bit-identical outputs while it is at it.

using Clock = std::chrono::steady_clock;

namespace {

template <typename F>
double time_ms(F&& f, int reps) {
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() /
         reps;
}

}  // namespace

int main() {
  lamp::Rng rng(42);
  std::printf("%-10s %8s %12s %12s %8s\n", "kernel", "size", "serial_ms",
              "omp_ms", "match");
  bool all_match = true;
  for (int n : {64, 128, 256}) {
    std::vector<float> a(static_cast<std::size_t>(n) * n),
        b(static_cast<std::size_t>(n) * n), c1(a.size()), c2(a.size());
    for (auto& v : a) v = static_cast<float>(rng.gaussian());
    for (auto& v : b) v = static_cast<float>(rng.gaussian());
    const int reps = n <= 128 ? 20 : 5;

    const double s_nn = time_ms(
        [&] { lamp::kernels::matmul_nn_serial(a.data(), b.data(), c1.data(),
                                              n, n, n); },
        reps);
    const double p_nn = time_ms(
        [&] { lamp::kernels::matmul_nn_omp(a.data(), b.data(), c2.data(), n,
                                           n, n); },
        reps);
    const bool m_nn = c1 == c2;
    all_match = all_match && m_nn;
    std::printf("%-10s %8d %12.3f %12.3f %8s\n", "nn", n, s_nn, p_nn,
                m_nn ? "yes" : "NO");

    const double s_nt = time_ms(
        [&] { lamp::kernels::matmul_nt_serial(a.data(), b.data(), c1.data(),
                                              n, n, n); },
        reps);
    const double p_nt = time_ms(
        [&] { lamp::kernels::matmul_nt_omp(a.data(), b.data(), c2.data(), n,
                                           n, n); },
        reps);
    const bool m_nt = c1 == c2;
    all_match = all_match && m_nt;
    std::printf("%-10s %8d %12.3f %12.3f %8s\n", "nt", n, s_nt, p_nt,
                m_nt ? "yes" : "NO");

    const double s_tn = time_ms(
        [&] { lamp::kernels::matmul_tn_serial(a.data(), b.data(), c1.data(),
                                              n, n, n); },
        reps);
    const double p_tn = time_ms(
        [&] { lamp::kernels::matmul_tn_omp(a.data(), b.data(), c2.data(), n,
                                           n, n); },
        reps);
    const bool m_tn = c1 == c2;
    all_match = all_match && m_tn;
    std::printf("%-10s %8d %12.3f %12.3f %8s\n", "tn", n, s_tn, p_tn,
                m_tn ? "yes" : "NO");
  }
  return all_match ? 0 : 1;
}
