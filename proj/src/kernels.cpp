#include "lamp/kernels.hpp"

#include <atomic>

namespace lamp::kernels {

namespace {

std::atomic<bool> g_parallel{true};

template <typename S>
void nn_rows(const S* a, const S* b, S* c, std::size_t m, std::size_t k,
             std::size_t n, std::size_t i) {
  S* crow = c + i * n;
  for (std::size_t j = 0; j < n; ++j) crow[j] = S(0);
  const S* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const S aip = arow[p];
    const S* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
  }
}

template <typename S>
void nt_rows(const S* a, const S* b, S* c, std::size_t m, std::size_t k,
             std::size_t n, std::size_t i) {
  const S* arow = a + i * k;
  S* crow = c + i * n;
  for (std::size_t j = 0; j < n; ++j) {
    const S* brow = b + j * k;
    S acc = S(0);
    for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
    crow[j] = acc;
  }
}

template <typename S>
void tn_rows(const S* a, const S* b, S* c, std::size_t m, std::size_t k,
             std::size_t n, std::size_t i) {
  S* crow = c + i * n;
  for (std::size_t j = 0; j < n; ++j) crow[j] = S(0);
  for (std::size_t p = 0; p < k; ++p) {
    const S api = a[p * m + i];
    const S* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
  }
}

}  // namespace

void use_parallel(bool on) { g_parallel.store(on); }
bool parallel_enabled() {
#ifdef LAMP_HAVE_OPENMP
  return g_parallel.load();
#else
  return false;
#endif
}

#define LAMP_DEFINE_KERNELS(S)                                                \
  void matmul_nn_serial(const S* a, const S* b, S* c, std::size_t m,          \
                        std::size_t k, std::size_t n) {                       \
    for (std::size_t i = 0; i < m; ++i) nn_rows(a, b, c, m, k, n, i);         \
  }                                                                           \
  void matmul_nn_omp(const S* a, const S* b, S* c, std::size_t m,             \
                     std::size_t k, std::size_t n) {                          \
    _Pragma("omp parallel for schedule(static)")                              \
    for (long long i = 0; i < (long long)m; ++i)                              \
      nn_rows(a, b, c, m, k, n, (std::size_t)i);                              \
  }                                                                           \
  void matmul_nt_serial(const S* a, const S* b, S* c, std::size_t m,          \
                        std::size_t k, std::size_t n) {                       \
    for (std::size_t i = 0; i < m; ++i) nt_rows(a, b, c, m, k, n, i);         \
  }                                                                           \
  void matmul_nt_omp(const S* a, const S* b, S* c, std::size_t m,             \
                     std::size_t k, std::size_t n) {                          \
    _Pragma("omp parallel for schedule(static)")                              \
    for (long long i = 0; i < (long long)m; ++i)                              \
      nt_rows(a, b, c, m, k, n, (std::size_t)i);                              \
  }                                                                           \
  void matmul_tn_serial(const S* a, const S* b, S* c, std::size_t m,          \
                        std::size_t k, std::size_t n) {                       \
    for (std::size_t i = 0; i < m; ++i) tn_rows(a, b, c, m, k, n, i);         \
  }                                                                           \
  void matmul_tn_omp(const S* a, const S* b, S* c, std::size_t m,             \
                     std::size_t k, std::size_t n) {                          \
    _Pragma("omp parallel for schedule(static)")                              \
    for (long long i = 0; i < (long long)m; ++i)                              \
      tn_rows(a, b, c, m, k, n, (std::size_t)i);                              \
  }

LAMP_DEFINE_KERNELS(double)
LAMP_DEFINE_KERNELS(float)

#undef LAMP_DEFINE_KERNELS

}  // namespace lamp::kernels
