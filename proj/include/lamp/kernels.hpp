#pragma once

#include <cstddef>

// Dense matrix kernels underlying the autodiff engine. Each kernel has a
// serial reference and an OpenMP variant parallelized over output rows; the
// per-element reduction order is identical in both, so results are
// bit-identical. The engine dispatches through the *_auto entry points.

namespace lamp::kernels {

// C[m x n] = A[m x k] * B[k x n]
void matmul_nn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_nn_omp(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n);
void matmul_nn_serial(const float* a, const float* b, float* c, std::size_t m,
                      std::size_t k, std::size_t n);
void matmul_nn_omp(const float* a, const float* b, float* c, std::size_t m,
                   std::size_t k, std::size_t n);

// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_omp(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n);
void matmul_nt_serial(const float* a, const float* b, float* c, std::size_t m,
                      std::size_t k, std::size_t n);
void matmul_nt_omp(const float* a, const float* b, float* c, std::size_t m,
                   std::size_t k, std::size_t n);

// C[m x n] = A[k x m]^T * B[k x n]
void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_omp(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n);
void matmul_tn_serial(const float* a, const float* b, float* c, std::size_t m,
                      std::size_t k, std::size_t n);
void matmul_tn_omp(const float* a, const float* b, float* c, std::size_t m,
                   std::size_t k, std::size_t n);

// Runtime switch (default: OpenMP variants when compiled in).
void use_parallel(bool on);
bool parallel_enabled();

template <typename S>
void matmul_nn(const S* a, const S* b, S* c, std::size_t m, std::size_t k,
               std::size_t n) {
  if (parallel_enabled())
    matmul_nn_omp(a, b, c, m, k, n);
  else
    matmul_nn_serial(a, b, c, m, k, n);
}

template <typename S>
void matmul_nt(const S* a, const S* b, S* c, std::size_t m, std::size_t k,
               std::size_t n) {
  if (parallel_enabled())
    matmul_nt_omp(a, b, c, m, k, n);
  else
    matmul_nt_serial(a, b, c, m, k, n);
}

template <typename S>
void matmul_tn(const S* a, const S* b, S* c, std::size_t m, std::size_t k,
               std::size_t n) {
  if (parallel_enabled())
    matmul_tn_omp(a, b, c, m, k, n);
  else
    matmul_tn_serial(a, b, c, m, k, n);
}

}  // namespace lamp::kernels
