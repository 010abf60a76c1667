#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

// Dense row-major kernels shared by the differentiable ops. All accumulate.
namespace lwam::nc::kern {

inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(std::size_t M, std::size_t K, std::size_t N, const double* __restrict A,
                    const double* __restrict B, double* __restrict C) {
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * N;
    const double* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      const double* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
inline void gemm_nt(std::size_t M, std::size_t K, std::size_t N, const double* __restrict A,
                    const double* __restrict B, double* __restrict C) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) C[i * K + k] += dot(A + i * N, B + k * N, N);
}

// C[K,N] += A[M,K]^T * B[M,N]
inline void gemm_tn(std::size_t M, std::size_t K, std::size_t N, const double* __restrict A,
                    const double* __restrict B, double* __restrict C) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    const double* b = B + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      double* c = C + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

inline void softmax_row(const double* x, double* y, std::size_t n) {
  const double mx = *std::max_element(x, x + n);
  double z = 0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - mx);
    z += y[i];
  }
  const double inv = 1.0 / z;
  for (std::size_t i = 0; i < n; ++i) y[i] *= inv;
}

}  // namespace lwam::nc::kern
