#pragma once

// Dense kernels for the convolution layers. Loop orders are fixed, so results do not
// depend on how callers distribute samples across threads.

#include <algorithm>
#include <cstddef>

namespace avp::kernels {

inline constexpr std::size_t kChunk = 256;

template <typename T>
inline void axpy(std::size_t n, T a, const T* __restrict x, T* __restrict y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T dot(std::size_t n, const T* __restrict x, const T* __restrict y) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t j = 0; j < 8; ++j) acc[j] += x[i + j] * y[i + j];
  T tail = 0;
  for (; i < n; ++i) tail += x[i] * y[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// c[i] += a0*b0[i] + a1*b1[i] + a2*b2[i] + a3*b3[i], summed left to right
template <typename T>
inline void axpy4(std::size_t n, const T* a, const T* __restrict b0, const T* __restrict b1,
                  const T* __restrict b2, const T* __restrict b3, T* __restrict c) {
  const T a0 = a[0], a1 = a[1], a2 = a[2], a3 = a[3];
  for (std::size_t i = 0; i < n; ++i) c[i] += ((a0 * b0[i] + a1 * b1[i]) + a2 * b2[i]) + a3 * b3[i];
}

/// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t n0 = 0; n0 < N; n0 += kChunk) {
    const std::size_t nn = std::min(kChunk, N - n0);
    for (std::size_t m = 0; m < M; ++m) {
      T* c = C + m * N + n0;
      const T* a = A + m * K;
      std::size_t k = 0;
      for (; k + 4 <= K; k += 4) {
        const T* b = B + k * N + n0;
        axpy4(nn, a + k, b, b + N, b + 2 * N, b + 3 * N, c);
      }
      for (; k < K; ++k) axpy(nn, a[k], B + k * N + n0, c);
    }
  }
}

/// C[M x K] += A[M x N] * B[K x N]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C) {
  for (std::size_t n0 = 0; n0 < N; n0 += kChunk) {
    const std::size_t nn = std::min(kChunk, N - n0);
    for (std::size_t m = 0; m < M; ++m) {
      const T* a = A + m * N + n0;
      T* c = C + m * K;
      std::size_t k = 0;
      for (; k + 4 <= K; k += 4) {
        const T* b = B + k * N + n0;
        T acc[4][8] = {};
        std::size_t i = 0;
        for (; i + 8 <= nn; i += 8)
          for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t j = 0; j < 8; ++j) acc[r][j] += a[i + j] * b[r * N + i + j];
        for (std::size_t r = 0; r < 4; ++r) {
          T tail = 0;
          for (std::size_t t = i; t < nn; ++t) tail += a[t] * b[r * N + t];
          const T* x = acc[r];
          c[k + r] += ((x[0] + x[1]) + (x[2] + x[3])) + ((x[4] + x[5]) + (x[6] + x[7])) + tail;
        }
      }
      for (; k < K; ++k) c[k] += dot(nn, a, B + k * N + n0);
    }
  }
}

/// C[K x N] += A[M x K]^T * B[M x N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C) {
  for (std::size_t n0 = 0; n0 < N; n0 += kChunk) {
    const std::size_t nn = std::min(kChunk, N - n0);
    std::size_t m = 0;
    T a4[4];
    for (; m + 4 <= M; m += 4) {
      const T* b = B + m * N + n0;
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < 4; ++j) a4[j] = A[(m + j) * K + k];
        axpy4(nn, a4, b, b + N, b + 2 * N, b + 3 * N, C + k * N + n0);
      }
    }
    for (; m < M; ++m) {
      const T* a = A + m * K;
      const T* b = B + m * N + n0;
      for (std::size_t k = 0; k < K; ++k) axpy(nn, a[k], b, C + k * N + n0);
    }
  }
}

}  // namespace avp::kernels
