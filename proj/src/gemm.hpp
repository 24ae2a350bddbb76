#pragma once

#include <algorithm>
#include <cstddef>

namespace cbamnet::detail {

// C[M,N] (+)= A[M,K] * B[K,N]; all row-major with explicit leading dims.
// Each output element accumulates over k in ascending order, so results do
// not depend on the blocking below.
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc, bool accumulate) {
  constexpr std::size_t kColBlock = 256;
  if (!accumulate) {
    for (std::size_t i = 0; i < M; ++i) std::fill(C + i * ldc, C + i * ldc + N, T(0));
  }
  for (std::size_t j0 = 0; j0 < N; j0 += kColBlock) {
    const std::size_t nb = std::min(kColBlock, N - j0);
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
      T* __restrict c0 = C + (i + 0) * ldc + j0;
      T* __restrict c1 = C + (i + 1) * ldc + j0;
      T* __restrict c2 = C + (i + 2) * ldc + j0;
      T* __restrict c3 = C + (i + 3) * ldc + j0;
      const T* a0 = A + (i + 0) * lda;
      const T* a1 = A + (i + 1) * lda;
      const T* a2 = A + (i + 2) * lda;
      const T* a3 = A + (i + 3) * lda;
      for (std::size_t k = 0; k < K; ++k) {
        const T* __restrict b = B + k * ldb + j0;
        const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
        for (std::size_t j = 0; j < nb; ++j) {
          const T bj = b[j];
          c0[j] += v0 * bj;
          c1[j] += v1 * bj;
          c2[j] += v2 * bj;
          c3[j] += v3 * bj;
        }
      }
    }
    for (; i < M; ++i) {
      T* __restrict c = C + i * ldc + j0;
      const T* a = A + i * lda;
      for (std::size_t k = 0; k < K; ++k) {
        const T* __restrict b = B + k * ldb + j0;
        const T v = a[k];
        for (std::size_t j = 0; j < nb; ++j) c[j] += v * b[j];
      }
    }
  }
}

template <class T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t r1 = std::min(rows, r0 + kTile), c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
      }
    }
  }
}

}  // namespace cbamnet::detail
