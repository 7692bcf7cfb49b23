#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace glgait::detail {

typedef double v4d __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store4(double* p, v4d v) { std::memcpy(p, &v, sizeof v); }

// C[i,j] += sum_kk A(i,kk) * B[kk*ldb + j] with A(i,kk) = A[i*ars + kk*acs].
// Every element accumulates in ascending kk order starting from its current
// value, so the result equals the plain triple loop bit for bit.
inline void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* A, std::size_t ars, std::size_t acs,
                     const double* B, std::size_t ldb, double* C, std::size_t ldc) {
  constexpr std::size_t MR = 4, NR = 8, KC = 256;
  thread_local std::vector<double> panel;
  const std::size_t n8 = m >= MR ? n - n % NR : 0;
  // k is split into blocks; C carries the running sum between blocks, so the
  // per-element order is unchanged.
  for (std::size_t k0 = 0; k0 < k && n8 > 0; k0 += KC) {
    const std::size_t kc = std::min(KC, k - k0);
    panel.resize(kc * NR);
    for (std::size_t j = 0; j < n8; j += NR) {
      for (std::size_t kk = 0; kk < kc; ++kk)
        for (std::size_t c = 0; c < NR; ++c) panel[kk * NR + c] = B[(k0 + kk) * ldb + j + c];
      std::size_t i = 0;
      for (; i + MR <= m; i += MR) {
        v4d acc[MR][2];
        for (std::size_t r = 0; r < MR; ++r) {
          acc[r][0] = load4(C + (i + r) * ldc + j);
          acc[r][1] = load4(C + (i + r) * ldc + j + 4);
        }
        const double* b = panel.data();
        const double* a0 = A + i * ars + k0 * acs;
        for (std::size_t kk = 0; kk < kc; ++kk, b += NR) {
          const v4d b0 = load4(b), b1 = load4(b + 4);
          for (std::size_t r = 0; r < MR; ++r) {
            const double a = a0[r * ars + kk * acs];
            const v4d av = {a, a, a, a};
            acc[r][0] += av * b0;
            acc[r][1] += av * b1;
          }
        }
        for (std::size_t r = 0; r < MR; ++r) {
          store4(C + (i + r) * ldc + j, acc[r][0]);
          store4(C + (i + r) * ldc + j + 4, acc[r][1]);
        }
      }
      for (; i < m; ++i) {
        v4d acc0 = load4(C + i * ldc + j), acc1 = load4(C + i * ldc + j + 4);
        const double* b = panel.data();
        for (std::size_t kk = 0; kk < kc; ++kk, b += NR) {
          const double a = A[i * ars + (k0 + kk) * acs];
          const v4d av = {a, a, a, a};
          acc0 += av * load4(b);
          acc1 += av * load4(b + 4);
        }
        store4(C + i * ldc + j, acc0);
        store4(C + i * ldc + j + 4, acc1);
      }
    }
  }
  // Remaining columns (or all of them for short A): row-wise axpy in kk order.
  if (n8 < n)
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = C + i * ldc;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double a = A[i * ars + kk * acs];
        const double* brow = B + kk * ldb;
        for (std::size_t c = n8; c < n; ++c) crow[c] += a * brow[c];
      }
    }
}

// C[i,j] += dot(A[i*lda ..], B[j*ldb ..]) over k terms. Each dot product is
// split into four interleaved partial sums combined as (s0 + s1) + (s2 + s3),
// independent of the tiling.
inline void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const double* A, std::size_t lda,
                        const double* B, std::size_t ldb, double* C, std::size_t ldc) {
  constexpr std::size_t MR = 2, NR = 4, L = 4;
  const std::size_t k4 = k - k % L;
  auto tail_dot = [&](const double* a, const double* b) {
    double s[L] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t kk = 0; kk < k4; kk += L)
      for (std::size_t l = 0; l < L; ++l) s[l] += a[kk + l] * b[kk + l];
    for (std::size_t kk = k4; kk < k; ++kk) s[kk - k4] += a[kk] * b[kk];
    return (s[0] + s[1]) + (s[2] + s[3]);
  };
  std::size_t i = 0;
  for (; i + MR <= m; i += MR) {
    std::size_t j = 0;
    for (; j + NR <= n; j += NR) {
      v4d acc[MR][NR] = {};
      for (std::size_t kk = 0; kk < k4; kk += L) {
        v4d a[MR], b[NR];
        for (std::size_t r = 0; r < MR; ++r) a[r] = load4(A + (i + r) * lda + kk);
        for (std::size_t c = 0; c < NR; ++c) b[c] = load4(B + (j + c) * ldb + kk);
        for (std::size_t r = 0; r < MR; ++r)
          for (std::size_t c = 0; c < NR; ++c) acc[r][c] += a[r] * b[c];
      }
      for (std::size_t kk = k4; kk < k; ++kk)
        for (std::size_t r = 0; r < MR; ++r)
          for (std::size_t c = 0; c < NR; ++c) acc[r][c][kk - k4] += A[(i + r) * lda + kk] * B[(j + c) * ldb + kk];
      for (std::size_t r = 0; r < MR; ++r)
        for (std::size_t c = 0; c < NR; ++c)
          C[(i + r) * ldc + j + c] += (acc[r][c][0] + acc[r][c][1]) + (acc[r][c][2] + acc[r][c][3]);
    }
    for (; j < n; ++j)
      for (std::size_t r = 0; r < MR; ++r) C[(i + r) * ldc + j] += tail_dot(A + (i + r) * lda, B + j * ldb);
  }
  for (; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) C[i * ldc + j] += tail_dot(A + i * lda, B + j * ldb);
}

}  // namespace glgait::detail
