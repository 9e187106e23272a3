// SPDX-License-Identifier: Apache-2.0
//
// Small row-major matrix kernels. The four-row blocking in gemm_nn/gemm_nt
// amortizes B-row loads across output rows, which is where batched decoding
// gets its throughput edge over one-row-at-a-time incremental decoding.

#ifndef CTCMT_GEMM_HPP
#define CTCMT_GEMM_HPP

#include <cstring>

namespace ctcmt {

// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm_nn(int m, int k, int n, const T* __restrict__ a, const T* __restrict__ b,
             T* __restrict__ c, bool accumulate = false) {
  if (!accumulate) std::memset(c, 0, sizeof(T) * static_cast<std::size_t>(m) * n);
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + static_cast<std::size_t>(i) * k;
    const T* a1 = a0 + k;
    const T* a2 = a1 + k;
    const T* a3 = a2 + k;
    T* c0 = c + static_cast<std::size_t>(i) * n;
    T* c1 = c0 + n;
    T* c2 = c1 + n;
    T* c3 = c2 + n;
    for (int p = 0; p < k; ++p) {
      const T* bp = b + static_cast<std::size_t>(p) * n;
      const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
      for (int j = 0; j < n; ++j) {
        const T bj = bp[j];
        c0[j] += x0 * bj;
        c1[j] += x1 * bj;
        c2[j] += x2 * bj;
        c3[j] += x3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    const T* ai = a + static_cast<std::size_t>(i) * k;
    T* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T* bp = b + static_cast<std::size_t>(p) * n;
      const T x = ai[p];
      for (int j = 0; j < n; ++j) ci[j] += x * bp[j];
    }
  }
}

// C[M,N] (+)= A[M,K] * B^T where B is stored [N,K]
template <class T>
void gemm_nt(int m, int k, int n, const T* __restrict__ a, const T* __restrict__ b,
             T* __restrict__ c, bool accumulate = false) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<std::size_t>(i) * k;
    T* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + static_cast<std::size_t>(j) * k;
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = accumulate ? ci[j] + acc : acc;
    }
  }
}

// C[M,N] (+)= A^T * B where A is stored [K,M], B is stored [K,N]
template <class T>
void gemm_tn(int m, int k, int n, const T* __restrict__ a, const T* __restrict__ b,
             T* __restrict__ c, bool accumulate = false) {
  if (!accumulate) std::memset(c, 0, sizeof(T) * static_cast<std::size_t>(m) * n);
  for (int p = 0; p < k; ++p) {
    const T* ap = a + static_cast<std::size_t>(p) * m;
    const T* bp = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T x = ap[i];
      T* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += x * bp[j];
    }
  }
}

}  // namespace ctcmt

#endif  // CTCMT_GEMM_HPP
