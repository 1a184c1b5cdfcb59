// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

// Row-major dense kernels. All of them accumulate into the output.
namespace hicropl::kernels {

// c[p x r] += a[p x q] * b[q x r]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    double* crow = c + i * r;
    const double* arow = a + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b + k * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c[p x q] += a[p x r] * b[q x r]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t p, std::size_t r, std::size_t q) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* arow = a + i * r;
    double* crow = c + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const double* brow = b + k * r;
      double acc = 0.0;
      for (std::size_t j = 0; j < r; ++j) acc += arow[j] * brow[j];
      crow[k] += acc;
    }
  }
}

// c[q x r] += a[p x q]^T * b[p x r]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* arow = a + i * q;
    const double* brow = b + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      double* crow = c + k * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
}

}  // namespace hicropl::kernels
