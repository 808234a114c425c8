#pragma once

// Per-row bodies shared by the serial and OpenMP kernels. Both drivers call
// these with identical arguments, which is what makes them bit-identical.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>

#include "mmkd/kernels.hpp"

namespace mmkd {
inline namespace MMKD_ABI {
namespace kernels::rows {

inline constexpr std::size_t kVecBytes = 16;
inline constexpr std::size_t kGemmRowBlock = 4;
inline constexpr std::size_t kGemmColTile = 8;

/// Copies a rows x cols matrix into its cols x rows transpose.
inline void transpose(std::size_t rows, std::size_t cols, const Real* src, Real* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

/// Rows [i0, i0 + kGemmRowBlock) of one batch entry of C. `bk` is B in k x n
/// layout (trans_b already resolved by packing). Every output element is
/// summed over p in increasing order, whatever the tile shape.
inline void gemm_block(const GemmDesc& d, std::size_t bi, std::size_t i0, const Real* a, const Real* bk,
                       Real* c) {
  const std::size_t rows = std::min(kGemmRowBlock, d.m - i0);
  const Real* ab = a + bi * d.m * d.k;
  const Real* bb = bk + (d.shared_b ? 0 : bi * d.k * d.n);
  Real* cb = c + (bi * d.m + i0) * d.n;
  const std::size_t a_row = d.trans_a ? 1 : d.k;  // stride between rows of op(A)
  const std::size_t a_col = d.trans_a ? d.m : 1;  // stride between columns of op(A)
  const Real* a0 = ab + i0 * a_row;

  for (std::size_t j0 = 0; j0 < d.n; j0 += kGemmColTile) {
    const std::size_t w = std::min(kGemmColTile, d.n - j0);
    Real acc[kGemmRowBlock][kGemmColTile];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) acc[r][j] = d.accumulate ? cb[r * d.n + j0 + j] : Real(0);

    if (rows == kGemmRowBlock && w == kGemmColTile) {
      // Explicit vectors keep the whole tile in registers.
      using Vec = Real __attribute__((vector_size(kVecBytes)));
      constexpr std::size_t kLanes = kVecBytes / sizeof(Real);
      constexpr std::size_t kVecs = kGemmColTile / kLanes;
      Vec vacc[kGemmRowBlock][kVecs];
      std::memcpy(vacc, acc, sizeof(vacc));
      for (std::size_t p = 0; p < d.k; ++p) {
        Vec bv[kVecs];
        std::memcpy(bv, bb + p * d.n + j0, sizeof(bv));
        for (std::size_t r = 0; r < kGemmRowBlock; ++r) {
          const Real v = a0[r * a_row + p * a_col];
          for (std::size_t q = 0; q < kVecs; ++q) vacc[r][q] += v * bv[q];
        }
      }
      std::memcpy(acc, vacc, sizeof(vacc));
    } else {
      for (std::size_t p = 0; p < d.k; ++p) {
        const Real* brow = bb + p * d.n + j0;
        for (std::size_t r = 0; r < rows; ++r) {
          const Real v = a0[r * a_row + p * a_col];
          for (std::size_t j = 0; j < w; ++j) acc[r][j] += v * brow[j];
        }
      }
    }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) cb[r * d.n + j0 + j] = acc[r][j];
  }
}

inline void softmax_row(std::size_t cols, Real inv_t, const Real* x, Real* y) {
  Real mx = x[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  Real sum = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = std::exp((x[j] - mx) * inv_t);
    sum += y[j];
  }
  const Real inv = Real(1) / sum;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void softmax_row_backward(std::size_t cols, Real inv_t, const Real* y, const Real* dy,
                                 Real* dx) {
  Real dot = 0;
  for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
  for (std::size_t j = 0; j < cols; ++j) dx[j] += inv_t * y[j] * (dy[j] - dot);
}

inline void layer_norm_row(std::size_t cols, Real eps, const Real* x, const Real* gamma,
                           const Real* beta, Real* y, Real& mean, Real& rstd) {
  Real mu = 0;
  for (std::size_t j = 0; j < cols; ++j) mu += x[j];
  mu /= static_cast<Real>(cols);
  Real var = 0;
  for (std::size_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
  var /= static_cast<Real>(cols);
  const Real r = Real(1) / std::sqrt(var + eps);
  for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mu) * r * gamma[j] + beta[j];
  mean = mu;
  rstd = r;
}

inline void layer_norm_row_backward(std::size_t cols, const Real* x, const Real* gamma, Real mean,
                                    Real rstd, const Real* dy, Real* dx) {
  Real sum_g = 0;
  Real sum_gx = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    const Real g = dy[j] * gamma[j];
    const Real xhat = (x[j] - mean) * rstd;
    sum_g += g;
    sum_gx += g * xhat;
  }
  const Real inv_n = Real(1) / static_cast<Real>(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    const Real g = dy[j] * gamma[j];
    const Real xhat = (x[j] - mean) * rstd;
    dx[j] += rstd * (g - inv_n * sum_g - xhat * inv_n * sum_gx);
  }
}

// Column j of dgamma/dbeta, summed over rows in ascending order.
inline void layer_norm_param_col(std::size_t rows, std::size_t cols, std::size_t j, const Real* x,
                                 const Real* mean, const Real* rstd, const Real* dy, Real* dgamma,
                                 Real* dbeta) {
  Real g = 0;
  Real b = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const Real xhat = (x[r * cols + j] - mean[r]) * rstd[r];
    g += dy[r * cols + j] * xhat;
    b += dy[r * cols + j];
  }
  dgamma[j] += g;
  dbeta[j] += b;
}

inline void im2col_step(const Conv1dDesc& d, std::size_t b, std::size_t t, const Real* x,
                        Real* col) {
  const std::size_t width = d.kernel * d.channels;
  Real* out = col + (b * d.out_steps + t) * width;
  for (std::size_t j = 0; j < d.kernel; ++j) {
    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * d.stride + j) -
                               static_cast<std::ptrdiff_t>(d.pad_left);
    Real* dst = out + j * d.channels;
    if (src < 0 || src >= static_cast<std::ptrdiff_t>(d.steps)) {
      std::fill(dst, dst + d.channels, Real(0));
    } else {
      const Real* in = x + (b * d.steps + static_cast<std::size_t>(src)) * d.channels;
      std::copy(in, in + d.channels, dst);
    }
  }
}

inline void col2im_batch(const Conv1dDesc& d, std::size_t b, const Real* col, Real* dx) {
  const std::size_t width = d.kernel * d.channels;
  for (std::size_t t = 0; t < d.out_steps; ++t) {
    const Real* in = col + (b * d.out_steps + t) * width;
    for (std::size_t j = 0; j < d.kernel; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * d.stride + j) -
                                 static_cast<std::ptrdiff_t>(d.pad_left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(d.steps)) continue;
      Real* out = dx + (b * d.steps + static_cast<std::size_t>(src)) * d.channels;
      const Real* g = in + j * d.channels;
      for (std::size_t c = 0; c < d.channels; ++c) out[c] += g[c];
    }
  }
}

}  // namespace kernels::rows
}  // namespace MMKD_ABI
}  // namespace mmkd
