#pragma once

#include <cstddef>

#include "mmkd/config.hpp"

// Dense compute kernels behind the autograd primitives.
//
// Every kernel exists twice: `serial` is the plain reference loop nest and
// `omp` distributes independent output rows across OpenMP threads. Each
// output element is produced by exactly one thread with the same inner
// summation order as the serial version, so both are bit-identical for any
// thread count.
namespace mmkd {
inline namespace MMKD_ABI {
namespace kernels {

/// Batched C = op(A) * op(B) (+ C when `accumulate`).
///
/// For each batch entry: op(A) is m x k, op(B) is k x n, C is m x n, all
/// row-major. With `trans_a` A is stored k x m; with `trans_b` B is stored
/// n x k. When `shared_b` is set B has no batch stride.
struct GemmDesc {
  std::size_t batch = 1;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  bool trans_a = false;
  bool trans_b = false;
  bool shared_b = false;
  bool accumulate = false;
};

// Backward kernels accumulate into their gradient outputs (dx, dgamma, dbeta).

/// im2col layout for temporal convolution over x[batch, steps, channels].
struct Conv1dDesc {
  std::size_t batch = 1;
  std::size_t steps = 0;
  std::size_t channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad_left = 0;
  std::size_t out_steps = 0;
};

namespace serial {
void gemm(const GemmDesc& d, const Real* a, const Real* b, Real* c);
void softmax_rows(std::size_t rows, std::size_t cols, Real inv_temperature, const Real* x, Real* y);
void softmax_rows_backward(std::size_t rows, std::size_t cols, Real inv_temperature, const Real* y,
                           const Real* dy, Real* dx);
void layer_norm(std::size_t rows, std::size_t cols, Real eps, const Real* x, const Real* gamma,
                const Real* beta, Real* y, Real* mean, Real* rstd);
void layer_norm_backward(std::size_t rows, std::size_t cols, const Real* x, const Real* gamma,
                         const Real* mean, const Real* rstd, const Real* dy, Real* dx,
                         Real* dgamma, Real* dbeta);
void im2col(const Conv1dDesc& d, const Real* x, Real* col);
void col2im(const Conv1dDesc& d, const Real* col, Real* dx);
}  // namespace serial

namespace omp {
void gemm(const GemmDesc& d, const Real* a, const Real* b, Real* c);
void softmax_rows(std::size_t rows, std::size_t cols, Real inv_temperature, const Real* x, Real* y);
void softmax_rows_backward(std::size_t rows, std::size_t cols, Real inv_temperature, const Real* y,
                           const Real* dy, Real* dx);
void layer_norm(std::size_t rows, std::size_t cols, Real eps, const Real* x, const Real* gamma,
                const Real* beta, Real* y, Real* mean, Real* rstd);
void layer_norm_backward(std::size_t rows, std::size_t cols, const Real* x, const Real* gamma,
                         const Real* mean, const Real* rstd, const Real* dy, Real* dx,
                         Real* dgamma, Real* dbeta);
void im2col(const Conv1dDesc& d, const Real* x, Real* col);
void col2im(const Conv1dDesc& d, const Real* col, Real* dx);
}  // namespace omp

}  // namespace kernels
}  // namespace MMKD_ABI
}  // namespace mmkd
