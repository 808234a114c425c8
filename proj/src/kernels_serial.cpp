#include <vector>

#include "kernels_rows.hpp"

namespace mmkd {
inline namespace MMKD_ABI {
namespace kernels::serial {

void gemm(const GemmDesc& d, const Real* a, const Real* b, Real* c) {
  GemmDesc e = d;
  std::vector<Real> packed;
  if (d.trans_b) {
    const std::size_t nb = d.shared_b ? 1 : d.batch;
    packed.resize(nb * d.k * d.n);
    for (std::size_t bi = 0; bi < nb; ++bi) rows::transpose(d.n, d.k, b + bi * d.n * d.k, packed.data() + bi * d.k * d.n);
    b = packed.data();
    e.trans_b = false;
  }
  for (std::size_t bi = 0; bi < e.batch; ++bi)
    for (std::size_t i0 = 0; i0 < e.m; i0 += rows::kGemmRowBlock) rows::gemm_block(e, bi, i0, a, b, c);
}

void softmax_rows(std::size_t rows, std::size_t cols, Real inv_temperature, const Real* x, Real* y) {
  for (std::size_t r = 0; r < rows; ++r)
    rows::softmax_row(cols, inv_temperature, x + r * cols, y + r * cols);
}

void softmax_rows_backward(std::size_t rows, std::size_t cols, Real inv_temperature, const Real* y,
                           const Real* dy, Real* dx) {
  for (std::size_t r = 0; r < rows; ++r)
    rows::softmax_row_backward(cols, inv_temperature, y + r * cols, dy + r * cols, dx + r * cols);
}

void layer_norm(std::size_t rows, std::size_t cols, Real eps, const Real* x, const Real* gamma,
                const Real* beta, Real* y, Real* mean, Real* rstd) {
  for (std::size_t r = 0; r < rows; ++r)
    rows::layer_norm_row(cols, eps, x + r * cols, gamma, beta, y + r * cols, mean[r], rstd[r]);
}

void layer_norm_backward(std::size_t rows, std::size_t cols, const Real* x, const Real* gamma,
                         const Real* mean, const Real* rstd, const Real* dy, Real* dx,
                         Real* dgamma, Real* dbeta) {
  for (std::size_t r = 0; r < rows; ++r)
    rows::layer_norm_row_backward(cols, x + r * cols, gamma, mean[r], rstd[r], dy + r * cols,
                                  dx + r * cols);
  if (dgamma == nullptr) return;
  for (std::size_t j = 0; j < cols; ++j)
    rows::layer_norm_param_col(rows, cols, j, x, mean, rstd, dy, dgamma, dbeta);
}

void im2col(const Conv1dDesc& d, const Real* x, Real* col) {
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t t = 0; t < d.out_steps; ++t) rows::im2col_step(d, b, t, x, col);
}

void col2im(const Conv1dDesc& d, const Real* col, Real* dx) {
  for (std::size_t b = 0; b < d.batch; ++b) rows::col2im_batch(d, b, col, dx);
}

}  // namespace kernels::serial
}  // namespace MMKD_ABI
}  // namespace mmkd
