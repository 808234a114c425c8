#include <vector>

#include "kernels_rows.hpp"

// Parallel regions only open when there is enough work to amortize the
// fork/join; below the threshold the loops run on the calling thread.
namespace mmkd {
inline namespace MMKD_ABI {
namespace kernels::omp {
namespace {
constexpr std::size_t kMinParallelWork = 1 << 14;
}

void gemm(const GemmDesc& d, const Real* a, const Real* b, Real* c) {
  const bool par = d.batch * d.m * d.n * d.k >= kMinParallelWork;
  GemmDesc e = d;
  std::vector<Real> packed;
  if (d.trans_b) {
    const auto nb = static_cast<std::ptrdiff_t>(d.shared_b ? 1 : d.batch);
    packed.resize(static_cast<std::size_t>(nb) * d.k * d.n);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t bi = 0; bi < nb; ++bi)
      rows::transpose(d.n, d.k, b + bi * d.n * d.k, packed.data() + bi * d.k * d.n);
    b = packed.data();
    e.trans_b = false;
  }
  const std::size_t blocks = (e.m + rows::kGemmRowBlock - 1) / rows::kGemmRowBlock;
  const auto total = static_cast<std::ptrdiff_t>(e.batch * blocks);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < total; ++r) {
    const auto idx = static_cast<std::size_t>(r);
    rows::gemm_block(e, idx / blocks, (idx % blocks) * rows::kGemmRowBlock, a, b, c);
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, Real inv_temperature, const Real* x, Real* y) {
  const bool par = rows * cols >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r)
    rows::softmax_row(cols, inv_temperature, x + r * cols, y + r * cols);
}

void softmax_rows_backward(std::size_t rows, std::size_t cols, Real inv_temperature, const Real* y,
                           const Real* dy, Real* dx) {
  const bool par = rows * cols >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r)
    rows::softmax_row_backward(cols, inv_temperature, y + r * cols, dy + r * cols, dx + r * cols);
}

void layer_norm(std::size_t rows, std::size_t cols, Real eps, const Real* x, const Real* gamma,
                const Real* beta, Real* y, Real* mean, Real* rstd) {
  const bool par = rows * cols >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r)
    rows::layer_norm_row(cols, eps, x + r * cols, gamma, beta, y + r * cols, mean[r], rstd[r]);
}

void layer_norm_backward(std::size_t rows, std::size_t cols, const Real* x, const Real* gamma,
                         const Real* mean, const Real* rstd, const Real* dy, Real* dx,
                         Real* dgamma, Real* dbeta) {
  const bool par = rows * cols >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r)
    rows::layer_norm_row_backward(cols, x + r * cols, gamma, mean[r], rstd[r], dy + r * cols,
                                  dx + r * cols);
  if (dgamma == nullptr) return;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(cols); ++j)
    rows::layer_norm_param_col(rows, cols, static_cast<std::size_t>(j), x, mean, rstd, dy, dgamma,
                               dbeta);
}

void im2col(const Conv1dDesc& d, const Real* x, Real* col) {
  const auto total = static_cast<std::ptrdiff_t>(d.batch * d.out_steps);
  const bool par = d.batch * d.out_steps * d.kernel * d.channels >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < total; ++r) {
    const auto row = static_cast<std::size_t>(r);
    rows::im2col_step(d, row / d.out_steps, row % d.out_steps, x, col);
  }
}

void col2im(const Conv1dDesc& d, const Real* col, Real* dx) {
  const bool par = d.batch * d.out_steps * d.kernel * d.channels >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(d.batch); ++b)
    rows::col2im_batch(d, static_cast<std::size_t>(b), col, dx);
}

}  // namespace kernels::omp
}  // namespace MMKD_ABI
}  // namespace mmkd
