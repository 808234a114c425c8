#include "mmkd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "mmkd/kernels.hpp"

namespace mmkd {
inline namespace MMKD_ABI {
namespace ops {
namespace {

using detail::TensorImpl;
namespace kn = kernels::omp;

Real* grad_of(const std::shared_ptr<TensorImpl>& p) {
  return p->requires_grad ? p->ensure_grad().data() : nullptr;
}

std::size_t prod(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= s[i];
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::Dimension, std::string(op) + ": shapes " + shape_string(a.shape()) +
                                          " and " + shape_string(b.shape()) + " differ");
  }
}

void require_rank_at_least(const Tensor& x, std::size_t r, const char* op) {
  if (x.rank() < r) {
    throw Error(ErrorKind::Dimension, std::string(op) + ": expected rank >= " + std::to_string(r) +
                                          ", got " + shape_string(x.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require_rank_at_least(a, 2, "matmul");
  require_rank_at_least(b, 2, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const auto mismatch = [&] {
    return Error(ErrorKind::Dimension, "matmul: incompatible shapes " + shape_string(sa) + " and " +
                                           shape_string(sb));
  };

  kernels::GemmDesc d;
  d.trans_a = trans_a;
  d.trans_b = trans_b;
  Shape out_shape;
  const std::size_t bk = trans_b ? sb[sb.size() - 1] : sb[sb.size() - 2];
  d.n = trans_b ? sb[sb.size() - 2] : sb[sb.size() - 1];
  if (sb.size() == 2 && sa.size() > 2) {
    if (trans_a) throw mismatch();
    d.shared_b = true;
    d.k = sa.back();
    d.m = a.numel() / d.k;
    out_shape.assign(sa.begin(), sa.end() - 1);
  } else {
    if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) throw mismatch();
    d.batch = prod(sa, 0, sa.size() - 2);
    d.m = trans_a ? sa[sa.size() - 1] : sa[sa.size() - 2];
    d.k = trans_a ? sa[sa.size() - 2] : sa[sa.size() - 1];
    out_shape.assign(sa.begin(), sa.end() - 2);
    out_shape.push_back(d.m);
  }
  if (d.k != bk) throw mismatch();
  out_shape.push_back(d.n);

  std::vector<Real> out(d.batch * d.m * d.n);
  kn::gemm(d, a.data().data(), b.data().data(), out.data());

  return detail::make_result(std::move(out_shape), std::move(out), {a, b}, [d](TensorImpl& o) {
    const auto& pa = o.node->parents[0];
    const auto& pb = o.node->parents[1];
    const Real* dc = o.grad.data();
    if (Real* ga = grad_of(pa)) {
      kernels::GemmDesc g;
      g.batch = d.batch;
      g.accumulate = true;
      if (!d.trans_a) {
        // dA[m,k] = dC * op(B)^T
        g.m = d.m, g.n = d.k, g.k = d.n;
        g.trans_b = !d.trans_b;
        g.shared_b = d.shared_b;
        kn::gemm(g, dc, pb->data.data(), ga);
      } else {
        // dA[k,m] = op(B) * dC^T
        g.m = d.k, g.n = d.m, g.k = d.n;
        g.trans_a = d.trans_b;
        g.trans_b = true;
        kn::gemm(g, pb->data.data(), dc, ga);
      }
    }
    if (Real* gb = grad_of(pb)) {
      kernels::GemmDesc g;
      g.batch = d.shared_b ? 1 : d.batch;
      g.accumulate = true;
      if (!d.trans_b) {
        // dB[k,n] = op(A)^T * dC
        g.m = d.k, g.n = d.n, g.k = d.m;
        g.trans_a = !d.trans_a;
        kn::gemm(g, pa->data.data(), dc, gb);
      } else {
        // dB[n,k] = dC^T * op(A)
        g.m = d.n, g.n = d.k, g.k = d.m;
        g.trans_a = true;
        g.trans_b = d.trans_a;
        kn::gemm(g, dc, pa->data.data(), gb);
      }
    }
  }, "matmul");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank_at_least(x, 1, "linear");
  if (w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw Error(ErrorKind::Dimension, "linear: input " + shape_string(x.shape()) +
                                          " does not match weight " + shape_string(w.shape()));
  }
  const std::size_t in = w.dim(0);
  const std::size_t outw = w.dim(1);
  if (bias.defined() && bias.numel() != outw) {
    throw Error(ErrorKind::Dimension, "linear: bias " + shape_string(bias.shape()) +
                                          " does not match weight " + shape_string(w.shape()));
  }
  const std::size_t rows = x.numel() / in;
  kernels::GemmDesc d;
  d.m = rows, d.n = outw, d.k = in;
  std::vector<Real> out(rows * outw);
  kn::gemm(d, x.data().data(), w.data().data(), out.data());
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < outw; ++j) out[r * outw + j] += bv[j];
  }
  Shape shape = x.shape();
  shape.back() = outw;
  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return detail::make_result(std::move(shape), std::move(out), std::move(parents),
                             [rows, in, outw](TensorImpl& o) {
    const auto& px = o.node->parents[0];
    const auto& pw = o.node->parents[1];
    const Real* dy = o.grad.data();
    if (Real* gx = grad_of(px)) {
      kernels::GemmDesc g;
      g.m = rows, g.n = in, g.k = outw;
      g.trans_b = true;
      g.accumulate = true;
      kn::gemm(g, dy, pw->data.data(), gx);
    }
    if (Real* gw = grad_of(pw)) {
      kernels::GemmDesc g;
      g.m = in, g.n = outw, g.k = rows;
      g.trans_a = true;
      g.accumulate = true;
      kn::gemm(g, px->data.data(), dy, gw);
    }
    if (o.node->parents.size() > 2) {
      if (Real* gb = grad_of(o.node->parents[2])) {
        for (std::size_t j = 0; j < outw; ++j) {
          Real s = 0;
          for (std::size_t r = 0; r < rows; ++r) s += dy[r * outw + j];
          gb[j] += s;
        }
      }
    }
  }, "linear");
}

Tensor row_softmax(const Tensor& x, double temperature) {
  if (!(temperature > 0.0)) {
    throw Error(ErrorKind::Parameter, "softmax temperature must be > 0, got " + std::to_string(temperature));
  }
  require_rank_at_least(x, 1, "row_softmax");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = cols ? x.numel() / cols : 0;
  const Real inv_t = static_cast<Real>(1.0 / temperature);
  std::vector<Real> y(x.numel());
  kn::softmax_rows(rows, cols, inv_t, x.data().data(), y.data());
  return detail::make_result(x.shape(), std::move(y), {x}, [rows, cols, inv_t](TensorImpl& o) {
    if (Real* gx = grad_of(o.node->parents[0]))
      kn::softmax_rows_backward(rows, cols, inv_t, o.data.data(), o.grad.data(), gx);
  }, "row_softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank_at_least(x, 1, "layer_norm");
  const std::size_t cols = x.shape().back();
  if (gamma.numel() != cols || beta.numel() != cols) {
    throw Error(ErrorKind::Dimension, "layer_norm: gain/bias do not match width of " +
                                          shape_string(x.shape()));
  }
  const std::size_t rows = x.numel() / cols;
  auto stats = std::make_shared<std::vector<Real>>(2 * rows);
  std::vector<Real> y(x.numel());
  kn::layer_norm(rows, cols, static_cast<Real>(eps), x.data().data(), gamma.data().data(),
                 beta.data().data(), y.data(), stats->data(), stats->data() + rows);
  return detail::make_result(x.shape(), std::move(y), {x, gamma, beta},
                             [rows, cols, stats](TensorImpl& o) {
    const auto& px = o.node->parents[0];
    const auto& pg = o.node->parents[1];
    const auto& pb = o.node->parents[2];
    Real* gx = grad_of(px);
    Real* gg = grad_of(pg);
    Real* gb = grad_of(pb);
    std::vector<Real> scratch;
    if (gx == nullptr) {
      scratch.assign(rows * cols, Real(0));
      gx = scratch.data();
    }
    std::vector<Real> gscratch;
    if (gg == nullptr || gb == nullptr) {
      gscratch.assign(2 * cols, Real(0));
      if (gg == nullptr) gg = gscratch.data();
      if (gb == nullptr) gb = gscratch.data() + cols;
    }
    kn::layer_norm_backward(rows, cols, px->data.data(), pg->data.data(), stats->data(),
                            stats->data() + rows, o.grad.data(), gx, gg, gb);
  }, "layer_norm");
}

std::size_t conv1d_out_steps(std::size_t steps, std::size_t kernel, std::size_t stride, Padding padding) {
  if (stride == 0 || kernel == 0) throw Error(ErrorKind::Config, "conv1d: kernel and stride must be positive");
  if (padding == Padding::Same) {
    if (steps == 0) throw Error(ErrorKind::Config, "conv1d: empty input sequence");
    return (steps + stride - 1) / stride;
  }
  if (kernel > steps) {
    throw Error(ErrorKind::Config, "conv1d: kernel " + std::to_string(kernel) +
                                       " longer than sequence " + std::to_string(steps) +
                                       " gives an empty output");
  }
  return (steps - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, Padding padding) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw Error(ErrorKind::Dimension, "conv1d: input must be [T, D] or [B, T, D], got " +
                                          shape_string(x.shape()));
  }
  if (w.rank() != 3 || w.dim(1) != x.shape().back()) {
    throw Error(ErrorKind::Dimension, "conv1d: kernel " + shape_string(w.shape()) +
                                          " does not match input " + shape_string(x.shape()));
  }
  kernels::Conv1dDesc d;
  d.batch = x.rank() == 3 ? x.dim(0) : 1;
  d.steps = x.dim(x.rank() - 2);
  d.channels = x.shape().back();
  d.kernel = w.dim(0);
  d.stride = stride;
  d.out_steps = conv1d_out_steps(d.steps, d.kernel, stride, padding);
  if (padding == Padding::Same) {
    const std::size_t need = (d.out_steps - 1) * stride + d.kernel;
    d.pad_left = need > d.steps ? (need - d.steps) / 2 : 0;
  }
  const std::size_t out_ch = w.dim(2);
  const std::size_t width = d.kernel * d.channels;
  const std::size_t rows = d.batch * d.out_steps;

  auto col = std::make_shared<std::vector<Real>>(rows * width);
  kn::im2col(d, x.data().data(), col->data());
  kernels::GemmDesc g;
  g.m = rows, g.n = out_ch, g.k = width;
  std::vector<Real> out(rows * out_ch);
  kn::gemm(g, col->data(), w.data().data(), out.data());
  if (bias.defined()) {
    if (bias.numel() != out_ch) throw Error(ErrorKind::Dimension, "conv1d: bias width mismatch");
    const auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_ch; ++j) out[r * out_ch + j] += bv[j];
  }

  Shape shape = x.rank() == 3 ? Shape{d.batch, d.out_steps, out_ch} : Shape{d.out_steps, out_ch};
  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return detail::make_result(std::move(shape), std::move(out), std::move(parents),
                             [d, col, rows, width, out_ch](TensorImpl& o) {
    const auto& px = o.node->parents[0];
    const auto& pw = o.node->parents[1];
    const Real* dy = o.grad.data();
    if (Real* gx = grad_of(px)) {
      std::vector<Real> dcol(rows * width);
      kernels::GemmDesc g;
      g.m = rows, g.n = width, g.k = out_ch;
      g.trans_b = true;
      kn::gemm(g, dy, pw->data.data(), dcol.data());
      kn::col2im(d, dcol.data(), gx);
    }
    if (Real* gw = grad_of(pw)) {
      kernels::GemmDesc g;
      g.m = width, g.n = out_ch, g.k = rows;
      g.trans_a = true;
      g.accumulate = true;
      kn::gemm(g, col->data(), dy, gw);
    }
    if (o.node->parents.size() > 2) {
      if (Real* gb = grad_of(o.node->parents[2])) {
        for (std::size_t j = 0; j < out_ch; ++j) {
          Real s = 0;
          for (std::size_t r = 0; r < rows; ++r) s += dy[r * out_ch + j];
          gb[j] += s;
        }
      }
    }
  }, "conv1d");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& o) {
    for (const auto& p : o.node->parents) {
      if (Real* g = grad_of(p))
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (Real* g = grad_of(o.node->parents[1]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
  }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& o) {
    const auto& pa = o.node->parents[0];
    const auto& pb = o.node->parents[1];
    if (Real* g = grad_of(pa))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * pb->data[i];
    if (Real* g = grad_of(pb))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * pa->data[i];
  }, "mul");
}

Tensor scale(const Tensor& x, double factor) {
  const Real f = static_cast<Real>(factor);
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= f;
  return detail::make_result(x.shape(), std::move(out), {x}, [f](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += f * o.grad[i];
  }, "scale");
}

Tensor relu(const Tensor& x) {
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > Real(0) ? v : Real(0);
  return detail::make_result(x.shape(), std::move(out), {x}, [](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        if (o.data[i] > Real(0)) g[i] += o.grad[i];
  }, "relu");
}

Tensor log_eps(const Tensor& x, double eps) {
  const Real e = static_cast<Real>(eps);
  std::vector<Real> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xv[i] + e);
  return detail::make_result(x.shape(), std::move(out), {x}, [e](TensorImpl& o) {
    const auto& px = o.node->parents[0];
    if (Real* g = grad_of(px))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] / (px->data[i] + e);
  }, "log_eps");
}

Tensor sum(const Tensor& x) {
  Real s = 0;
  for (Real v : x.data()) s += v;
  return detail::make_result({1}, {s}, {x}, [](TensorImpl& o) {
    const auto& px = o.node->parents[0];
    if (Real* g = grad_of(px))
      for (std::size_t i = 0; i < px->data.size(); ++i) g[i] += o.grad[0];
  }, "sum");
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw Error(ErrorKind::Dimension, "mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw Error(ErrorKind::Dimension, "mean_axis: axis out of range");
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t n = s[axis];
  const std::size_t inner = prod(s, axis + 1, s.size());
  if (n == 0) throw Error(ErrorKind::Dimension, "mean_axis over an empty axis");
  const Real inv = Real(1) / static_cast<Real>(n);
  std::vector<Real> out(outer * inner, Real(0));
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * n + k) * inner + i];
  for (auto& v : out) v *= inv;
  Shape shape = s;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  return detail::make_result(std::move(shape), std::move(out), {x},
                             [outer, n, inner, inv](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0]))
      for (std::size_t a = 0; a < outer; ++a)
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t i = 0; i < inner; ++i) g[(a * n + k) * inner + i] += inv * o.grad[a * inner + i];
  }, "mean_axis");
}

Tensor select_step(const Tensor& x, std::size_t index) {
  if (x.rank() != 3 || index >= x.dim(1)) {
    throw Error(ErrorKind::Dimension, "select_step: index " + std::to_string(index) +
                                          " invalid for " + shape_string(x.shape()));
  }
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  std::vector<Real> out(B * D);
  const auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((b * T + index) * D), D, out.begin() + static_cast<std::ptrdiff_t>(b * D));
  return detail::make_result({B, D}, std::move(out), {x}, [B, T, D, index](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0]))
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < D; ++j) g[(b * T + index) * D + j] += o.grad[b * D + j];
  }, "select_step");
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error(ErrorKind::Dimension, "concat_last of nothing");
  const Shape& s0 = parts[0].shape();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size() || !std::equal(s.begin(), s.end() - 1, s0.begin())) {
      throw Error(ErrorKind::Dimension, "concat_last: " + shape_string(s) + " vs " + shape_string(s0));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = parts[0].numel() / s0.back();
  std::vector<Real> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    offset += widths[k];
  }
  Shape shape = s0;
  shape.back() = total;
  return detail::make_result(std::move(shape), std::move(out), parts,
                             [rows, total, widths](TensorImpl& o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (Real* g = grad_of(o.node->parents[k]))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) g[r * widths[k] + j] += o.grad[r * total + off + j];
      off += widths[k];
    }
  }, "concat_last");
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw Error(ErrorKind::Dimension, "reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), {x}, [](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  }, "reshape");
}

Tensor swap_leading(const Tensor& x) {
  if (x.rank() != 3) throw Error(ErrorKind::Dimension, "swap_leading expects rank 3, got " + shape_string(x.shape()));
  const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
  std::vector<Real> out(x.numel());
  const auto xv = x.data();
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) out[(b * A + a) * C + c] = xv[(a * B + b) * C + c];
  return detail::make_result({B, A, C}, std::move(out), {x}, [A, B, C](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0]))
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) g[(a * B + b) * C + c] += o.grad[(b * A + a) * C + c];
  }, "swap_leading");
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) {
    throw Error(ErrorKind::Dimension, "split_heads: width of " + shape_string(x.shape()) +
                                          " not divisible into " + std::to_string(heads) + " heads");
  }
  const std::size_t B = x.dim(0), T = x.dim(1), dk = x.dim(2) / heads, H = heads;
  std::vector<Real> out(x.numel());
  const auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t j = 0; j < dk; ++j)
          out[((b * H + h) * T + t) * dk + j] = xv[(b * T + t) * H * dk + h * dk + j];
  return detail::make_result({B, H, T, dk}, std::move(out), {x}, [B, T, H, dk](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0]))
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t j = 0; j < dk; ++j)
              g[(b * T + t) * H * dk + h * dk + j] += o.grad[((b * H + h) * T + t) * dk + j];
  }, "split_heads");
}

Tensor merge_heads(const Tensor& x) {
  if (x.rank() != 4) throw Error(ErrorKind::Dimension, "merge_heads expects rank 4, got " + shape_string(x.shape()));
  const std::size_t B = x.dim(0), H = x.dim(1), T = x.dim(2), dk = x.dim(3);
  std::vector<Real> out(x.numel());
  const auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < dk; ++j)
          out[(b * T + t) * H * dk + h * dk + j] = xv[((b * H + h) * T + t) * dk + j];
  return detail::make_result({B, T, H * dk}, std::move(out), {x}, [B, T, H, dk](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0]))
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < dk; ++j)
              g[((b * H + h) * T + t) * dk + j] += o.grad[(b * T + t) * H * dk + h * dk + j];
  }, "merge_heads");
}

Tensor l2_normalize(const Tensor& x) {
  require_rank_at_least(x, 1, "l2_normalize");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  auto norms = std::make_shared<std::vector<Real>>(rows);
  std::vector<Real> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    Real s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += xv[r * cols + j] * xv[r * cols + j];
    const Real n = std::max(std::sqrt(s), Real(1e-12));
    (*norms)[r] = n;
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = xv[r * cols + j] / n;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [rows, cols, norms](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0])) {
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* y = o.data.data() + r * cols;
        const Real* dy = o.grad.data() + r * cols;
        Real dot = 0;
        for (std::size_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
        for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += (dy[j] - y[j] * dot) / (*norms)[r];
      }
    }
  }, "l2_normalize");
}

Tensor row_normalize(const Tensor& x) {
  require_rank_at_least(x, 1, "row_normalize");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  auto sums = std::make_shared<std::vector<Real>>(rows);
  std::vector<Real> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    Real s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += xv[r * cols + j];
    if (!(s > Real(0))) throw Error(ErrorKind::Numeric, "row_normalize: non-positive row sum");
    (*sums)[r] = s;
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = xv[r * cols + j] / s;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [rows, cols, sums](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0])) {
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* y = o.data.data() + r * cols;
        const Real* dy = o.grad.data() + r * cols;
        Real dot = 0;
        for (std::size_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
        for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += (dy[j] - dot) / (*sums)[r];
      }
    }
  }, "row_normalize");
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw Error(ErrorKind::Dimension, "cross_entropy_logits expects [N, C], got " + shape_string(logits.shape()));
  }
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  if (labels.size() != N) {
    throw Error(ErrorKind::Dimension, "cross_entropy_logits: " + std::to_string(labels.size()) +
                                          " labels for " + std::to_string(N) + " rows");
  }
  if (N == 0) throw Error(ErrorKind::Data, "cross_entropy_logits on an empty batch");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= C) {
      throw Error(ErrorKind::Data, "label " + std::to_string(l) + " outside [0, " + std::to_string(C) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<Real>>(N * C);
  kn::softmax_rows(N, C, Real(1), logits.data().data(), probs->data());
  const auto lv = logits.data();
  Real total = 0;
  for (std::size_t r = 0; r < N; ++r) {
    const Real* row = lv.data() + r * C;
    const Real mx = *std::max_element(row, row + C);
    Real s = 0;
    for (std::size_t j = 0; j < C; ++j) s += std::exp(row[j] - mx);
    total += mx + std::log(s) - row[labels[r]];
  }
  total /= static_cast<Real>(N);
  return detail::make_result({1}, {total}, {logits}, [N, C, probs, labels](TensorImpl& o) {
    if (Real* g = grad_of(o.node->parents[0])) {
      const Real f = o.grad[0] / static_cast<Real>(N);
      for (std::size_t r = 0; r < N; ++r) {
        for (std::size_t j = 0; j < C; ++j) {
          const Real onehot = static_cast<std::size_t>(labels[r]) == j ? Real(1) : Real(0);
          g[r * C + j] += f * ((*probs)[r * C + j] - onehot);
        }
      }
    }
  }, "cross_entropy_logits");
}

}  // namespace ops
}  // namespace MMKD_ABI
}  // namespace mmkd
