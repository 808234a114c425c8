#pragma once

#include <cstddef>
#include <vector>

#include "mmkd/tensor.hpp"

// Differentiable primitives. Leading "batch" axes are the only broadcasting
// supported; everything else requires exact shape agreement.
namespace mmkd {
inline namespace MMKD_ABI {
namespace ops {

enum class Padding { Same, Valid };

/// a[..., m, k] x b[..., k, n]. `b` may be rank 2 and shared by every batch
/// entry of `a` (only when `trans_a` is false).
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

/// x[..., in] * w[in, out] + bias[out]; `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Softmax over the last axis of x / temperature.
Tensor row_softmax(const Tensor& x, double temperature = 1.0);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Output length for a temporal convolution; throws Config on an empty output.
std::size_t conv1d_out_steps(std::size_t steps, std::size_t kernel, std::size_t stride, Padding padding);

/// Temporal convolution over x[B, T, D_in] (or [T, D_in]) with
/// w[k, D_in, D_out] and bias[D_out].
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, Padding padding);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
/// log(x + eps), elementwise.
Tensor log_eps(const Tensor& x, double eps);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over one axis; the axis is removed.
Tensor mean_axis(const Tensor& x, std::size_t axis);
/// Element `index` along axis 1 of a rank-3 tensor: [B, T, D] -> [B, D].
Tensor select_step(const Tensor& x, std::size_t index);

Tensor concat_last(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, Shape shape);
/// [A, B, C] -> [B, A, C].
Tensor swap_leading(const Tensor& x);
/// [B, T, h*dk] -> [B, h, T, dk].
Tensor split_heads(const Tensor& x, std::size_t heads);
/// [B, h, T, dk] -> [B, T, h*dk].
Tensor merge_heads(const Tensor& x);

/// Unit Euclidean norm along the last axis.
Tensor l2_normalize(const Tensor& x);
/// Divides every last-axis row by its sum; rows must be positive.
Tensor row_normalize(const Tensor& x);

/// Mean over rows of -log softmax(logits)[label]; logits are [N, C].
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels);

}  // namespace ops
}  // namespace MMKD_ABI
}  // namespace mmkd
