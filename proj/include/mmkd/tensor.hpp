#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmkd/config.hpp"
#include "mmkd/error.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

namespace detail {
struct TensorImpl;

// One recorded operation. `backward` reads the output's gradient and
// accumulates into the gradients of `parents`.
struct Node {
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves

  std::vector<Real>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), Real(0));
    return grad;
  }
};
}  // namespace detail

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array that can take part in a reverse-mode autodiff graph.
///
/// Copies are shallow: a Tensor is a handle to shared storage. Values produced
/// by operations are never modified afterwards; only leaves (parameters) are
/// updated in place, by the optimizer or a gradient check.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Real> data() const;
  std::span<Real> mutable_data();
  Real item() const;
  Real operator[](std::size_t flat) const { return data()[flat]; }

  /// Empty span when no gradient has reached this tensor.
  std::span<const Real> grad() const;
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  /// New leaf holding a copy of the values.
  Tensor detach() const;

  detail::TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const noexcept { return impl_; }

  static Tensor from_impl(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered (name, tensor) list of trainable parameters.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

/// Parameter name to gradient; shapes mirror the parameters.
using GradientMap = std::map<std::string, Tensor>;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Runs reverse-mode accumulation from a scalar loss into every reachable
/// tensor that requires grad. Each node is visited once, in reverse
/// topological order.
void backward(const Tensor& loss);

/// Runs backward(loss) and collects gradients for `params`. Parameters the
/// loss does not reach get zero tensors.
GradientMap backward(const Tensor& loss, const ParamList& params);

void zero_grads(const ParamList& params);

namespace detail {
using BackwardFn = std::function<void(TensorImpl& out)>;

/// Wraps freshly computed values into a tensor. A node is attached only when
/// recording is on and some parent requires grad. Non-finite values throw.
Tensor make_result(Shape shape, std::vector<Real> data, std::vector<Tensor> parents,
                   BackwardFn fn, const char* op_name);
}  // namespace detail

}  // namespace MMKD_ABI
}  // namespace mmkd
