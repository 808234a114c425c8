#include "mmkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mmkd {
inline namespace MMKD_ABI {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::Config: return "configuration";
    case ErrorKind::Data: return "data";
    case ErrorKind::Format: return "format";
    case ErrorKind::Manifest: return "manifest";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Io: return "I/O";
    case ErrorKind::Alignment: return "alignment";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;

const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw Error(ErrorKind::Usage, "access to an undefined tensor");
  return *impl;
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor::Tensor(Shape shape, std::vector<Real> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw Error(ErrorKind::Dimension, "shape " + shape_string(shape) + " does not hold " +
                                          std::to_string(data.size()) + " values");
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::from_impl(std::shared_ptr<detail::TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw Error(ErrorKind::Dimension, "axis " + std::to_string(axis) + " out of range for " +
                                          shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const Real> Tensor::data() const { return checked(impl_).data; }

std::span<Real> Tensor::mutable_data() {
  checked(impl_);
  return impl_->data;
}

Real Tensor::item() const {
  if (numel() != 1) throw Error(ErrorKind::Usage, "item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

std::span<const Real> Tensor::grad() const { return checked(impl_).grad; }

void Tensor::zero_grad() {
  checked(impl_);
  impl_->grad.clear();
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  checked(impl_);
  impl_->requires_grad = on;
}

bool Tensor::is_leaf() const { return checked(impl_).node == nullptr; }

Tensor Tensor::detach() const { return Tensor(shape(), std::vector<Real>(data().begin(), data().end())); }

namespace detail {

Tensor make_result(Shape shape, std::vector<Real> data, std::vector<Tensor> parents, BackwardFn fn,
                   const char* op_name) {
  for (Real v : data) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::Numeric, std::string(op_name) + " produced a non-finite value");
    }
  }
  Tensor out(std::move(shape), std::move(data));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->parents.reserve(parents.size());
  for (const auto& p : parents) node->parents.push_back(p.impl_ptr());
  node->backward = std::move(fn);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

}  // namespace detail

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw Error(ErrorKind::Usage, "backward needs a scalar loss, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl(), 0);
  seen.insert(loss.impl());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->parents.size()) {
      detail::TensorImpl* p = t->node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(t);
      stack.pop_back();
    }
  }

  loss.impl()->ensure_grad()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* t = *it;
    if (t->node && !t->grad.empty()) t->node->backward(*t);
  }
}

GradientMap backward(const Tensor& loss, const ParamList& params) {
  backward(loss);
  GradientMap grads;
  for (const auto& [name, p] : params) {
    auto g = p.grad();
    if (g.empty()) {
      grads.emplace(name, Tensor::zeros(p.shape()));
    } else {
      grads.emplace(name, Tensor(p.shape(), std::vector<Real>(g.begin(), g.end())));
    }
  }
  return grads;
}

void zero_grads(const ParamList& params) {
  for (const auto& entry : params) {
    Tensor p = entry.second;
    p.zero_grad();
  }
}

}  // namespace MMKD_ABI
}  // namespace mmkd
