#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "fcdd/errors.hpp"

namespace fcdd {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long e : s) {
    if (e <= 0) throw ConfigError("tensor extents must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

// One node of the compute graph. Values are written once at construction;
// grad is the only mutable field afterwards. The backprop closure reads the
// node's own grad and scatters into the parents' grads; it captures plain
// data only (no shared_ptr back-edges), so the graph stays acyclic.
template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;
  bool requires_grad = false;
  bool backward_done = false;  // set on the root after a backward pass
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  std::function<void(TensorImpl<T>&)> backprop;

  long numel() const { return static_cast<long>(values.size()); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
};

}  // namespace detail

// Dense row-major tensor handle with reverse-mode gradient tracking.
// Copying a Tensor copies the handle, not the storage.
template <class T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    auto impl = std::make_shared<Impl>();
    long n = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->values.assign(static_cast<size_t>(n), value);
    impl->requires_grad = requires_grad;
    if (requires_grad) impl->ensure_grad();
    return Tensor(std::move(impl));
  }

  static Tensor from(Shape shape, std::vector<T> values,
                     bool requires_grad = false) {
    long n = shape_numel(shape);
    if (n != static_cast<long>(values.size()))
      throw UsageError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    impl->requires_grad = requires_grad;
    if (requires_grad) impl->ensure_grad();
    return Tensor(std::move(impl));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  long numel() const { return impl_->numel(); }
  long dim(size_t i) const { return impl_->shape.at(i); }
  size_t rank() const { return impl_->shape.size(); }

  std::vector<T>& values() { return impl_->values; }
  const std::vector<T>& values() const { return impl_->values; }
  std::vector<T>& grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  const std::vector<T>& grad() const { return impl_->grad; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    if (rg) impl_->ensure_grad();
  }
  void zero_grad() {
    impl_->grad.assign(impl_->values.size(), T(0));
    impl_->backward_done = false;
  }

  T item() const {
    if (numel() != 1) throw UsageError("item() on non-scalar tensor");
    return impl_->values[0];
  }

  std::shared_ptr<Impl> impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

template <class T>
inline void check_finite(const std::vector<T>& v, const char* where) {
  for (T x : v)
    if (!std::isfinite(static_cast<double>(x)))
      throw NumericError(std::string("non-finite value in ") + where);
}

namespace detail {

// Creates the result node of an op and wires up parents + backprop closure.
template <class T>
Tensor<T> make_node(Shape shape, std::vector<T> values,
                    std::vector<Tensor<T>> parents,
                    std::function<void(TensorImpl<T>&)> backprop) {
  bool track = false;
  for (const auto& p : parents)
    if (p.requires_grad() || p.impl()->backprop) track = true;
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(values));
  if (track) {
    for (const auto& p : parents) out.impl()->parents.push_back(p.impl());
    out.impl()->backprop = std::move(backprop);
  }
  return out;
}

template <class T>
void topo_sort(const std::shared_ptr<TensorImpl<T>>& root,
               std::vector<TensorImpl<T>*>& order) {
  // Iterative post-order DFS; graphs are shallow but can be wide.
  std::unordered_set<TensorImpl<T>*> seen;
  std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl<T>* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar root. Each parameter's grad accumulates
// the sum of contributions from all consumers. Calling backward twice on the
// same root without zero_grad() is an error.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward() requires a scalar loss tensor");
  auto root = loss.impl();
  if (root->backward_done)
    throw UsageError("backward() called twice on the same graph without reset");
  root->backward_done = true;

  std::vector<detail::TensorImpl<T>*> order;
  detail::topo_sort<T>(root, order);
  // Intermediate nodes need grad buffers as conduits during the sweep.
  for (auto* node : order) node->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backprop) node->backprop(*node);
  }
}

}  // namespace fcdd
