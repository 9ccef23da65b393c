#pragma once

// Dense row-major tensors with tape-free reverse-mode autodiff.
//
// A Tensor is a cheap handle onto shared storage. Operations executed while
// GradMode is enabled and at least one operand requires a gradient attach a
// Node to their result; backward() walks those nodes in reverse topological
// order. Results computed under NoGradGuard never allocate a Node.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace makgcn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

const char* dtype_name(DType dtype);

enum class Mode { train, eval };

class GradMode {
 public:
  static bool enabled() noexcept;
  static void set_enabled(bool enabled) noexcept;
};

// Disables graph construction for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Reads out.grad and accumulates into the grads of inputs that need them.
  std::function<void(TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T>& storage() { return impl_->data; }
  const std::vector<T>& storage() const { return impl_->data; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
  bool has_node() const { return impl_->node != nullptr; }

  T item() const;
  T& at(std::initializer_list<std::size_t> index);
  T at(std::initializer_list<std::size_t> index) const;

  // Same values, fresh storage, no graph.
  Tensor detach() const;

  const std::shared_ptr<Impl>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<Impl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;
  std::shared_ptr<Impl> impl_;
};

// Reverse-mode accumulation from a scalar loss. Leaf gradients accumulate
// across calls; intermediate gradients are recomputed each call.
template <typename T>
void backward(const Tensor<T>& loss);

// Row-major strides for a shape.
std::vector<std::size_t> row_major_strides(const Shape& shape);

namespace detail {

template <typename T>
using BackwardFn = std::function<void(TensorImpl<T>&)>;

// Wraps freshly computed values as an op result, attaching a graph node when
// grad mode is on and some input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs, const char* op,
                      BackwardFn<T> backward_fn);

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      const std::vector<const Tensor<T>*>& inputs, const char* op,
                      BackwardFn<T> backward_fn);

// True when gradients should flow into impl.
template <typename T>
inline bool wants_grad(const std::shared_ptr<TensorImpl<T>>& impl) {
  return impl && impl->requires_grad;
}

}  // namespace detail

}  // namespace makgcn
