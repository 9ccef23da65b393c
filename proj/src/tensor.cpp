#include "makgcn/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "makgcn/errors.hpp"

namespace makgcn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() noexcept { return g_grad_enabled; }
void GradMode::set_enabled(bool enabled) noexcept { g_grad_enabled = enabled; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  impl_->data.assign(shape_numel(shape), T(0));
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> index) const {
  const auto& shape = impl_->shape;
  if (index.size() != shape.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " for tensor " +
                         shape_str(shape));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape[axis]) throw DimensionError("index out of range for " + shape_str(shape));
    off = off * shape[axis] + i;
    ++axis;
  }
  return off;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
  return impl_->data[offset(index)];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  return impl_->data[offset(index)];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data, false);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw UsageError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw UsageError("backward on a tensor that is not graph-tracked");

  using Impl = detail::TensorImpl<T>;
  // Post-order DFS gives a topological order with inputs before consumers.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> seen;
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      Impl* child = impl->node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  for (Impl* impl : order) {
    if (impl->node) impl->grad.assign(impl->data.size(), T(0));
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* impl = *it;
    if (impl->node && impl->node->backward) impl->node->backward(*impl);
  }
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      const std::vector<const Tensor<T>*>& inputs, const char* op,
                      BackwardFn<T> backward_fn) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  bool track = false;
  if (GradMode::enabled()) {
    for (const auto* in : inputs) {
      if (in && in->defined() && in->requires_grad()) track = true;
    }
  }
  if (track) {
    impl->requires_grad = true;
    auto node = std::make_shared<Node<T>>();
    node->op = op;
    for (const auto* in : inputs) {
      if (in && in->defined()) node->inputs.push_back(in->impl());
    }
    node->backward = std::move(backward_fn);
    impl->node = std::move(node);
  }
  return Tensor<T>::from_impl(std::move(impl));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs, const char* op,
                      BackwardFn<T> backward_fn) {
  return make_result<T>(std::move(shape), std::move(values),
                        std::vector<const Tensor<T>*>(inputs), op, std::move(backward_fn));
}

template Tensor<float> make_result(Shape, std::vector<float>, const std::vector<const Tensor<float>*>&,
                                   const char*, BackwardFn<float>);
template Tensor<double> make_result(Shape, std::vector<double>,
                                    const std::vector<const Tensor<double>*>&, const char*,
                                    BackwardFn<double>);
template Tensor<float> make_result(Shape, std::vector<float>,
                                   std::initializer_list<const Tensor<float>*>, const char*,
                                   BackwardFn<float>);
template Tensor<double> make_result(Shape, std::vector<double>,
                                    std::initializer_list<const Tensor<double>*>, const char*,
                                    BackwardFn<double>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace makgcn
