#pragma once

// Parameter containers and the two stateful layers everything is built from.

#include <cmath>
#include <string>
#include <vector>

#include "makgcn/ops.hpp"
#include "makgcn/rng.hpp"
#include "makgcn/tensor.hpp"

namespace makgcn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;     // requires_grad
  Tensor<T> momentum;  // allocated by the optimiser on first use
};

// Non-trainable state saved alongside parameters (BN running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

template <typename T>
struct StateRefs {
  std::vector<Parameter<T>*> params;
  std::vector<Buffer<T>*> buffers;
};

// Glorot-uniform weights; a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> glorot_uniform(std::size_t fan_out, std::size_t fan_in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> w(fan_out * fan_in);
  for (auto& v : w) v = static_cast<T>(rng.uniform(-a, a));
  return Tensor<T>(Shape{fan_out, fan_in}, std::move(w), true);
}

// Channel-wise affine map (1x1 convolution or dense layer).
template <typename T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;  // value undefined when the layer has no bias

  Linear() = default;
  Linear(const std::string& name, std::size_t c_in, std::size_t c_out, bool with_bias, Rng& rng) {
    weight = {name + ".weight", glorot_uniform<T>(c_out, c_in, rng), {}};
    if (with_bias) bias = {name + ".bias", Tensor<T>(Shape{c_out}, true), {}};
  }

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }
  bool has_bias() const { return bias.value.defined(); }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return pointwise_linear(x, weight.value, bias.value);
  }

  void collect(StateRefs<T>& refs) {
    refs.params.push_back(&weight);
    if (has_bias()) refs.params.push_back(&bias);
  }
};

template <typename T>
struct BatchNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  Buffer<T> running_mean;
  Buffer<T> running_var;

  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t channels) {
    gamma = {name + ".gamma", Tensor<T>::full(Shape{channels}, T(1), true), {}};
    beta = {name + ".beta", Tensor<T>(Shape{channels}, true), {}};
    running_mean = {name + ".running_mean", Tensor<T>(Shape{channels})};
    running_var = {name + ".running_var", Tensor<T>::full(Shape{channels}, T(1))};
  }

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) {
    return batch_norm(x, gamma.value, beta.value, running_mean.value, running_var.value, mode);
  }

  void collect(StateRefs<T>& refs) {
    refs.params.push_back(&gamma);
    refs.params.push_back(&beta);
    refs.buffers.push_back(&running_mean);
    refs.buffers.push_back(&running_var);
  }
};

}  // namespace makgcn
