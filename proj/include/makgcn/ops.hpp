#pragma once

// Differentiable neural primitives over Tensor<T>. Each op validates shapes,
// computes its result eagerly and, when tracked, registers a backward closure.

#include <cstddef>
#include <span>
#include <vector>

#include "makgcn/rng.hpp"
#include "makgcn/tensor.hpp"

namespace makgcn {

inline constexpr double kDefaultLeakySlope = 0.2;
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// (..., m, p) x (..., p, n) -> (..., m, n); leading axes broadcast numpy-style.
template <typename T>
Tensor<T> matmul_batched(const Tensor<T>& a, const Tensor<T>& b);

// Per-position affine channel map on (B, C_in, ...) -> (B, C_out, ...).
// A rank-2 input (B, C_in) is a dense layer. bias may be undefined.
template <typename T>
Tensor<T> pointwise_linear(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias = Tensor<T>());

// Per-channel normalisation of (B, C, ...). In train mode the batch
// statistics are used and the running stats are updated in place
// (running_var tracks the unbiased variance); eval mode reads running stats.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                     double momentum = kBatchNormMomentum, double epsilon = kBatchNormEpsilon);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, double slope = kDefaultLeakySlope);

enum class ReduceKind { max, mean, sum };

template <typename T>
struct MaxReduction {
  Tensor<T> values;
  std::vector<std::size_t> argmax;  // one per output element, index along the reduced axis
};

// Max over one axis, keeping the winning indices (lowest index on ties).
template <typename T>
MaxReduction<T> reduce_max(const Tensor<T>& input, std::size_t axis);

// Max, mean or sum over one axis; the axis is removed from the result.
template <typename T>
Tensor<T> reduce(const Tensor<T>& input, std::size_t axis, ReduceKind kind);

// Mean over the batch of -log softmax(logits)[label]; returns shape (1).
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// Row-wise softmax of (B, classes). Not differentiable.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// out.shape[i] = a.shape[perm[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// Inverted dropout; identity in eval mode or when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double p, Mode mode, Rng& rng);

}  // namespace makgcn
