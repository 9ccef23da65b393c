#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "makgcn/tensor.hpp"

namespace makgcn {

// Per-sample table of the k nearest points of every point, nearest first.
// Shared by every layer of one forward pass.
struct NeighborIndex {
  std::size_t batch = 0;
  std::size_t n_points = 0;
  std::size_t k = 0;
  std::vector<std::int64_t> indices;  // (batch, n_points, k)

  std::int64_t at(std::size_t b, std::size_t i, std::size_t j) const {
    return indices[(b * n_points + i) * k + j];
  }
};

// (B, C, N) -> (B, N, N) negated squared distances, built from squared norms
// and one Gram product. Distances are clamped at zero before negation.
template <typename T>
Tensor<T> pairwise_similarity(const Tensor<T>& points);

// k nearest neighbours per point by squared Euclidean distance. A point is its
// own nearest neighbour; equal distances go to the lowest index.
template <typename T>
NeighborIndex knn(const Tensor<T>& points, std::size_t k);

// (B, C, N) -> (B, 2C, N, k): channels [0, C) hold x_j - x_i, channels
// [C, 2C) repeat x_i. Differentiable in the point features.
template <typename T>
Tensor<T> graph_feature(const Tensor<T>& points, const NeighborIndex& index);

}  // namespace makgcn
