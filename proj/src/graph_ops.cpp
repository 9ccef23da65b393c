#include "makgcn/graph_ops.hpp"

#include <string>

#include "makgcn/errors.hpp"
#include "makgcn/kernels.hpp"

namespace makgcn {

namespace {

template <typename T>
void check_points(const Tensor<T>& points, const char* op) {
  if (!points.defined() || points.rank() != 3) {
    throw DimensionError(std::string(op) + ": expected (B, C, N) points, got " +
                         (points.defined() ? shape_str(points.shape()) : std::string("undefined")));
  }
}

}  // namespace

template <typename T>
Tensor<T> pairwise_similarity(const Tensor<T>& points) {
  check_points(points, "pairwise_similarity");
  const std::size_t batch = points.dim(0), channels = points.dim(1), n = points.dim(2);
  Tensor<T> sim(Shape{batch, n, n});
  kernels::pairwise_similarity<T>(batch, channels, n, points.data().data(), sim.data().data());
  return sim;
}

template <typename T>
NeighborIndex knn(const Tensor<T>& points, std::size_t k) {
  check_points(points, "knn");
  const std::size_t batch = points.dim(0), n = points.dim(2);
  if (k < 1 || k > n) {
    throw InvalidInputError("knn: k = " + std::to_string(k) + " must lie in [1, N = " +
                            std::to_string(n) + "]");
  }
  const Tensor<T> sim = pairwise_similarity(points);
  NeighborIndex index;
  index.batch = batch;
  index.n_points = n;
  index.k = k;
  index.indices.resize(batch * n * k);
  kernels::topk_rows<T>(batch, n, k, sim.data().data(), index.indices.data());
  return index;
}

template <typename T>
Tensor<T> graph_feature(const Tensor<T>& points, const NeighborIndex& index) {
  check_points(points, "graph_feature");
  const std::size_t batch = points.dim(0), channels = points.dim(1), n = points.dim(2);
  if (index.batch != batch || index.n_points != n || index.indices.size() != batch * n * index.k) {
    throw InvalidInputError("graph_feature: neighbour index built for " +
                            std::to_string(index.batch) + " x " + std::to_string(index.n_points) +
                            " points, features are " + shape_str(points.shape()));
  }
  for (auto v : index.indices) {
    if (v < 0 || static_cast<std::size_t>(v) >= n) {
      throw InvalidInputError("graph_feature: neighbour index " + std::to_string(v) +
                              " out of range [0, " + std::to_string(n) + ")");
    }
  }
  const std::size_t k = index.k;
  std::vector<T> out(batch * 2 * channels * n * k);
  kernels::gather_edge_features<T>(batch, channels, n, k, points.data().data(),
                                   index.indices.data(), out.data());
  auto ip = points.impl();
  auto idx = std::make_shared<const std::vector<std::int64_t>>(index.indices);
  return detail::make_result<T>(
      Shape{batch, 2 * channels, n, k}, std::move(out), {&points}, "graph_feature",
      [ip, idx, batch, channels, n, k](detail::TensorImpl<T>& o) {
        ip->ensure_grad();
        kernels::scatter_edge_features_grad<T>(batch, channels, n, k, o.grad.data(), idx->data(),
                                               ip->grad.data());
      });
}

template Tensor<float> pairwise_similarity(const Tensor<float>&);
template Tensor<double> pairwise_similarity(const Tensor<double>&);
template NeighborIndex knn(const Tensor<float>&, std::size_t);
template NeighborIndex knn(const Tensor<double>&, std::size_t);
template Tensor<float> graph_feature(const Tensor<float>&, const NeighborIndex&);
template Tensor<double> graph_feature(const Tensor<double>&, const NeighborIndex&);

}  // namespace makgcn
