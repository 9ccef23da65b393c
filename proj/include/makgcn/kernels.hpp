#pragma once

// Raw numeric kernels behind the differentiable ops.
//
// Every kernel exists twice: the default version parallelises its outer
// loops with OpenMP (and leans on Eigen for dense products), and
// kernels::serial holds a plain loop-nest reference used by the tests and the
// benchmark. Parallel versions partition work by output element so results do
// not depend on the thread count.
//
// All buffers are contiguous and row-major. Accumulating kernels (+=) say so.

#include <cstddef>
#include <cstdint>

namespace makgcn::kernels {

// c (m x n) = op(a) * op(b) + beta * c, where op(a) is m x p and op(b) is p x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t p, const T* a,
          const T* b, T beta, T* c);

// out[b] = w (c_out x c_in) * x[b] (c_in x m) + bias. bias may be null.
template <typename T>
void linear_forward(std::size_t batch, std::size_t c_in, std::size_t c_out, std::size_t m,
                    const T* x, const T* w, const T* bias, T* out);

// gx[b] += w^T * g[b]
template <typename T>
void linear_backward_input(std::size_t batch, std::size_t c_in, std::size_t c_out, std::size_t m,
                           const T* g, const T* w, T* gx);

// gw += sum_b g[b] * x[b]^T; gbias += row sums of g. gbias may be null.
template <typename T>
void linear_backward_params(std::size_t batch, std::size_t c_in, std::size_t c_out,
                            std::size_t m, const T* g, const T* x, T* gw, T* gbias);

// sim[b, i, j] = -max(0, |x_i|^2 + |x_j|^2 - 2 <x_i, x_j>) for x (batch, channels, n).
template <typename T>
void pairwise_similarity(std::size_t batch, std::size_t channels, std::size_t n, const T* x,
                         T* sim);

// idx[b, i, :] = columns of the k largest entries of sim[b, i, :], largest first,
// equal values ordered by lowest column.
template <typename T>
void topk_rows(std::size_t batch, std::size_t n, std::size_t k, const T* sim, std::int64_t* idx);

// out (batch, 2C, n, k): [x_j - x_i | x_i] for j = idx[b, i, :].
template <typename T>
void gather_edge_features(std::size_t batch, std::size_t channels, std::size_t n, std::size_t k,
                          const T* x, const std::int64_t* idx, T* out);

// gx += adjoint of gather_edge_features applied to g.
template <typename T>
void scatter_edge_features_grad(std::size_t batch, std::size_t channels, std::size_t n,
                                std::size_t k, const T* g, const std::int64_t* idx, T* gx);

// Viewing x as (outer, extent, inner): out[o, i] = max_e x[o, e, i], arg[o, i] = argmax
// (lowest e on ties).
template <typename T>
void max_reduce(std::size_t outer, std::size_t extent, std::size_t inner, const T* x, T* out,
                std::size_t* arg);

struct DynamicFilterDims {
  std::size_t batch = 1;
  std::size_t positions = 1;  // N * k grid cells per sample
  std::size_t mid = 1;        // generator hidden width
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  std::size_t heads = 1;

  std::size_t kernel_channels() const { return c_out * c_in * heads; }
};

// Final generator stage fused with multi-head filtering:
//   W[b, p, co, ci, h] = sum_m w1[(co, ci, h), m] * y1[b, m, p] + b1[(co, ci, h)]
//   out[b, co, p]      = sum_h sum_ci W[b, p, co, ci, h] * x[b, ci, p]
// with the generator channel laid out as ((co * c_in) + ci) * heads + h.
// y1 is (batch, mid, positions), x is (batch, c_in, positions).
template <typename T>
void dynamic_filter_forward(const DynamicFilterDims& dims, const T* y1, const T* x, const T* w1,
                            const T* b1, T* out);

// Accumulates gradients of dynamic_filter_forward. Any output pointer may be null.
template <typename T>
void dynamic_filter_backward(const DynamicFilterDims& dims, const T* y1, const T* x, const T* w1,
                             const T* b1, const T* g_out, T* g_y1, T* g_x, T* g_w1, T* g_b1);

namespace serial {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t p, const T* a,
          const T* b, T beta, T* c);
template <typename T>
void linear_forward(std::size_t batch, std::size_t c_in, std::size_t c_out, std::size_t m,
                    const T* x, const T* w, const T* bias, T* out);
template <typename T>
void linear_backward_input(std::size_t batch, std::size_t c_in, std::size_t c_out, std::size_t m,
                           const T* g, const T* w, T* gx);
template <typename T>
void linear_backward_params(std::size_t batch, std::size_t c_in, std::size_t c_out,
                            std::size_t m, const T* g, const T* x, T* gw, T* gbias);
template <typename T>
void pairwise_similarity(std::size_t batch, std::size_t channels, std::size_t n, const T* x,
                         T* sim);
template <typename T>
void topk_rows(std::size_t batch, std::size_t n, std::size_t k, const T* sim, std::int64_t* idx);
template <typename T>
void gather_edge_features(std::size_t batch, std::size_t channels, std::size_t n, std::size_t k,
                          const T* x, const std::int64_t* idx, T* out);
template <typename T>
void scatter_edge_features_grad(std::size_t batch, std::size_t channels, std::size_t n,
                                std::size_t k, const T* g, const std::int64_t* idx, T* gx);
template <typename T>
void max_reduce(std::size_t outer, std::size_t extent, std::size_t inner, const T* x, T* out,
                std::size_t* arg);
template <typename T>
void dynamic_filter_forward(const DynamicFilterDims& dims, const T* y1, const T* x, const T* w1,
                            const T* b1, T* out);
template <typename T>
void dynamic_filter_backward(const DynamicFilterDims& dims, const T* y1, const T* x, const T* w1,
                             const T* b1, const T* g_out, T* g_y1, T* g_x, T* g_w1, T* g_b1);

}  // namespace serial

}  // namespace makgcn::kernels
