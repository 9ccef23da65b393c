#pragma once

// Multi-head adaptive kernel layer.
//
// A small generator network maps geometric edge features to one
// (C_out x C_in) filter per point, neighbour and head. The filters of all heads
// are applied to the content features and summed, then a (projected) residual
// is added and the sum is normalised and activated:
//
//   y0  = LeakyReLU(BN0(Conv0(geo)))
//   y1  = LeakyReLU(BN_mid(Conv_mid(y0)))
//   W   = Conv1(y1)                       (B, C_out*C_in*H, N, k)
//   out = sum_h W_h . feat
//   res = LeakyReLU(BN_out(out + I))      I = feat, Proj(feat) or 0

#include <cstddef>
#include <optional>
#include <string>

#include "makgcn/nn.hpp"
#include "makgcn/tensor.hpp"

namespace makgcn {

struct MakConfig {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t gen_in_channels = 1;
  std::size_t num_heads = 1;
  std::size_t mid_channels = 8;
  bool residual = true;
  double leaky_slope = kDefaultLeakySlope;

  std::size_t kernel_channels() const { return out_channels * in_channels * num_heads; }
  bool projects_residual() const { return residual && in_channels != out_channels; }
  // Throws ConfigError naming the first invalid field.
  void validate() const;
};

// Per-point, per-neighbour, per-head filters, shape (B, N, k, C_out, C_in, H).
template <typename T>
struct DynamicKernelBank {
  Tensor<T> weights;

  std::size_t heads() const { return weights.dim(5); }
};

// Applies every head of the bank to x (B, C_in, N, k) and sums the heads:
// returns (B, C_out, N, k).
template <typename T>
Tensor<T> apply_heads(const DynamicKernelBank<T>& bank, const Tensor<T>& x);

// Fused Conv1 + apply_heads that never materialises the kernel bank.
// y1 (B, mid, N, k), x (B, C_in, N, k), w1 (C_out*C_in*H, mid), b1 (C_out*C_in*H).
template <typename T>
Tensor<T> dynamic_filter(const Tensor<T>& y1, const Tensor<T>& x, const Tensor<T>& w1,
                         const Tensor<T>& b1, std::size_t out_channels, std::size_t heads);

enum class KernelPath {
  fused,         // dynamic_filter
  materialized,  // generate_kernels + apply_heads
};

template <typename T>
class MakLayer {
 public:
  MakLayer() = default;
  MakLayer(std::string name, const MakConfig& config, Rng& rng);

  const MakConfig& config() const { return config_; }
  const std::string& name() const { return name_; }

  // Generator hidden features y1, shape (B, mid, N, k).
  Tensor<T> generator_hidden(const Tensor<T>& geo, Mode mode);
  DynamicKernelBank<T> generate_kernels(const Tensor<T>& geo, Mode mode);
  Tensor<T> forward(const Tensor<T>& geo, const Tensor<T>& feat, Mode mode,
                    KernelPath path = KernelPath::fused);

  void collect(StateRefs<T>& refs);

  Linear<T> conv0;
  BatchNorm<T> bn0;
  Linear<T> conv_mid;
  BatchNorm<T> bn_mid;
  Linear<T> conv1;
  std::optional<Linear<T>> proj;
  std::optional<BatchNorm<T>> bn_proj;
  BatchNorm<T> bn_out;

 private:
  std::string name_;
  MakConfig config_;
};

}  // namespace makgcn
