#pragma once

// Shared test helpers and the independent reference implementations the
// library is checked against. Nothing here calls into the code under test
// except to read parameter values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "makgcn/mak.hpp"
#include "makgcn/tensor.hpp"

namespace testing_support {

using makgcn::Shape;
using makgcn::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(makgcn::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(gen));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central differences of a scalar function of one buffer, perturbing each entry.
inline std::vector<double> numeric_gradient(std::vector<double>& values, const std::function<double()>& f,
                                            double step = 1e-5) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + step;
    const double up = f();
    values[i] = keep - step;
    const double down = f();
    values[i] = keep;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

// Max relative error between analytic gradients of `param` and central
// differences of `loss`, where `loss` reads `param`'s storage.
inline double gradcheck(Tensor<double>& param, const std::function<Tensor<double>()>& loss,
                        double step = 1e-6, double floor = 1e-6) {
  param.zero_grad();
  makgcn::backward(loss());
  const std::vector<double> analytic(param.grad().begin(), param.grad().end());
  auto& storage = param.storage();
  const auto numeric = numeric_gradient(storage, [&] {
    makgcn::NoGradGuard ng;
    return loss().item();
  }, step);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, rel_error(analytic[i], numeric[i], floor));
  return worst;
}

// Brute-force neighbours: direct squared differences, full sort by
// (distance, index). points is (B, C, N) row-major; result is (B, N, k).
inline std::vector<std::int64_t> brute_force_knn(const std::vector<double>& points, std::size_t batch,
                                                 std::size_t channels, std::size_t n, std::size_t k) {
  std::vector<std::int64_t> out;
  out.reserve(batch * n * k);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = points.data() + b * channels * n;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<double, std::size_t>> d(n);
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const double diff = x[c * n + i] - x[c * n + j];
          s += diff * diff;
        }
        d[j] = {s, j};
      }
      std::sort(d.begin(), d.end());
      for (std::size_t j = 0; j < k; ++j) out.push_back(static_cast<std::int64_t>(d[j].second));
    }
  }
  return out;
}

struct BnParams {
  std::vector<double> gamma, beta, mean, var;

  double apply(std::size_t c, double x) const {
    return (x - mean[c]) / std::sqrt(var[c] + 1e-5) * gamma[c] + beta[c];
  }
};

inline double leaky(double x, double slope) { return x > 0 ? x : slope * x; }

template <typename T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

template <typename T>
BnParams bn_params(const makgcn::BatchNorm<T>& bn) {
  return {to_doubles(bn.gamma.value), to_doubles(bn.beta.value), to_doubles(bn.running_mean.value),
          to_doubles(bn.running_var.value)};
}

// Explicit scalar evaluation of one MAK layer in eval mode, straight from the
// layer definition: generator, per-neighbour filters for every head summed,
// residual, normalisation and activation. geo is (B, G, N, k), feat is
// (B, C_in, N, k); returns (B, C_out, N, k).
template <typename T>
std::vector<double> mak_loop_oracle(makgcn::MakLayer<T>& layer, const std::vector<double>& geo,
                                    const std::vector<double>& feat, std::size_t batch, std::size_t n,
                                    std::size_t k) {
  const auto& cfg = layer.config();
  const std::size_t g_in = cfg.gen_in_channels, mid = cfg.mid_channels, ci_n = cfg.in_channels,
                    co_n = cfg.out_channels, heads = cfg.num_heads;
  const double slope = cfg.leaky_slope;
  const auto w0 = to_doubles(layer.conv0.weight.value);
  const auto wm = to_doubles(layer.conv_mid.weight.value);
  const auto w1 = to_doubles(layer.conv1.weight.value);
  const auto b1 = to_doubles(layer.conv1.bias.value);
  const auto bn0 = bn_params(layer.bn0), bnm = bn_params(layer.bn_mid), bno = bn_params(layer.bn_out);
  std::vector<double> wp;
  BnParams bnp;
  if (layer.proj) {
    wp = to_doubles(layer.proj->weight.value);
    bnp = bn_params(*layer.bn_proj);
  }
  const std::size_t grid = n * k;
  std::vector<double> out(batch * co_n * grid);
  std::vector<double> y0(mid), y1(mid), f(ci_n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < grid; ++p) {
      for (std::size_t m = 0; m < mid; ++m) {
        double s = 0.0;
        for (std::size_t c = 0; c < g_in; ++c) s += w0[m * g_in + c] * geo[(b * g_in + c) * grid + p];
        y0[m] = leaky(bn0.apply(m, s), slope);
      }
      for (std::size_t m = 0; m < mid; ++m) {
        double s = 0.0;
        for (std::size_t q = 0; q < mid; ++q) s += wm[m * mid + q] * y0[q];
        y1[m] = leaky(bnm.apply(m, s), slope);
      }
      for (std::size_t ci = 0; ci < ci_n; ++ci) f[ci] = feat[(b * ci_n + ci) * grid + p];
      for (std::size_t co = 0; co < co_n; ++co) {
        double acc = 0.0;
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t ci = 0; ci < ci_n; ++ci) {
            const std::size_t ch = (co * ci_n + ci) * heads + h;
            double w = b1[ch];
            for (std::size_t m = 0; m < mid; ++m) w += w1[ch * mid + m] * y1[m];
            acc += w * f[ci];
          }
        }
        double identity = 0.0;
        if (cfg.residual) {
          if (layer.proj) {
            double s = 0.0;
            for (std::size_t ci = 0; ci < ci_n; ++ci) s += wp[co * ci_n + ci] * f[ci];
            identity = bnp.apply(co, s);
          } else {
            identity = f[co];
          }
        }
        out[(b * co_n + co) * grid + p] = leaky(bno.apply(co, acc + identity), slope);
      }
    }
  }
  return out;
}

}  // namespace testing_support
