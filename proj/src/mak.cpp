#include "makgcn/mak.hpp"

#include <string>

#include "makgcn/errors.hpp"
#include "makgcn/kernels.hpp"

namespace makgcn {

void MakConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels", "must be >= 1");
  if (out_channels < 1) throw ConfigError("out_channels", "must be >= 1");
  if (gen_in_channels < 1) throw ConfigError("gen_in_channels", "must be >= 1");
  if (num_heads < 1) throw ConfigError("num_heads", "must be >= 1");
  if (mid_channels < 1) throw ConfigError("mid_channels", "must be >= 1");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope", "must lie in [0, 1)");
}

template <typename T>
Tensor<T> apply_heads(const DynamicKernelBank<T>& bank, const Tensor<T>& x) {
  const Tensor<T>& w = bank.weights;
  if (!w.defined() || w.rank() != 6) throw DimensionError("apply_heads: bank must be rank 6");
  if (w.dim(5) == 0) throw ConfigError("num_heads", "must be >= 1");
  if (x.rank() != 4 || x.dim(0) != w.dim(0) || x.dim(1) != w.dim(4) || x.dim(2) != w.dim(1) ||
      x.dim(3) != w.dim(2)) {
    throw DimensionError("apply_heads: bank " + shape_str(w.shape()) + " does not fit input " +
                         shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), c_in = x.dim(1), n = x.dim(2), k = x.dim(3);
  const std::size_t c_out = w.dim(3);
  // (B, N, k, H, C_out, C_in) . (B, N, k, 1, C_in, 1) -> (B, N, k, H, C_out, 1)
  const Tensor<T> per_head = permute(w, {0, 1, 2, 5, 3, 4});
  const Tensor<T> xp = reshape(permute(x, {0, 2, 3, 1}), Shape{batch, n, k, 1, c_in, 1});
  const Tensor<T> filtered = matmul_batched(per_head, xp);
  const Tensor<T> summed = reduce(filtered, 3, ReduceKind::sum);
  return permute(reshape(summed, Shape{batch, n, k, c_out}), {0, 3, 1, 2});
}

template <typename T>
Tensor<T> dynamic_filter(const Tensor<T>& y1, const Tensor<T>& x, const Tensor<T>& w1,
                         const Tensor<T>& b1, std::size_t out_channels, std::size_t heads) {
  if (heads == 0) throw ConfigError("num_heads", "must be >= 1");
  if (y1.rank() != 4 || x.rank() != 4 || y1.dim(0) != x.dim(0) || y1.dim(2) != x.dim(2) ||
      y1.dim(3) != x.dim(3)) {
    throw DimensionError("dynamic_filter: generator features " + shape_str(y1.shape()) +
                         " do not align with input " + shape_str(x.shape()));
  }
  kernels::DynamicFilterDims d;
  d.batch = x.dim(0);
  d.positions = x.dim(2) * x.dim(3);
  d.mid = y1.dim(1);
  d.c_in = x.dim(1);
  d.c_out = out_channels;
  d.heads = heads;
  if (w1.rank() != 2 || w1.dim(0) != d.kernel_channels() || w1.dim(1) != d.mid) {
    throw DimensionError("dynamic_filter: generator weight " + shape_str(w1.shape()) +
                         " expected (" + std::to_string(d.kernel_channels()) + ", " +
                         std::to_string(d.mid) + ")");
  }
  if (b1.defined() && (b1.rank() != 1 || b1.dim(0) != d.kernel_channels())) {
    throw DimensionError("dynamic_filter: generator bias " + shape_str(b1.shape()));
  }
  std::vector<T> out(d.batch * d.c_out * d.positions);
  kernels::dynamic_filter_forward<T>(d, y1.data().data(), x.data().data(), w1.data().data(),
                                     b1.defined() ? b1.data().data() : nullptr, out.data());
  auto iy = y1.impl(), ix = x.impl(), iw = w1.impl(), ib = b1.impl();
  return detail::make_result<T>(
      Shape{d.batch, d.c_out, x.dim(2), x.dim(3)}, std::move(out), {&y1, &x, &w1, &b1},
      "dynamic_filter", [iy, ix, iw, ib, d](detail::TensorImpl<T>& o) {
        auto grad_of = [](const std::shared_ptr<detail::TensorImpl<T>>& impl) -> T* {
          if (!detail::wants_grad(impl)) return nullptr;
          impl->ensure_grad();
          return impl->grad.data();
        };
        kernels::dynamic_filter_backward<T>(d, iy->data.data(), ix->data.data(), iw->data.data(),
                                            ib ? ib->data.data() : nullptr, o.grad.data(),
                                            grad_of(iy), grad_of(ix), grad_of(iw), grad_of(ib));
      });
}

template <typename T>
MakLayer<T>::MakLayer(std::string name, const MakConfig& config, Rng& rng)
    : name_(std::move(name)), config_(config) {
  config_.validate();
  const std::string gen = name_ + ".gen";
  conv0 = Linear<T>(gen + ".conv0", config_.gen_in_channels, config_.mid_channels, false, rng);
  bn0 = BatchNorm<T>(gen + ".bn0", config_.mid_channels);
  conv_mid = Linear<T>(gen + ".conv_mid", config_.mid_channels, config_.mid_channels, false, rng);
  bn_mid = BatchNorm<T>(gen + ".bn_mid", config_.mid_channels);
  conv1 = Linear<T>(gen + ".conv1", config_.mid_channels, config_.kernel_channels(), true, rng);
  if (config_.projects_residual()) {
    proj = Linear<T>(name_ + ".proj", config_.in_channels, config_.out_channels, false, rng);
    bn_proj = BatchNorm<T>(name_ + ".bn_proj", config_.out_channels);
  }
  bn_out = BatchNorm<T>(name_ + ".bn_out", config_.out_channels);
}

template <typename T>
Tensor<T> MakLayer<T>::generator_hidden(const Tensor<T>& geo, Mode mode) {
  if (geo.rank() != 4 || geo.dim(1) != config_.gen_in_channels) {
    throw DimensionError(name_ + ": geometric input " + shape_str(geo.shape()) + " expected " +
                         std::to_string(config_.gen_in_channels) + " channels");
  }
  const double slope = config_.leaky_slope;
  const Tensor<T> y0 = leaky_relu(bn0(conv0(geo), mode), slope);
  return leaky_relu(bn_mid(conv_mid(y0), mode), slope);
}

template <typename T>
DynamicKernelBank<T> MakLayer<T>::generate_kernels(const Tensor<T>& geo, Mode mode) {
  const Tensor<T> w = conv1(generator_hidden(geo, mode));
  const std::size_t batch = geo.dim(0), n = geo.dim(2), k = geo.dim(3);
  // Channel index is ((co * C_in) + ci) * H + h.
  const Tensor<T> split = reshape(
      w, Shape{batch, config_.out_channels, config_.in_channels, config_.num_heads, n, k});
  return {permute(split, {0, 4, 5, 1, 2, 3})};
}

template <typename T>
Tensor<T> MakLayer<T>::forward(const Tensor<T>& geo, const Tensor<T>& feat, Mode mode,
                               KernelPath path) {
  if (feat.rank() != 4 || feat.dim(1) != config_.in_channels) {
    throw DimensionError(name_ + ": feature input " + shape_str(feat.shape()) + " expected " +
                         std::to_string(config_.in_channels) + " channels");
  }
  if (geo.rank() != 4 || geo.dim(0) != feat.dim(0) || geo.dim(2) != feat.dim(2) ||
      geo.dim(3) != feat.dim(3)) {
    throw DimensionError(name_ + ": geometric input " + shape_str(geo.shape()) +
                         " does not align with features " + shape_str(feat.shape()));
  }
  Tensor<T> out;
  if (path == KernelPath::fused) {
    out = dynamic_filter(generator_hidden(geo, mode), feat, conv1.weight.value, conv1.bias.value,
                         config_.out_channels, config_.num_heads);
  } else {
    out = apply_heads(generate_kernels(geo, mode), feat);
  }
  if (config_.residual) {
    const Tensor<T> identity = config_.projects_residual() ? (*bn_proj)((*proj)(feat), mode) : feat;
    out = add(out, identity);
  }
  return leaky_relu(bn_out(out, mode), config_.leaky_slope);
}

template <typename T>
void MakLayer<T>::collect(StateRefs<T>& refs) {
  conv0.collect(refs);
  bn0.collect(refs);
  conv_mid.collect(refs);
  bn_mid.collect(refs);
  conv1.collect(refs);
  if (proj) {
    proj->collect(refs);
    bn_proj->collect(refs);
  }
  bn_out.collect(refs);
}

template class MakLayer<float>;
template class MakLayer<double>;
template Tensor<float> apply_heads(const DynamicKernelBank<float>&, const Tensor<float>&);
template Tensor<double> apply_heads(const DynamicKernelBank<double>&, const Tensor<double>&);
template Tensor<float> dynamic_filter(const Tensor<float>&, const Tensor<float>&,
                                      const Tensor<float>&, const Tensor<float>&, std::size_t,
                                      std::size_t);
template Tensor<double> dynamic_filter(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, const Tensor<double>&, std::size_t,
                                       std::size_t);

}  // namespace makgcn
