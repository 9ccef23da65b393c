#include "makgcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "makgcn/errors.hpp"
#include "makgcn/kernels.hpp"

namespace makgcn {

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

template <typename T>
void require_defined(const Tensor<T>& t, const char* op, const char* what) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined " + what);
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

}  // namespace

// ---------------------------------------------------------------- matmul

template <typename T>
Tensor<T> matmul_batched(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "matmul_batched", "lhs");
  require_defined(b, "matmul_batched", "rhs");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul_batched: cannot multiply " + shape_str(sa) + " by " +
                          shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();
  const std::size_t m = sa[sa.size() - 2], p = sa.back(), n = sb.back();
  if (sb[sb.size() - 2] != p) throw mismatch();

  const std::size_t la = sa.size() - 2, lb = sb.size() - 2;
  const std::size_t lead = std::max(la, lb);
  Shape out_lead(lead);
  for (std::size_t i = 0; i < lead; ++i) {
    const std::size_t ea = i + la >= lead ? sa[i + la - lead] : 1;
    const std::size_t eb = i + lb >= lead ? sb[i + lb - lead] : 1;
    if (ea != eb && ea != 1 && eb != 1) throw mismatch();
    out_lead[i] = std::max(ea, eb);
  }
  const std::size_t batches = shape_numel(out_lead);
  // Matrix offsets of each output batch into a and b.
  std::vector<std::size_t> off_a(batches), off_b(batches);
  for (std::size_t bi = 0; bi < batches; ++bi) {
    std::size_t rem = bi, oa = 0, ob = 0, stride_a = 1, stride_b = 1;
    for (std::size_t i = lead; i-- > 0;) {
      const std::size_t coord = rem % out_lead[i];
      rem /= out_lead[i];
      if (i + la >= lead) {
        const std::size_t ea = sa[i + la - lead];
        oa += (ea == 1 ? 0 : coord) * stride_a;
        stride_a *= ea;
      }
      if (i + lb >= lead) {
        const std::size_t eb = sb[i + lb - lead];
        ob += (eb == 1 ? 0 : coord) * stride_b;
        stride_b *= eb;
      }
    }
    off_a[bi] = oa * m * p;
    off_b[bi] = ob * p * n;
  }

  std::vector<T> out(batches * m * n);
  for (std::size_t bi = 0; bi < batches; ++bi) {
    kernels::gemm<T>(false, false, m, n, p, a.data().data() + off_a[bi],
                     b.data().data() + off_b[bi], T(0), out.data() + bi * m * n);
  }
  Shape shape = out_lead;
  shape.push_back(m);
  shape.push_back(n);
  ImplPtr<T> ia = a.impl(), ib = b.impl();
  return detail::make_result<T>(
      std::move(shape), std::move(out), {&a, &b}, "matmul_batched",
      [ia, ib, off_a, off_b, m, n, p](detail::TensorImpl<T>& o) {
        for (std::size_t bi = 0; bi < off_a.size(); ++bi) {
          const T* g = o.grad.data() + bi * m * n;
          if (detail::wants_grad(ia)) {
            ia->ensure_grad();
            kernels::gemm<T>(false, true, m, p, n, g, ib->data.data() + off_b[bi], T(1),
                             ia->grad.data() + off_a[bi]);
          }
          if (detail::wants_grad(ib)) {
            ib->ensure_grad();
            kernels::gemm<T>(true, false, p, n, m, ia->data.data() + off_a[bi], g, T(1),
                             ib->grad.data() + off_b[bi]);
          }
        }
      });
}

// ---------------------------------------------------------------- linear

template <typename T>
Tensor<T> pointwise_linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_defined(input, "pointwise_linear", "input");
  require_defined(weight, "pointwise_linear", "weight");
  const Shape& s = input.shape();
  if (s.size() < 2 || weight.rank() != 2 || weight.dim(1) != s[1]) {
    throw DimensionError("pointwise_linear: weight " + shape_str(weight.shape()) +
                         " does not match input " + shape_str(s));
  }
  const std::size_t batch = s[0], c_in = s[1], c_out = weight.dim(0);
  const std::size_t m = prod(s, 2, s.size());
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw DimensionError("pointwise_linear: bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(c_out) + " output channels");
  }
  std::vector<T> out(batch * c_out * m);
  kernels::linear_forward<T>(batch, c_in, c_out, m, input.data().data(), weight.data().data(),
                             bias.defined() ? bias.data().data() : nullptr, out.data());
  Shape shape = s;
  shape[1] = c_out;
  ImplPtr<T> ix = input.impl(), iw = weight.impl(), ibias = bias.impl();
  return detail::make_result<T>(
      std::move(shape), std::move(out), {&input, &weight, &bias}, "pointwise_linear",
      [ix, iw, ibias, batch, c_in, c_out, m](detail::TensorImpl<T>& o) {
        if (detail::wants_grad(ix)) {
          ix->ensure_grad();
          kernels::linear_backward_input<T>(batch, c_in, c_out, m, o.grad.data(), iw->data.data(),
                                            ix->grad.data());
        }
        const bool gw = detail::wants_grad(iw);
        const bool gb = detail::wants_grad(ibias);
        if (gw || gb) {
          std::vector<T> scratch;
          T* w_grad = nullptr;
          if (gw) {
            iw->ensure_grad();
            w_grad = iw->grad.data();
          } else {
            scratch.assign(c_out * c_in, T(0));
            w_grad = scratch.data();
          }
          T* b_grad = nullptr;
          if (gb) {
            ibias->ensure_grad();
            b_grad = ibias->grad.data();
          }
          kernels::linear_backward_params<T>(batch, c_in, c_out, m, o.grad.data(),
                                             ix->data.data(), w_grad, b_grad);
        }
      });
}

// ---------------------------------------------------------------- batch norm

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode, double momentum,
                     double epsilon) {
  require_defined(input, "batch_norm", "input");
  const Shape& s = input.shape();
  if (s.size() < 2) throw DimensionError("batch_norm: input " + shape_str(s) + " has no channel axis");
  const std::size_t batch = s[0], channels = s[1], m = prod(s, 2, s.size());
  for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (!t->defined() || t->rank() != 1 || t->dim(0) != channels) {
      throw DimensionError("batch_norm: per-channel tensors must have shape (" +
                           std::to_string(channels) + ")");
    }
  }
  if (!(epsilon > 0)) throw InvalidInputError("batch_norm: epsilon must be positive");
  const std::size_t count = batch * m;
  if (mode == Mode::train && count == 0) throw InvalidInputError("batch_norm: empty batch in train mode");

  const T* x = input.data().data();
  std::vector<T> mean(channels), invstd(channels);
  if (mode == Mode::train) {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* xr = x + (b * channels + c) * m;
        for (std::size_t i = 0; i < m; ++i) acc += xr[i];
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* xr = x + (b * channels + c) * m;
        for (std::size_t i = 0; i < m; ++i) {
          const double dlt = xr[i] - mu;
          sq += dlt * dlt;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + epsilon));
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      rm[c] = static_cast<T>((1.0 - momentum) * rm[c] + momentum * mu);
      rv[c] = static_cast<T>((1.0 - momentum) * rv[c] + momentum * unbiased);
    }
  } else {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = rm[c];
      invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) + epsilon));
    }
  }

  const T* g = gamma.data().data();
  const T* bt = beta.data().data();
  std::vector<T> xhat(input.numel()), out(input.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * m;
      for (std::size_t i = 0; i < m; ++i) {
        const T h = (x[base + i] - mean[c]) * invstd[c];
        xhat[base + i] = h;
        out[base + i] = g[c] * h + bt[c];
      }
    }
  }

  ImplPtr<T> ix = input.impl(), ig = gamma.impl(), ib = beta.impl();
  const bool train = mode == Mode::train;
  return detail::make_result<T>(
      s, std::move(out), {&input, &gamma, &beta}, "batch_norm",
      [ix, ig, ib, xhat = std::move(xhat), invstd = std::move(invstd), batch, channels, m, count,
       train](detail::TensorImpl<T>& o) {
        const T* go = o.grad.data();
        std::vector<T> sum_g(channels, T(0)), sum_gx(channels, T(0));
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * m;
            T sg = 0, sgx = 0;
            for (std::size_t i = 0; i < m; ++i) {
              sg += go[base + i];
              sgx += go[base + i] * xhat[base + i];
            }
            sum_g[c] += sg;
            sum_gx[c] += sgx;
          }
        }
        if (detail::wants_grad(ig)) {
          ig->ensure_grad();
          for (std::size_t c = 0; c < channels; ++c) ig->grad[c] += sum_gx[c];
        }
        if (detail::wants_grad(ib)) {
          ib->ensure_grad();
          for (std::size_t c = 0; c < channels; ++c) ib->grad[c] += sum_g[c];
        }
        if (!detail::wants_grad(ix)) return;
        ix->ensure_grad();
        const T* gm = ig->data.data();
        const T inv_n = T(1) / static_cast<T>(count);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * m;
            const T k = gm[c] * invstd[c];
            for (std::size_t i = 0; i < m; ++i) {
              if (train) {
                ix->grad[base + i] +=
                    k * (go[base + i] - inv_n * sum_g[c] - inv_n * xhat[base + i] * sum_gx[c]);
              } else {
                ix->grad[base + i] += k * go[base + i];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------- activation

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, double slope) {
  require_defined(input, "leaky_relu", "input");
  if (!(slope >= 0.0 && slope < 1.0)) throw InvalidInputError("leaky_relu: slope must lie in [0, 1)");
  const T a = static_cast<T>(slope);
  std::vector<T> out(input.numel());
  const T* x = input.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= T(0) ? x[i] : a * x[i];
  ImplPtr<T> ix = input.impl();
  return detail::make_result<T>(input.shape(), std::move(out), {&input}, "leaky_relu",
                                [ix, a](detail::TensorImpl<T>& o) {
                                  ix->ensure_grad();
                                  const T* xv = ix->data.data();
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                    ix->grad[i] += xv[i] >= T(0) ? o.grad[i] : a * o.grad[i];
                                  }
                                });
}

// ---------------------------------------------------------------- reductions

template <typename T>
MaxReduction<T> reduce_max(const Tensor<T>& input, std::size_t axis) {
  require_defined(input, "reduce", "input");
  const Shape& s = input.shape();
  if (axis >= s.size()) {
    throw InvalidInputError("reduce: axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  const std::size_t outer = prod(s, 0, axis), extent = s[axis], inner = prod(s, axis + 1, s.size());
  if (extent == 0) throw InvalidInputError("reduce: empty axis");
  std::vector<T> out(outer * inner);
  std::vector<std::size_t> arg(outer * inner);
  kernels::max_reduce<T>(outer, extent, inner, input.data().data(), out.data(), arg.data());
  Shape shape = s;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape.push_back(1);
  ImplPtr<T> ix = input.impl();
  MaxReduction<T> r;
  r.values = detail::make_result<T>(std::move(shape), std::move(out), {&input}, "reduce_max",
                                    [ix, arg, extent, inner](detail::TensorImpl<T>& o) {
                                      ix->ensure_grad();
                                      for (std::size_t q = 0; q < arg.size(); ++q) {
                                        const std::size_t oo = q / inner, i = q % inner;
                                        ix->grad[(oo * extent + arg[q]) * inner + i] += o.grad[q];
                                      }
                                    });
  r.argmax = std::move(arg);
  return r;
}

template <typename T>
Tensor<T> reduce(const Tensor<T>& input, std::size_t axis, ReduceKind kind) {
  if (kind == ReduceKind::max) return reduce_max(input, axis).values;
  require_defined(input, "reduce", "input");
  const Shape& s = input.shape();
  if (axis >= s.size()) {
    throw InvalidInputError("reduce: axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  const std::size_t outer = prod(s, 0, axis), extent = s[axis], inner = prod(s, axis + 1, s.size());
  if (extent == 0) throw InvalidInputError("reduce: empty axis");
  std::vector<T> out(outer * inner, T(0));
  const T* x = input.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t e = 0; e < extent; ++e) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * extent + e) * inner + i];
    }
  }
  const T inv = kind == ReduceKind::mean ? T(1) / static_cast<T>(extent) : T(1);
  if (kind == ReduceKind::mean) {
    for (auto& v : out) v *= inv;
  }
  Shape shape = s;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape.push_back(1);
  ImplPtr<T> ix = input.impl();
  return detail::make_result<T>(std::move(shape), std::move(out), {&input}, kind == ReduceKind::mean ? "reduce_mean" : "reduce_sum",
                                [ix, outer, extent, inner, inv](detail::TensorImpl<T>& o) {
                                  ix->ensure_grad();
                                  for (std::size_t oo = 0; oo < outer; ++oo) {
                                    for (std::size_t e = 0; e < extent; ++e) {
                                      for (std::size_t i = 0; i < inner; ++i) {
                                        ix->grad[(oo * extent + e) * inner + i] +=
                                            o.grad[oo * inner + i] * inv;
                                      }
                                    }
                                  }
                                });
}

// ---------------------------------------------------------------- loss

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_defined(logits, "softmax_cross_entropy", "logits");
  if (logits.rank() != 2) {
    throw DimensionError("softmax_cross_entropy: logits must be (B, classes), got " +
                         shape_str(logits.shape()));
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(batch));
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw InvalidInputError("softmax_cross_entropy: label " + std::to_string(l) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const T* z = logits.data().data();
  std::vector<T> probs(batch * classes);
  double total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = z + b * classes;
    const T mx = *std::max_element(row, row + classes);
    double denom = 0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = static_cast<T>(std::exp(static_cast<double>(row[c] - mx) - log_denom));
    }
    total += log_denom - static_cast<double>(row[labels[b]] - mx);
  }
  const T loss = static_cast<T>(total / static_cast<double>(batch));
  ImplPtr<T> iz = logits.impl();
  std::vector<int> lab(labels.begin(), labels.end());
  return detail::make_result<T>(Shape{1}, {loss}, {&logits}, "softmax_cross_entropy",
                                [iz, probs = std::move(probs), lab = std::move(lab), batch,
                                 classes](detail::TensorImpl<T>& o) {
                                  iz->ensure_grad();
                                  const T g = o.grad[0] / static_cast<T>(batch);
                                  for (std::size_t b = 0; b < batch; ++b) {
                                    for (std::size_t c = 0; c < classes; ++c) {
                                      T d = probs[b * classes + c];
                                      if (static_cast<int>(c) == lab[b]) d -= T(1);
                                      iz->grad[b * classes + c] += g * d;
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax: logits must be (B, classes)");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<T> out(batch * classes);
  const T* z = logits.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = z + b * classes;
    const T mx = *std::max_element(row, row + classes);
    double denom = 0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
    for (std::size_t c = 0; c < classes; ++c) {
      out[b * classes + c] = static_cast<T>(std::exp(static_cast<double>(row[c] - mx)) / denom);
    }
  }
  return Tensor<T>(logits.shape(), std::move(out));
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  ImplPtr<T> ia = a.impl(), ib = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "add",
                                [ia, ib](detail::TensorImpl<T>& o) {
                                  for (const auto& in : {ia, ib}) {
                                    if (!detail::wants_grad(in)) continue;
                                    in->ensure_grad();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i) in->grad[i] += o.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  ImplPtr<T> ia = a.impl(), ib = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "mul",
                                [ia, ib](detail::TensorImpl<T>& o) {
                                  if (detail::wants_grad(ia)) {
                                    ia->ensure_grad();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i) ia->grad[i] += o.grad[i] * ib->data[i];
                                  }
                                  if (detail::wants_grad(ib)) {
                                    ib->ensure_grad();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i) ib->grad[i] += o.grad[i] * ia->data[i];
                                  }
                                });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor) {
  const T f = static_cast<T>(factor);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * f;
  ImplPtr<T> ia = a.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a}, "scale",
                                [ia, f](detail::TensorImpl<T>& o) {
                                  ia->ensure_grad();
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) ia->grad[i] += o.grad[i] * f;
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  ImplPtr<T> ia = a.impl();
  return detail::make_result<T>(Shape{1}, {total}, {&a}, "sum", [ia](detail::TensorImpl<T>& o) {
    ia->ensure_grad();
    for (auto& g : ia->grad) g += o.grad[0];
  });
}

// ---------------------------------------------------------------- layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  ImplPtr<T> ia = a.impl();
  return detail::make_result<T>(std::move(shape), a.storage(), {&a}, "reshape",
                                [ia](detail::TensorImpl<T>& o) {
                                  ia->ensure_grad();
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) ia->grad[i] += o.grad[i];
                                });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  const Shape& s = a.shape();
  if (perm.size() != s.size()) throw DimensionError("permute: rank mismatch for " + shape_str(s));
  std::vector<bool> used(perm.size(), false);
  for (auto p : perm) {
    if (p >= perm.size() || used[p]) throw InvalidInputError("permute: not a permutation");
    used[p] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[perm[i]];
  const auto in_strides = row_major_strides(s);
  // Source offset of every destination element.
  std::vector<std::size_t> src(a.numel());
  {
    std::vector<std::size_t> coord(s.size(), 0);
    std::size_t off = 0;
    for (std::size_t q = 0; q < src.size(); ++q) {
      src[q] = off;
      for (std::size_t i = s.size(); i-- > 0;) {
        ++coord[i];
        off += in_strides[perm[i]];
        if (coord[i] < out_shape[i]) break;
        off -= in_strides[perm[i]] * out_shape[i];
        coord[i] = 0;
      }
    }
  }
  std::vector<T> out(a.numel());
  for (std::size_t q = 0; q < out.size(); ++q) out[q] = a.data()[src[q]];
  ImplPtr<T> ia = a.impl();
  return detail::make_result<T>(std::move(out_shape), std::move(out), {&a}, "permute",
                                [ia, src = std::move(src)](detail::TensorImpl<T>& o) {
                                  ia->ensure_grad();
                                  for (std::size_t q = 0; q < src.size(); ++q) ia->grad[src[q]] += o.grad[q];
                                });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidInputError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw InvalidInputError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
    total += s[axis];
  }
  const std::size_t outer = prod(s0, 0, axis), inner = prod(s0, axis + 1, s0.size());
  Shape shape = s0;
  shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::vector<std::size_t> widths;
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    widths.push_back(w);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * w, w, out.data() + o * total * inner + col);
    }
    col += w;
  }
  std::vector<const Tensor<T>*> inputs;
  std::vector<ImplPtr<T>> impls;
  for (const auto& p : parts) {
    inputs.push_back(&p);
    impls.push_back(p.impl());
  }
  const std::size_t row = total * inner;
  return detail::make_result<T>(std::move(shape), std::move(out), inputs, "concat",
                                [impls, widths, outer, row](detail::TensorImpl<T>& o) {
                                  std::size_t c0 = 0;
                                  for (std::size_t k = 0; k < impls.size(); ++k) {
                                    const std::size_t w = widths[k];
                                    if (detail::wants_grad(impls[k])) {
                                      impls[k]->ensure_grad();
                                      for (std::size_t oo = 0; oo < outer; ++oo) {
                                        for (std::size_t i = 0; i < w; ++i) {
                                          impls[k]->grad[oo * w + i] += o.grad[oo * row + c0 + i];
                                        }
                                      }
                                    }
                                    c0 += w;
                                  }
                                });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw InvalidInputError("dropout: p must lie in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return input;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(input.numel());
  for (auto& v : mask) v = rng.uniform(0.0, 1.0) >= p ? keep_scale : T(0);
  std::vector<T> out(input.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.data()[i] * mask[i];
  ImplPtr<T> ix = input.impl();
  return detail::make_result<T>(input.shape(), std::move(out), {&input}, "dropout",
                                [ix, mask = std::move(mask)](detail::TensorImpl<T>& o) {
                                  ix->ensure_grad();
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) ix->grad[i] += o.grad[i] * mask[i];
                                });
}

#define MAKGCN_INSTANTIATE(T)                                                                      \
  template Tensor<T> matmul_batched(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> pointwise_linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,  \
                                Tensor<T>&, Mode, double, double);                                 \
  template Tensor<T> leaky_relu(const Tensor<T>&, double);                                         \
  template MaxReduction<T> reduce_max(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> reduce(const Tensor<T>&, std::size_t, ReduceKind);                            \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);                \
  template Tensor<T> softmax(const Tensor<T>&);                                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> scale(const Tensor<T>&, double);                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                   \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                           \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, Rng&);

MAKGCN_INSTANTIATE(float)
MAKGCN_INSTANTIATE(double)

#undef MAKGCN_INSTANTIATE

}  // namespace makgcn
