#include "makgcn/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <numeric>
#include <vector>

namespace makgcn::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using ColMap = Eigen::Map<ColMat<T>>;
template <typename T>
using ConstColMap = Eigen::Map<const ColMat<T>>;
template <typename T>
using StridedColMap = Eigen::Map<ColMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedColMap = Eigen::Map<const ColMat<T>, 0, Eigen::OuterStride<>>;

using Index = Eigen::Index;

inline Index ix(std::size_t v) { return static_cast<Index>(v); }

// Position chunk for the fused dynamic filter, sized so one chunk of generated
// kernels stays around 16 MiB.
std::size_t filter_chunk(std::size_t kernel_channels, std::size_t positions) {
  const std::size_t budget = std::size_t{1} << 22;
  return std::clamp<std::size_t>(budget / std::max<std::size_t>(kernel_channels, 1), 64, positions);
}

// Sum generator weights over heads: the final stage is affine, so
// sum_h W_h y + b_h == (sum_h W_h) y + sum_h b_h.
template <typename T>
void sum_heads(const DynamicFilterDims& d, const T* w1, const T* b1, std::vector<T>& wsum,
               std::vector<T>& bsum) {
  const std::size_t cc = d.c_out * d.c_in;
  wsum.assign(cc * d.mid, T(0));
  bsum.assign(cc, T(0));
  for (std::size_t c = 0; c < cc; ++c) {
    for (std::size_t h = 0; h < d.heads; ++h) {
      const std::size_t ch = c * d.heads + h;
      for (std::size_t m = 0; m < d.mid; ++m) wsum[c * d.mid + m] += w1[ch * d.mid + m];
      if (b1) bsum[c] += b1[ch];
    }
  }
}

// kernels (len x cc, column-major) for positions [p0, p0 + len) of sample b.
template <typename T>
void build_kernels(const DynamicFilterDims& d, const T* y1_b, std::size_t p0, std::size_t len,
                   const std::vector<T>& wsum, const std::vector<T>& bsum, ColMat<T>& kern) {
  const std::size_t cc = d.c_out * d.c_in;
  ConstStridedColMap<T> y(y1_b + p0, ix(len), ix(d.mid), Eigen::OuterStride<>(ix(d.positions)));
  ConstColMap<T> wsum_t(wsum.data(), ix(d.mid), ix(cc));
  kern.resize(ix(len), ix(cc));
  kern.noalias() = y * wsum_t;
  for (std::size_t c = 0; c < cc; ++c) kern.col(ix(c)).array() += bsum[c];
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t p, const T* a,
          const T* b, T beta, T* c) {
  RowMap<T> cm(c, ix(m), ix(n));
  if (beta == T(0)) {
    cm.setZero();
  } else if (beta != T(1)) {
    cm *= beta;
  }
  if (!trans_a && !trans_b) {
    cm.noalias() += ConstRowMap<T>(a, ix(m), ix(p)) * ConstRowMap<T>(b, ix(p), ix(n));
  } else if (trans_a && !trans_b) {
    cm.noalias() += ConstRowMap<T>(a, ix(p), ix(m)).transpose() * ConstRowMap<T>(b, ix(p), ix(n));
  } else if (!trans_a && trans_b) {
    cm.noalias() += ConstRowMap<T>(a, ix(m), ix(p)) * ConstRowMap<T>(b, ix(n), ix(p)).transpose();
  } else {
    cm.noalias() +=
        ConstRowMap<T>(a, ix(p), ix(m)).transpose() * ConstRowMap<T>(b, ix(n), ix(p)).transpose();
  }
}

template <typename T>
void linear_forward(std::size_t batch, std::size_t c_in, std::size_t c_out, std::size_t m,
                    const T* x, const T* w, const T* bias, T* out) {
  ConstRowMap<T> wm(w, ix(c_out), ix(c_in));
  if (m == 1) {
    // Dense layer on (batch, c_in): one product instead of batch matvecs.
    RowMap<T> om(out, ix(batch), ix(c_out));
    om.noalias() = ConstRowMap<T>(x, ix(batch), ix(c_in)) * wm.transpose();
    if (bias) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < c_out; ++o) out[b * c_out + o] += bias[o];
      }
    }
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    RowMap<T> om(out + b * c_out * m, ix(c_out), ix(m));
    om.noalias() = wm * ConstRowMap<T>(x + b * c_in * m, ix(c_in), ix(m));
    if (bias) {
      for (std::size_t o = 0; o < c_out; ++o) om.row(ix(o)).array() += bias[o];
    }
  }
}

template <typename T>
void linear_backward_input(std::size_t batch, std::size_t c_in, std::size_t c_out, std::size_t m,
                           const T* g, const T* w, T* gx) {
  ConstRowMap<T> wm(w, ix(c_out), ix(c_in));
  if (m == 1) {
    RowMap<T>(gx, ix(batch), ix(c_in)).noalias() += ConstRowMap<T>(g, ix(batch), ix(c_out)) * wm;
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    RowMap<T>(gx + b * c_in * m, ix(c_in), ix(m)).noalias() +=
        wm.transpose() * ConstRowMap<T>(g + b * c_out * m, ix(c_out), ix(m));
  }
}

template <typename T>
void linear_backward_params(std::size_t batch, std::size_t c_in, std::size_t c_out,
                            std::size_t m, const T* g, const T* x, T* gw, T* gbias) {
  if (m == 1) {
    RowMap<T>(gw, ix(c_out), ix(c_in)).noalias() +=
        ConstRowMap<T>(g, ix(batch), ix(c_out)).transpose() * ConstRowMap<T>(x, ix(batch), ix(c_in));
    if (gbias) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < c_out; ++o) gbias[o] += g[b * c_out + o];
      }
    }
    return;
  }
  // Output rows are split across threads; each thread walks the batch in order.
  constexpr std::size_t kRowBlock = 16;
  const std::size_t blocks = (c_out + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bk = 0; bk < static_cast<std::ptrdiff_t>(blocks); ++bk) {
    const std::size_t r0 = static_cast<std::size_t>(bk) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, c_out - r0);
    RowMap<T> gwm(gw + r0 * c_in, ix(rows), ix(c_in));
    for (std::size_t b = 0; b < batch; ++b) {
      ConstRowMap<T> gm(g + (b * c_out + r0) * m, ix(rows), ix(m));
      gwm.noalias() += gm * ConstRowMap<T>(x + b * c_in * m, ix(c_in), ix(m)).transpose();
      if (gbias) {
        for (std::size_t r = 0; r < rows; ++r) gbias[r0 + r] += gm.row(ix(r)).sum();
      }
    }
  }
}

template <typename T>
void pairwise_similarity(std::size_t batch, std::size_t channels, std::size_t n, const T* x,
                         T* sim) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    ConstRowMap<T> xb(x + b * channels * n, ix(channels), ix(n));
    RowMap<T> sb(sim + b * n * n, ix(n), ix(n));
    // sb = -S - (-2 X^T X) - S^T, then clamped to be a negated non-negative distance.
    sb.noalias() = xb.transpose() * xb;
    const Eigen::Matrix<T, Eigen::Dynamic, 1> norms = xb.colwise().squaredNorm().transpose();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const T d = norms(ix(i)) + norms(ix(j)) - T(2) * sb(ix(i), ix(j));
        sb(ix(i), ix(j)) = -std::max(d, T(0));
      }
    }
  }
}

template <typename T>
void topk_rows(std::size_t batch, std::size_t n, std::size_t k, const T* sim, std::int64_t* idx) {
  const std::size_t rows = batch * n;
#pragma omp parallel
  {
    std::vector<std::int64_t> order(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t ri = 0; ri < static_cast<std::ptrdiff_t>(rows); ++ri) {
      const auto row = static_cast<std::size_t>(ri);
      const T* r = sim + row * n;
      std::iota(order.begin(), order.end(), 0);
      auto by_similarity = [r](std::int64_t a, std::int64_t b) {
        return r[a] > r[b] || (r[a] == r[b] && a < b);
      };
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        by_similarity);
      std::copy_n(order.begin(), k, idx + row * k);
    }
  }
}

template <typename T>
void gather_edge_features(std::size_t batch, std::size_t channels, std::size_t n, std::size_t k,
                          const T* x, const std::int64_t* idx, T* out) {
  const std::size_t planes = batch * channels;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(planes); ++pi) {
    const std::size_t b = static_cast<std::size_t>(pi) / channels;
    const std::size_t c = static_cast<std::size_t>(pi) % channels;
    const T* xr = x + (b * channels + c) * n;
    const std::int64_t* ib = idx + b * n * k;
    T* diff = out + ((b * 2 * channels) + c) * n * k;
    T* abs = out + ((b * 2 * channels) + channels + c) * n * k;
    for (std::size_t i = 0; i < n; ++i) {
      const T xi = xr[i];
      for (std::size_t j = 0; j < k; ++j) {
        diff[i * k + j] = xr[ib[i * k + j]] - xi;
        abs[i * k + j] = xi;
      }
    }
  }
}

template <typename T>
void scatter_edge_features_grad(std::size_t batch, std::size_t channels, std::size_t n,
                                std::size_t k, const T* g, const std::int64_t* idx, T* gx) {
  const std::size_t planes = batch * channels;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(planes); ++pi) {
    const std::size_t b = static_cast<std::size_t>(pi) / channels;
    const std::size_t c = static_cast<std::size_t>(pi) % channels;
    T* gr = gx + (b * channels + c) * n;
    const std::int64_t* ib = idx + b * n * k;
    const T* gd = g + ((b * 2 * channels) + c) * n * k;
    const T* ga = g + ((b * 2 * channels) + channels + c) * n * k;
    for (std::size_t i = 0; i < n; ++i) {
      T self = 0;
      for (std::size_t j = 0; j < k; ++j) {
        gr[ib[i * k + j]] += gd[i * k + j];
        self += ga[i * k + j] - gd[i * k + j];
      }
      gr[i] += self;
    }
  }
}

template <typename T>
void max_reduce(std::size_t outer, std::size_t extent, std::size_t inner, const T* x, T* out,
                std::size_t* arg) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t oi = 0; oi < static_cast<std::ptrdiff_t>(outer); ++oi) {
    const auto o = static_cast<std::size_t>(oi);
    const T* xo = x + o * extent * inner;
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = 0;
      T best_v = xo[i];
      for (std::size_t e = 1; e < extent; ++e) {
        const T v = xo[e * inner + i];
        if (v > best_v) {
          best_v = v;
          best = e;
        }
      }
      out[o * inner + i] = best_v;
      if (arg) arg[o * inner + i] = best;
    }
  }
}

template <typename T>
void dynamic_filter_forward(const DynamicFilterDims& d, const T* y1, const T* x, const T* w1,
                            const T* b1, T* out) {
  std::vector<T> wsum, bsum;
  sum_heads(d, w1, b1, wsum, bsum);
  const std::size_t P = d.positions;
  const std::size_t chunk = filter_chunk(d.c_out * d.c_in, P);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(d.batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    ColMat<T> kern;
    const T* xb = x + b * d.c_in * P;
    T* ob = out + b * d.c_out * P;
    std::fill(ob, ob + d.c_out * P, T(0));
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const std::size_t len = std::min(chunk, P - p0);
      build_kernels(d, y1 + b * d.mid * P, p0, len, wsum, bsum, kern);
      for (std::size_t co = 0; co < d.c_out; ++co) {
        T* o = ob + co * P + p0;
        for (std::size_t ci = 0; ci < d.c_in; ++ci) {
          const T* kc = kern.data() + (co * d.c_in + ci) * len;
          const T* xc = xb + ci * P + p0;
#pragma omp simd
          for (std::size_t p = 0; p < len; ++p) o[p] += kc[p] * xc[p];
        }
      }
    }
  }
}

template <typename T>
void dynamic_filter_backward(const DynamicFilterDims& d, const T* y1, const T* x, const T* w1,
                             const T* b1, const T* g_out, T* g_y1, T* g_x, T* g_w1, T* g_b1) {
  std::vector<T> wsum, bsum;
  sum_heads(d, w1, b1, wsum, bsum);
  const std::size_t P = d.positions;
  const std::size_t cc = d.c_out * d.c_in;
  const std::size_t chunk = filter_chunk(cc, P);
  // Per-sample partial parameter gradients, reduced in sample order below.
  std::vector<T> part_w(g_w1 ? d.batch * d.mid * cc : 0, T(0));
  std::vector<T> part_b(g_b1 ? d.batch * cc : 0, T(0));
  ConstColMap<T> wsum_t(wsum.data(), ix(d.mid), ix(cc));

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(d.batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    ColMat<T> kern, gkern;
    const T* xb = x + b * d.c_in * P;
    const T* gb = g_out + b * d.c_out * P;
    const T* yb = y1 + b * d.mid * P;
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const std::size_t len = std::min(chunk, P - p0);
      if (g_x) {
        build_kernels(d, yb, p0, len, wsum, bsum, kern);
        for (std::size_t ci = 0; ci < d.c_in; ++ci) {
          T* gxc = g_x + (b * d.c_in + ci) * P + p0;
          for (std::size_t co = 0; co < d.c_out; ++co) {
            const T* kc = kern.data() + (co * d.c_in + ci) * len;
            const T* gc = gb + co * P + p0;
#pragma omp simd
            for (std::size_t p = 0; p < len; ++p) gxc[p] += kc[p] * gc[p];
          }
        }
      }
      if (!g_y1 && !g_w1 && !g_b1) continue;
      gkern.resize(ix(len), ix(cc));
      for (std::size_t co = 0; co < d.c_out; ++co) {
        const T* gc = gb + co * P + p0;
        for (std::size_t ci = 0; ci < d.c_in; ++ci) {
          T* dst = gkern.data() + (co * d.c_in + ci) * len;
          const T* xc = xb + ci * P + p0;
#pragma omp simd
          for (std::size_t p = 0; p < len; ++p) dst[p] = gc[p] * xc[p];
        }
      }
      if (g_y1) {
        StridedColMap<T> gy(g_y1 + b * d.mid * P + p0, ix(len), ix(d.mid),
                            Eigen::OuterStride<>(ix(P)));
        gy.noalias() += gkern * wsum_t.transpose();
      }
      if (g_w1) {
        ConstStridedColMap<T> y(yb + p0, ix(len), ix(d.mid), Eigen::OuterStride<>(ix(P)));
        ColMap<T> pw(part_w.data() + b * d.mid * cc, ix(d.mid), ix(cc));
        pw.noalias() += y.transpose() * gkern;
      }
      if (g_b1) {
        T* pb = part_b.data() + b * cc;
        for (std::size_t c = 0; c < cc; ++c) pb[c] += gkern.col(ix(c)).sum();
      }
    }
  }

  if (g_w1) {
    std::vector<T> gsum(d.mid * cc, T(0));
    for (std::size_t b = 0; b < d.batch; ++b) {
      const T* pw = part_w.data() + b * d.mid * cc;
      for (std::size_t i = 0; i < gsum.size(); ++i) gsum[i] += pw[i];
    }
    // gsum is (mid x cc) column-major: element (m, c) at c * mid + m.
    for (std::size_t c = 0; c < cc; ++c) {
      for (std::size_t h = 0; h < d.heads; ++h) {
        T* row = g_w1 + (c * d.heads + h) * d.mid;
        for (std::size_t m = 0; m < d.mid; ++m) row[m] += gsum[c * d.mid + m];
      }
    }
  }
  if (g_b1) {
    std::vector<T> gsum(cc, T(0));
    for (std::size_t b = 0; b < d.batch; ++b) {
      for (std::size_t c = 0; c < cc; ++c) gsum[c] += part_b[b * cc + c];
    }
    for (std::size_t c = 0; c < cc; ++c) {
      for (std::size_t h = 0; h < d.heads; ++h) g_b1[c * d.heads + h] += gsum[c];
    }
  }
}

#define MAKGCN_INSTANTIATE(T)                                                                   \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*,  \
                        T, T*);                                                                \
  template void linear_forward<T>(std::size_t, std::size_t, std::size_t, std::size_t, const T*, \
                                  const T*, const T*, T*);                                     \
  template void linear_backward_input<T>(std::size_t, std::size_t, std::size_t, std::size_t,   \
                                         const T*, const T*, T*);                              \
  template void linear_backward_params<T>(std::size_t, std::size_t, std::size_t, std::size_t,  \
                                          const T*, const T*, T*, T*);                         \
  template void pairwise_similarity<T>(std::size_t, std::size_t, std::size_t, const T*, T*);    \
  template void topk_rows<T>(std::size_t, std::size_t, std::size_t, const T*, std::int64_t*);   \
  template void gather_edge_features<T>(std::size_t, std::size_t, std::size_t, std::size_t,     \
                                        const T*, const std::int64_t*, T*);                    \
  template void scatter_edge_features_grad<T>(std::size_t, std::size_t, std::size_t,            \
                                              std::size_t, const T*, const std::int64_t*, T*); \
  template void max_reduce<T>(std::size_t, std::size_t, std::size_t, const T*, T*,              \
                              std::size_t*);                                                   \
  template void dynamic_filter_forward<T>(const DynamicFilterDims&, const T*, const T*,         \
                                          const T*, const T*, T*);                             \
  template void dynamic_filter_backward<T>(const DynamicFilterDims&, const T*, const T*,        \
                                           const T*, const T*, const T*, T*, T*, T*, T*);

MAKGCN_INSTANTIATE(float)
MAKGCN_INSTANTIATE(double)

#undef MAKGCN_INSTANTIATE

}  // namespace makgcn::kernels
