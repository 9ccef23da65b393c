#include <algorithm>
#include <numeric>
#include <vector>

#include "makgcn/kernels.hpp"

namespace makgcn::kernels::serial {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t p, const T* a,
          const T* b, T beta, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t q = 0; q < p; ++q) {
        const T av = trans_a ? a[q * m + i] : a[i * p + q];
        const T bv = trans_b ? b[j * p + q] : b[q * n + j];
        acc += av * bv;
      }
      c[i * n + j] = (beta == T(0) ? T(0) : beta * c[i * n + j]) + acc;
    }
  }
}

template <typename T>
void linear_forward(std::size_t batch, std::size_t c_in, std::size_t c_out, std::size_t m,
                    const T* x, const T* w, const T* bias, T* out) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < c_out; ++o) {
      for (std::size_t s = 0; s < m; ++s) {
        T acc = bias ? bias[o] : T(0);
        for (std::size_t i = 0; i < c_in; ++i) acc += w[o * c_in + i] * x[(b * c_in + i) * m + s];
        out[(b * c_out + o) * m + s] = acc;
      }
    }
  }
}

template <typename T>
void linear_backward_input(std::size_t batch, std::size_t c_in, std::size_t c_out, std::size_t m,
                           const T* g, const T* w, T* gx) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < c_in; ++i) {
      for (std::size_t s = 0; s < m; ++s) {
        T acc = 0;
        for (std::size_t o = 0; o < c_out; ++o) acc += w[o * c_in + i] * g[(b * c_out + o) * m + s];
        gx[(b * c_in + i) * m + s] += acc;
      }
    }
  }
}

template <typename T>
void linear_backward_params(std::size_t batch, std::size_t c_in, std::size_t c_out,
                            std::size_t m, const T* g, const T* x, T* gw, T* gbias) {
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t i = 0; i < c_in; ++i) {
      T acc = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t s = 0; s < m; ++s) {
          acc += g[(b * c_out + o) * m + s] * x[(b * c_in + i) * m + s];
        }
      }
      gw[o * c_in + i] += acc;
    }
    if (gbias) {
      T acc = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t s = 0; s < m; ++s) acc += g[(b * c_out + o) * m + s];
      }
      gbias[o] += acc;
    }
  }
}

template <typename T>
void pairwise_similarity(std::size_t batch, std::size_t channels, std::size_t n, const T* x,
                         T* sim) {
  std::vector<T> norms(n);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = x + b * channels * n;
    for (std::size_t i = 0; i < n; ++i) {
      T s = 0;
      for (std::size_t c = 0; c < channels; ++c) s += xb[c * n + i] * xb[c * n + i];
      norms[i] = s;
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T inner = 0;
        for (std::size_t c = 0; c < channels; ++c) inner += xb[c * n + i] * xb[c * n + j];
        const T d = norms[i] + norms[j] - T(2) * inner;
        sim[(b * n + i) * n + j] = -std::max(d, T(0));
      }
    }
  }
}

template <typename T>
void topk_rows(std::size_t batch, std::size_t n, std::size_t k, const T* sim, std::int64_t* idx) {
  std::vector<std::int64_t> order(n);
  for (std::size_t row = 0; row < batch * n; ++row) {
    const T* r = sim + row * n;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [r](std::int64_t a, std::int64_t b) {
      return r[a] > r[b] || (r[a] == r[b] && a < b);
    });
    std::copy_n(order.begin(), k, idx + row * k);
  }
}

template <typename T>
void gather_edge_features(std::size_t batch, std::size_t channels, std::size_t n, std::size_t k,
                          const T* x, const std::int64_t* idx, T* out) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* xr = x + (b * channels + c) * n;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const auto nb = static_cast<std::size_t>(idx[(b * n + i) * k + j]);
          out[(((b * 2 * channels) + c) * n + i) * k + j] = xr[nb] - xr[i];
          out[(((b * 2 * channels) + channels + c) * n + i) * k + j] = xr[i];
        }
      }
    }
  }
}

template <typename T>
void scatter_edge_features_grad(std::size_t batch, std::size_t channels, std::size_t n,
                                std::size_t k, const T* g, const std::int64_t* idx, T* gx) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      T* gr = gx + (b * channels + c) * n;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const auto nb = static_cast<std::size_t>(idx[(b * n + i) * k + j]);
          const T gd = g[(((b * 2 * channels) + c) * n + i) * k + j];
          const T ga = g[(((b * 2 * channels) + channels + c) * n + i) * k + j];
          gr[nb] += gd;
          gr[i] += ga - gd;
        }
      }
    }
  }
}

template <typename T>
void max_reduce(std::size_t outer, std::size_t extent, std::size_t inner, const T* x, T* out,
                std::size_t* arg) {
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = 0;
      T best_v = x[o * extent * inner + i];
      for (std::size_t e = 1; e < extent; ++e) {
        const T v = x[(o * extent + e) * inner + i];
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
  const std::size_t P = d.positions;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t co = 0; co < d.c_out; ++co) {
        T acc = 0;
        for (std::size_t h = 0; h < d.heads; ++h) {
          for (std::size_t ci = 0; ci < d.c_in; ++ci) {
            const std::size_t ch = (co * d.c_in + ci) * d.heads + h;
            T kernel = b1 ? b1[ch] : T(0);
            for (std::size_t m = 0; m < d.mid; ++m) kernel += w1[ch * d.mid + m] * y1[(b * d.mid + m) * P + p];
            acc += kernel * x[(b * d.c_in + ci) * P + p];
          }
        }
        out[(b * d.c_out + co) * P + p] = acc;
      }
    }
  }
}

template <typename T>
void dynamic_filter_backward(const DynamicFilterDims& d, const T* y1, const T* x, const T* w1,
                             const T* b1, const T* g_out, T* g_y1, T* g_x, T* g_w1, T* g_b1) {
  const std::size_t P = d.positions;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t co = 0; co < d.c_out; ++co) {
        const T g = g_out[(b * d.c_out + co) * P + p];
        for (std::size_t h = 0; h < d.heads; ++h) {
          for (std::size_t ci = 0; ci < d.c_in; ++ci) {
            const std::size_t ch = (co * d.c_in + ci) * d.heads + h;
            const T xv = x[(b * d.c_in + ci) * P + p];
            if (g_x) {
              T kernel = b1 ? b1[ch] : T(0);
              for (std::size_t m = 0; m < d.mid; ++m) kernel += w1[ch * d.mid + m] * y1[(b * d.mid + m) * P + p];
              g_x[(b * d.c_in + ci) * P + p] += g * kernel;
            }
            const T gk = g * xv;
            if (g_b1) g_b1[ch] += gk;
            for (std::size_t m = 0; m < d.mid; ++m) {
              if (g_w1) g_w1[ch * d.mid + m] += gk * y1[(b * d.mid + m) * P + p];
              if (g_y1) g_y1[(b * d.mid + m) * P + p] += gk * w1[ch * d.mid + m];
            }
          }
        }
      }
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

}  // namespace makgcn::kernels::serial
