// Parallel kernels against the serial loop-nest references.

#include <gtest/gtest.h>

#include <cmath>

#include "makgcn/kernels.hpp"
#include "support.hpp"

namespace k = makgcn::kernels;
using testing_support::random_values;

namespace {

template <typename T>
std::vector<T> rand_vec(std::size_t n, std::uint64_t seed) {
  const auto d = random_values(n, seed);
  return std::vector<T>(d.begin(), d.end());
}

template <typename T>
void expect_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max(1.0, std::abs(static_cast<double>(b[i])));
    ASSERT_LE(std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])), tol * scale) << "at " << i;
  }
}

template <typename T>
double tol() {
  return std::is_same_v<T, float> ? 1e-4 : 1e-12;
}

}  // namespace

template <typename T>
class KernelEquivalence : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(KernelEquivalence, Precisions);

TYPED_TEST(KernelEquivalence, Gemm) {
  using T = TypeParam;
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const std::size_t m = 7, n = 5, p = 9;
      const auto a = rand_vec<T>(m * p, 1), b = rand_vec<T>(p * n, 2);
      auto c1 = rand_vec<T>(m * n, 3), c2 = c1;
      k::gemm<T>(ta, tb, m, n, p, a.data(), b.data(), T(0.5), c1.data());
      k::serial::gemm<T>(ta, tb, m, n, p, a.data(), b.data(), T(0.5), c2.data());
      expect_close(c1, c2, tol<T>());
    }
  }
}

TYPED_TEST(KernelEquivalence, LinearForwardAndBackward) {
  using T = TypeParam;
  for (std::size_t m : {1u, 13u}) {
    const std::size_t batch = 3, ci = 4, co = 6;
    const auto x = rand_vec<T>(batch * ci * m, 4), w = rand_vec<T>(co * ci, 5), bias = rand_vec<T>(co, 6);
    const auto g = rand_vec<T>(batch * co * m, 7);
    std::vector<T> o1(batch * co * m), o2(o1.size());
    k::linear_forward<T>(batch, ci, co, m, x.data(), w.data(), bias.data(), o1.data());
    k::serial::linear_forward<T>(batch, ci, co, m, x.data(), w.data(), bias.data(), o2.data());
    expect_close(o1, o2, tol<T>());

    auto gx1 = rand_vec<T>(x.size(), 8), gx2 = gx1;
    k::linear_backward_input<T>(batch, ci, co, m, g.data(), w.data(), gx1.data());
    k::serial::linear_backward_input<T>(batch, ci, co, m, g.data(), w.data(), gx2.data());
    expect_close(gx1, gx2, tol<T>());

    auto gw1 = rand_vec<T>(w.size(), 9), gw2 = gw1;
    auto gb1 = rand_vec<T>(co, 10), gb2 = gb1;
    k::linear_backward_params<T>(batch, ci, co, m, g.data(), x.data(), gw1.data(), gb1.data());
    k::serial::linear_backward_params<T>(batch, ci, co, m, g.data(), x.data(), gw2.data(), gb2.data());
    expect_close(gw1, gw2, tol<T>());
    expect_close(gb1, gb2, tol<T>());
  }
}

TYPED_TEST(KernelEquivalence, NeighbourSearchAndEdgeFeatures) {
  using T = TypeParam;
  const std::size_t batch = 2, c = 3, n = 37, kk = 6;
  const auto x = rand_vec<T>(batch * c * n, 11);
  std::vector<T> s1(batch * n * n), s2(s1.size());
  k::pairwise_similarity<T>(batch, c, n, x.data(), s1.data());
  k::serial::pairwise_similarity<T>(batch, c, n, x.data(), s2.data());
  expect_close(s1, s2, tol<T>() * 10);

  std::vector<std::int64_t> i1(batch * n * kk), i2(i1.size());
  k::topk_rows<T>(batch, n, kk, s2.data(), i1.data());
  k::serial::topk_rows<T>(batch, n, kk, s2.data(), i2.data());
  EXPECT_EQ(i1, i2);

  std::vector<T> e1(batch * 2 * c * n * kk), e2(e1.size());
  k::gather_edge_features<T>(batch, c, n, kk, x.data(), i1.data(), e1.data());
  k::serial::gather_edge_features<T>(batch, c, n, kk, x.data(), i1.data(), e2.data());
  EXPECT_EQ(e1, e2);

  const auto g = rand_vec<T>(e1.size(), 12);
  std::vector<T> gx1(x.size(), T(0)), gx2(x.size(), T(0));
  k::scatter_edge_features_grad<T>(batch, c, n, kk, g.data(), i1.data(), gx1.data());
  k::serial::scatter_edge_features_grad<T>(batch, c, n, kk, g.data(), i1.data(), gx2.data());
  expect_close(gx1, gx2, tol<T>());
}

TYPED_TEST(KernelEquivalence, TopkBreaksTiesByIndex) {
  using T = TypeParam;
  const std::vector<T> row = {1, 3, 3, 2, 3};
  std::vector<T> sim;
  for (int r = 0; r < 5; ++r) sim.insert(sim.end(), row.begin(), row.end());
  std::vector<std::int64_t> idx(15), ref(15);
  k::topk_rows<T>(1, 5, 3, sim.data(), idx.data());
  k::serial::topk_rows<T>(1, 5, 3, sim.data(), ref.data());
  for (int r = 0; r < 5; ++r) {
    EXPECT_EQ(std::vector<std::int64_t>(idx.begin() + 3 * r, idx.begin() + 3 * r + 3),
              (std::vector<std::int64_t>{1, 2, 4}));
  }
  EXPECT_EQ(ref, idx);
}

TYPED_TEST(KernelEquivalence, MaxReduce) {
  using T = TypeParam;
  const std::size_t outer = 3, extent = 5, inner = 4;
  auto x = rand_vec<T>(outer * extent * inner, 13);
  x[2] = x[2 + inner];  // a tie
  std::vector<T> o1(outer * inner), o2(o1.size());
  std::vector<std::size_t> a1(o1.size()), a2(o1.size());
  k::max_reduce<T>(outer, extent, inner, x.data(), o1.data(), a1.data());
  k::serial::max_reduce<T>(outer, extent, inner, x.data(), o2.data(), a2.data());
  EXPECT_EQ(o1, o2);
  EXPECT_EQ(a1, a2);
}

TYPED_TEST(KernelEquivalence, DynamicFilter) {
  using T = TypeParam;
  k::DynamicFilterDims d;
  d.batch = 2;
  d.positions = 150;
  d.mid = 5;
  d.c_in = 3;
  d.c_out = 4;
  d.heads = 3;
  const std::size_t cc = d.kernel_channels();
  const auto y1 = rand_vec<T>(d.batch * d.mid * d.positions, 14);
  const auto x = rand_vec<T>(d.batch * d.c_in * d.positions, 15);
  const auto w1 = rand_vec<T>(cc * d.mid, 16), b1 = rand_vec<T>(cc, 17);
  std::vector<T> o1(d.batch * d.c_out * d.positions), o2(o1.size());
  k::dynamic_filter_forward<T>(d, y1.data(), x.data(), w1.data(), b1.data(), o1.data());
  k::serial::dynamic_filter_forward<T>(d, y1.data(), x.data(), w1.data(), b1.data(), o2.data());
  expect_close(o1, o2, tol<T>() * 10);

  const auto g = rand_vec<T>(o1.size(), 18);
  std::vector<T> gy1(y1.size(), T(0)), gx1(x.size(), T(0)), gw1(w1.size(), T(0)), gb1(cc, T(0));
  std::vector<T> gy2 = gy1, gx2 = gx1, gw2 = gw1, gb2 = gb1;
  k::dynamic_filter_backward<T>(d, y1.data(), x.data(), w1.data(), b1.data(), g.data(), gy1.data(), gx1.data(),
                                gw1.data(), gb1.data());
  k::serial::dynamic_filter_backward<T>(d, y1.data(), x.data(), w1.data(), b1.data(), g.data(), gy2.data(),
                                        gx2.data(), gw2.data(), gb2.data());
  expect_close(gy1, gy2, tol<T>() * 10);
  expect_close(gx1, gx2, tol<T>() * 10);
  expect_close(gw1, gw2, tol<T>() * 100);
  expect_close(gb1, gb2, tol<T>() * 100);
}

TEST(KernelEquivalence, DynamicFilterNullOutputsAreSkipped) {
  k::DynamicFilterDims d;
  d.positions = 10;
  d.mid = 2;
  d.c_in = 2;
  d.c_out = 2;
  d.heads = 2;
  const auto y1 = rand_vec<double>(d.mid * d.positions, 19), x = rand_vec<double>(d.c_in * d.positions, 20);
  const auto w1 = rand_vec<double>(d.kernel_channels() * d.mid, 21);
  const auto g = rand_vec<double>(d.c_out * d.positions, 22);
  std::vector<double> gx(x.size(), 0.0);
  k::dynamic_filter_backward<double>(d, y1.data(), x.data(), w1.data(), nullptr, g.data(), nullptr, gx.data(),
                                     nullptr, nullptr);
  std::vector<double> ref(x.size(), 0.0);
  k::serial::dynamic_filter_backward<double>(d, y1.data(), x.data(), w1.data(), nullptr, g.data(), nullptr,
                                             ref.data(), nullptr, nullptr);
  expect_close(gx, ref, 1e-12);
}
