#include <gtest/gtest.h>

#include <numeric>

#include "makgcn/errors.hpp"
#include "makgcn/graph_ops.hpp"
#include "makgcn/ops.hpp"
#include "support.hpp"

using namespace makgcn;
using testing_support::brute_force_knn;
using testing_support::gradcheck;
using testing_support::random_tensor;

TEST(Knn, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 10 + 7 * seed;
    const auto x = random_tensor<double>({2, 3, n}, seed);
    for (std::size_t k : {1u, 5u, 9u}) {
      const auto idx = knn(x, k);
      EXPECT_EQ(idx.indices, brute_force_knn(x.storage(), 2, 3, n, k)) << "seed " << seed << " k " << k;
    }
  }
}

TEST(Knn, SelfIsNearestAndDuplicatesBreakByIndex) {
  // Points 1 and 3 coincide.
  Tensor<double> x(Shape{1, 1, 4}, {0.0, 5.0, 1.0, 5.0});
  const auto idx = knn(x, 2);
  EXPECT_EQ(idx.at(0, 0, 0), 0);
  EXPECT_EQ(idx.at(0, 1, 0), 1);
  EXPECT_EQ(idx.at(0, 1, 1), 3);
  EXPECT_EQ(idx.at(0, 3, 0), 1);  // equal distance: lower index first
  EXPECT_EQ(idx.at(0, 3, 1), 3);
}

TEST(Knn, RejectsBadK) {
  const auto x = random_tensor<double>({1, 3, 5}, 1);
  try {
    knn(x, 6);
    FAIL();
  } catch (const InvalidInputError& e) {
    EXPECT_NE(std::string(e.what()).find('k'), std::string::npos);
  }
  EXPECT_THROW(knn(x, 0), InvalidInputError);
}

TEST(Knn, TranslationInvariant) {
  const auto x = random_tensor<double>({1, 3, 40}, 3);
  auto shifted = x.detach();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < 40; ++i) shifted.storage()[c * 40 + i] += 0.25 * (c + 1);
  }
  EXPECT_EQ(knn(x, 8).indices, knn(shifted, 8).indices);
}

TEST(Knn, PermutationEquivariant) {
  const std::size_t n = 30, k = 6;
  const auto x = random_tensor<double>({1, 3, n}, 4);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  std::mt19937 gen(5);
  std::shuffle(perm.begin(), perm.end(), gen);
  Tensor<double> px(Shape{1, 3, n});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) px.storage()[c * n + i] = x.storage()[c * n + perm[i]];
  }
  const auto a = knn(x, k), b = knn(px, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      EXPECT_EQ(perm[static_cast<std::size_t>(b.at(0, i, j))], static_cast<std::size_t>(a.at(0, perm[i], j)));
    }
  }
}

TEST(GraphFeature, LayoutIsDifferenceThenCentre) {
  Tensor<double> x(Shape{1, 2, 3}, {0, 1, 3, 10, 20, 40});
  NeighborIndex idx{1, 3, 2, {0, 1, 1, 0, 2, 1}};
  const auto f = graph_feature(x, idx);
  ASSERT_EQ(f.shape(), (Shape{1, 4, 3, 2}));
  EXPECT_EQ(f.at({0, 0, 0, 1}), 1.0);    // x_1 - x_0, channel 0
  EXPECT_EQ(f.at({0, 1, 2, 1}), -20.0);  // x_1 - x_2, channel 1
  EXPECT_EQ(f.at({0, 2, 2, 0}), 3.0);    // centre repeat
  EXPECT_EQ(f.at({0, 3, 1, 1}), 20.0);
}

TEST(GraphFeature, GradientAndBadIndex) {
  auto x = random_tensor<double>({2, 3, 7}, 6, -1, 1, true);
  const auto idx = knn(x, 3);
  const auto w = random_tensor<double>({2, 6, 7, 3}, 7);
  EXPECT_LT(gradcheck(x, [&] { return sum(mul(graph_feature(x, idx), w)); }), 1e-6);

  NeighborIndex bad{1, 3, 1, {0, 1, 5}};
  EXPECT_THROW(graph_feature(random_tensor<double>({1, 2, 3}, 8), bad), InvalidInputError);
}

TEST(PairwiseSimilarity, IsNegatedSquaredDistance) {
  Tensor<double> x(Shape{1, 2, 2}, {0, 3, 0, 4});
  const auto s = pairwise_similarity(x);
  EXPECT_NEAR(s.at({0, 0, 1}), -25.0, 1e-12);
  EXPECT_EQ(s.at({0, 1, 1}), 0.0);
}
