#include <gtest/gtest.h>

#include "makgcn/errors.hpp"
#include "makgcn/ops.hpp"
#include "makgcn/tensor.hpp"

using namespace makgcn;

TEST(Tensor, ZerosAndExplicitValues) {
  Tensor<float> z(Shape{2, 3});
  EXPECT_EQ(z.numel(), 6u);
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);

  Tensor<double> t(Shape{2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.at({1, 0}), 3.0);
  t.at({0, 1}) = 7.0;
  EXPECT_EQ(t.data()[1], 7.0);
}

TEST(Tensor, RejectsZeroExtentAndLengthMismatch) {
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(Tensor, DetachCopiesStorage) {
  Tensor<double> a(Shape{3}, {1, 2, 3}, true);
  Tensor<double> d = a.detach();
  d.data()[0] = 9;
  EXPECT_EQ(a.data()[0], 1);
  EXPECT_FALSE(d.requires_grad());
}

TEST(Autograd, LeafGradientsAccumulateAcrossBackwardCalls) {
  Tensor<double> w(Shape{3}, {1, 2, 3}, true);
  Tensor<double> x(Shape{3}, {4, 5, 6});
  backward(sum(mul(w, x)));
  backward(sum(mul(w, x)));
  EXPECT_EQ(w.grad()[0], 8);
  EXPECT_EQ(w.grad()[2], 12);
  w.zero_grad();
  backward(sum(mul(w, x)));
  EXPECT_EQ(w.grad()[1], 5);
}

TEST(Autograd, SharedSubexpressionGetsBothContributions) {
  Tensor<double> w(Shape{2}, {3, -1}, true);
  const auto y = mul(w, w);
  backward(sum(add(y, y)));
  EXPECT_EQ(w.grad()[0], 12);  // d/dw 2w^2
  EXPECT_EQ(w.grad()[1], -4);
}

TEST(Autograd, BackwardMisuseIsAUsageError) {
  Tensor<double> untracked(Shape{1}, std::vector<double>{2});
  EXPECT_THROW(backward(untracked), UsageError);
  Tensor<double> w(Shape{2}, {1, 2}, true);
  EXPECT_THROW(backward(mul(w, w)), UsageError);  // not a scalar
  EXPECT_THROW(backward(Tensor<double>()), UsageError);
}

TEST(Autograd, NoGradGuardSuppressesGraph) {
  Tensor<double> w(Shape{2}, {1, 2}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(sum(w).has_node());
  }
  EXPECT_TRUE(sum(w).has_node());
}

TEST(Tensor, DtypeNames) {
  EXPECT_STREQ(dtype_name(dtype_of<float>()), "f32");
  EXPECT_STREQ(dtype_name(dtype_of<double>()), "f64");
}
