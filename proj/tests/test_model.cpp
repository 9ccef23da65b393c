#include <gtest/gtest.h>

#include <numeric>

#include "makgcn/errors.hpp"
#include "makgcn/model.hpp"
#include "makgcn/training.hpp"
#include "support.hpp"

using namespace makgcn;
using testing_support::random_tensor;

namespace {

ModelConfig tiny(Variant v = Variant::SequentialFF) {
  ModelConfig c;
  c.k = 4;
  c.num_heads = 2;
  c.stage_widths = {4, 4, 6, 8};
  c.emb_dims = 16;
  c.fc_widths = {8};
  c.num_classes = 3;
  c.variant = v;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST(Model, VariantNamesRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_EQ(variant_label(Variant::SequentialFF), "MAK+FF+GC (Sq)");
  EXPECT_THROW(parse_variant("diagonal"), ConfigError);
  EXPECT_TRUE(stage_is_mak(Variant::SandwichFF, 2));
  EXPECT_FALSE(stage_is_mak(Variant::SandwichFF, 1));
  EXPECT_FALSE(stage_is_mak(Variant::SequentialFF, 2));
  EXPECT_FALSE(variant_fuses(Variant::MakOnly));
}

TEST(Model, StageLayoutPerVariant) {
  EXPECT_EQ(Model<float>(tiny(Variant::SequentialFF), 1).stage_names(),
            (std::vector<std::string>{"mak1", "mak2", "conv3", "conv4"}));
  EXPECT_EQ(Model<float>(tiny(Variant::SandwichFF), 1).stage_names(),
            (std::vector<std::string>{"mak1", "conv2", "mak3", "conv4"}));
  EXPECT_EQ(Model<float>(tiny(Variant::MakFF), 1).stage_names(),
            (std::vector<std::string>{"mak1", "mak2", "mak3", "mak4"}));
}

TEST(Model, OneNeighbourSearchAndGeometricGeneratorInput) {
  for (Variant v : kAllVariants) {
    Model<double> model(tiny(v), 2);
    const auto x = random_tensor<double>({2, 3, 12}, 3);
    ForwardTrace<double> trace;
    const auto logits = model.forward(x, Mode::eval, nullptr, &trace);
    EXPECT_EQ(logits.shape(), (Shape{2, 3}));
    EXPECT_EQ(trace.knn_calls, 1u);
    ASSERT_FALSE(trace.kernel_generation_inputs.empty());
    // Every MAK stage generates its kernels from the raw-coordinate edge features.
    const auto& first = trace.kernel_generation_inputs.front();
    EXPECT_EQ(first.shape(), (Shape{2, 6, 12, 4}));
    for (const auto& g : trace.kernel_generation_inputs) EXPECT_EQ(g.storage(), first.storage());
    EXPECT_EQ(trace.stage_outputs.size(), 4u);
    EXPECT_EQ(trace.fused.dim(1), variant_fuses(v) ? 22u : 8u);
  }
}

TEST(Model, PermutationInvariantInEvalMode) {
  Model<double> model(tiny(), 4);
  const std::size_t n = 15;
  const auto x = random_tensor<double>({1, 3, n}, 5);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  std::mt19937 gen(6);
  std::shuffle(perm.begin(), perm.end(), gen);
  Tensor<double> px(Shape{1, 3, n});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) px.storage()[c * n + i] = x.storage()[c * n + perm[i]];
  }
  const auto a = model.forward(x, Mode::eval), b = model.forward(px, Mode::eval);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-10);
}

TEST(Model, ParameterCountMatchesClosedForm) {
  for (Variant v : kAllVariants) {
    for (std::size_t h : {1u, 3u}) {
      auto c = tiny(v);
      c.num_heads = h;
      Model<float> model(c, 1);
      EXPECT_EQ(model.parameter_count(), count_params(c)) << variant_name(v) << " h=" << h;
    }
  }
}

TEST(Model, InputValidation) {
  Model<float> model(tiny(), 1);
  EXPECT_THROW(model.forward(random_tensor<float>({1, 2, 10}, 1), Mode::eval), DimensionError);
  EXPECT_THROW(model.forward(random_tensor<float>({1, 3, 3}, 1), Mode::eval), InvalidInputError);
  auto c = tiny();
  c.dropout = 0.5;
  Model<float> dropping(c, 1);
  EXPECT_THROW(dropping.forward(random_tensor<float>({2, 3, 10}, 1), Mode::train), UsageError);
  c.k = 0;
  EXPECT_THROW(Model<float>(c, 1), ConfigError);
}

TEST(Model, SameSeedSameWeights) {
  Model<float> a(tiny(), 9), b(tiny(), 9), c(tiny(), 10);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  EXPECT_EQ(pa[0]->value.storage(), pb[0]->value.storage());
  EXPECT_NE(pa[0]->value.storage(), pc[0]->value.storage());
}

TEST(Model, FixedBatchLossDecreases) {
  auto c = tiny();
  Model<float> model(c, 11);
  const auto x = random_tensor<float>({6, 3, 12}, 12);
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  auto loss_now = [&] {
    NoGradGuard ng;
    return softmax_cross_entropy(model.forward(x, Mode::train), std::span<const int>(labels)).item();
  };
  const double before = loss_now();
  for (int step = 0; step < 50; ++step) {
    model.zero_grad();
    backward(softmax_cross_entropy(model.forward(x, Mode::train), std::span<const int>(labels)));
    const auto params = model.parameters();
    sgd_step<float>(params, 0.05, 0.9, 0.0);
  }
  EXPECT_LT(loss_now(), 0.5 * before);
}
