#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "makgcn/errors.hpp"
#include "makgcn/training.hpp"

using namespace makgcn;

namespace {

Parameter<double> scalar_param(double v) { return {"p", Tensor<double>(Shape{1}, {v}, true), {}}; }

// Gives p a gradient of exactly g.
void set_grad(Parameter<double>& p, double g) {
  p.value.zero_grad();
  backward(sum(scale(p.value, g)));
}

void step(Parameter<double>& p, double g, double lr, double m, double wd) {
  set_grad(p, g);
  Parameter<double>* ptr = &p;
  sgd_step<double>(std::span<Parameter<double>* const>(&ptr, 1), lr, m, wd);
}

// Two classes of clouds: elongated along x or along y, at random offsets.
std::vector<Sample> separable(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < count; ++i) {
    Sample s;
    s.channels = 3;
    s.n_points = 12;
    s.label = static_cast<int>(i % 2);
    s.values.resize(36);
    const double ox = rng.uniform(-1, 1), oy = rng.uniform(-1, 1);
    for (std::size_t p = 0; p < 12; ++p) {
      const double along = rng.uniform(-1, 1), across = rng.uniform(-0.1, 0.1);
      s.values[p] = ox + (s.label == 0 ? along : across);
      s.values[12 + p] = oy + (s.label == 0 ? across : along);
      s.values[24 + p] = rng.uniform(-0.1, 0.1);
    }
    out.push_back(std::move(s));
  }
  return out;
}

ModelConfig toy_model() {
  ModelConfig c;
  c.k = 4;
  c.stage_widths = {8, 8, 8, 8};
  c.emb_dims = 16;
  c.fc_widths = {8};
  c.num_classes = 2;
  c.dropout = 0.2;
  return c;
}

TrainConfig toy_train() {
  TrainConfig t;
  t.batch_size = 8;
  t.max_epochs = 10;
  t.patience = 10;
  t.seed = 3;
  return t;
}

}  // namespace

TEST(Schedule, CosineEndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.1, 0.0), 0.1);
  EXPECT_DOUBLE_EQ(cosine_lr(100, 100, 0.1, 0.001), 0.001);
  EXPECT_DOUBLE_EQ(cosine_lr(50, 100, 0.1, 0.0), 0.05);
  EXPECT_NEAR(cosine_lr(25, 100, 0.1, 0.0), 0.05 * (1 + std::cos(std::numbers::pi / 4)), 1e-15);
  std::ostringstream warn;
  EXPECT_EQ(cosine_lr(101, 100, 0.1, 0.002, &warn), 0.002);
  EXPECT_NE(warn.str().find("warning"), std::string::npos);
}

TEST(Schedule, MonotoneNonIncreasing) {
  for (std::size_t t = 1; t <= 30; ++t) EXPECT_LE(cosine_lr(t, 30, 0.1, 0.0), cosine_lr(t - 1, 30, 0.1, 0.0));
}

TEST(Sgd, PlainStep) {
  auto p = scalar_param(1.0);
  step(p, 0.5, 0.1, 0.9, 0.0);
  EXPECT_NEAR(p.value.data()[0], 0.95, 1e-12);
}

TEST(Sgd, MomentumAccumulates) {
  auto p = scalar_param(0.0);
  step(p, 1.0, 0.1, 0.9, 0.0);
  EXPECT_NEAR(p.value.data()[0], -0.1, 1e-12);
  step(p, 1.0, 0.1, 0.9, 0.0);
  EXPECT_NEAR(p.value.data()[0], -0.29, 1e-12);
}

TEST(Sgd, WeightDecayAloneIsGeometric) {
  auto p = scalar_param(2.0);
  for (int i = 0; i < 100; ++i) step(p, 0.0, 0.1, 0.0, 0.01);
  EXPECT_NEAR(p.value.data()[0], 2.0 * std::pow(1.0 - 0.1 * 0.01, 100), 1e-12);
}

TEST(Sgd, SkipsParametersWithoutGradient) {
  auto p = scalar_param(1.0);
  Parameter<double>* ptr = &p;
  sgd_step<double>(std::span<Parameter<double>* const>(&ptr, 1), 0.1, 0.9, 0.1);
  EXPECT_EQ(p.value.data()[0], 1.0);
}

TEST(EarlyStopping, PatienceTwo) {
  EarlyStopper s(2);
  const double losses[] = {1.0, 0.9, 0.95, 0.97};
  std::size_t stopped_at = 0;
  for (double l : losses) {
    s.observe(l);
    if (s.should_stop()) {
      stopped_at = s.epochs();
      break;
    }
  }
  EXPECT_EQ(stopped_at, 4u);
  EXPECT_EQ(s.best_epoch(), 2u);
  EXPECT_EQ(s.best_loss(), 0.9);
}

TEST(EarlyStopping, TieIsNotAnImprovement) {
  EarlyStopper s(1);
  EXPECT_TRUE(s.observe(0.5));
  EXPECT_FALSE(s.observe(0.5));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 1u);
}

TEST(MetricsTest, TwoClassFixture) {
  const auto m = Metrics::from_confusion({{1, 1}, {0, 2}});
  EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
  // Class 0: precision 1, recall 1/2. Class 1: precision 2/3, recall 1. Equal support.
  EXPECT_NEAR(m.precision, 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(m.recall, 0.75, 1e-15);
  EXPECT_NEAR(m.f1, 0.5 * (2.0 / 3.0 + 0.8), 1e-15);
}

TEST(MetricsTest, UnpredictedClassAndMacroAveraging) {
  const auto w = Metrics::from_confusion({{3, 0}, {1, 0}});
  EXPECT_NEAR(w.precision, 0.75 * 0.75, 1e-15);  // class 1 never predicted: precision 0
  const auto m = Metrics::from_confusion({{3, 0}, {1, 0}}, Averaging::macro);
  EXPECT_NEAR(m.recall, 0.5, 1e-15);
  EXPECT_THROW(Metrics::from_confusion({{0, 0}, {0, 0}}), InvalidInputError);
}

TEST(History, RowsRoundTripValues) {
  EpochRecord r{3, 0.1 / 3.0, 1.0 / 7.0, 0.5, 0.25};
  const std::string row = history_row(r);
  std::istringstream in(row);
  std::string field;
  std::getline(in, field, ',');
  EXPECT_EQ(field, "3");
  std::getline(in, field, ',');
  EXPECT_EQ(std::stod(field), r.lr);
  std::getline(in, field, ',');
  EXPECT_EQ(std::stod(field), r.train_loss);
}

TEST(Argmax, LowestIndexOnTies) {
  const double v[] = {1, 3, 3};
  EXPECT_EQ(argmax<double>(v), 1);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig t;
  t.patience = 0;
  try {
    t.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "patience");
  }
  EXPECT_EQ(TrainConfig{}.eval_batch_size(), 64u);
}

TEST(Fit, SeparableToyReachesPerfectValidation) {
  const auto train = separable(96, 1), val = separable(16, 2);
  Model<float> model(toy_model(), 5);
  const auto result = fit(model, train, val, toy_train());
  double best = 0;
  for (const auto& r : result.history) best = std::max(best, r.val_accuracy);
  EXPECT_EQ(best, 1.0);
  EXPECT_LE(result.history.size(), 10u);
  // The model ends holding the best-validation state.
  EXPECT_NEAR(evaluate(model, val).loss, result.best_val_loss, 1e-6);
}

TEST(Fit, DeterministicForFixedSeed) {
  const auto train = separable(24, 3), val = separable(8, 4);
  auto cfg = toy_train();
  cfg.max_epochs = 3;
  Model<float> a(toy_model(), 7), b(toy_model(), 7);
  const auto ra = fit(a, train, val, cfg), rb = fit(b, train, val, cfg);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
    EXPECT_EQ(ra.history[i].val_loss, rb.history[i].val_loss);
  }
}

TEST(Fit, NonFiniteLossRaisesDivergence) {
  auto train = separable(16, 5);
  const auto val = separable(8, 6);
  auto cfg = toy_train();
  cfg.lr_max = 1e30;
  Model<float> model(toy_model(), 8);
  EXPECT_THROW(fit(model, train, val, cfg), DivergenceError);
}

TEST(Fit, RejectsLabelsOutsideModel) {
  auto train = separable(8, 7);
  train[0].label = 5;
  Model<float> model(toy_model(), 9);
  EXPECT_THROW(fit(model, train, separable(4, 8), toy_train()), DataError);
}
