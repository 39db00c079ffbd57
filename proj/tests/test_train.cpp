#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "glpath/train.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/stop_oracle.hpp"

namespace glpath {
namespace {

using testing::random_tensor;

// Independent per-row cross-entropy: log(sum exp z) - z_y, no max shift.
double naive_ce(const Tensor<double>& logits, std::size_t row, std::size_t label) {
  const std::size_t k = logits.dim(1);
  double sum = 0;
  for (std::size_t j = 0; j < k; ++j) sum += std::exp(logits[row * k + j]);
  return std::log(sum) - logits[row * k + label];
}

TEST(CrossEntropy, UniformLogits) {
  const Tensor<double> logits({3, 6}, 0.0);
  const std::vector<std::size_t> labels{0, 3, 5};
  const std::vector<double> w(6, 1.0);
  EXPECT_NEAR(weighted_cross_entropy(logits, labels, w).loss, std::log(6.0), 1e-12);
  EXPECT_NEAR(std::log(6.0), 1.791759, 1e-6);
}

TEST(CrossEntropy, WeightedMean) {
  const auto logits = random_tensor({2, 6}, 4, -2, 2);
  const std::vector<std::size_t> one{2};
  std::vector<double> w(6, 1.0);
  const Tensor<double> first({1, 6}, std::vector<double>(logits.data(), logits.data() + 6));
  const double unit = weighted_cross_entropy(first, one, w).loss;
  w[2] = 2.0;
  EXPECT_DOUBLE_EQ(weighted_cross_entropy(first, one, w).loss, unit);

  const std::vector<std::size_t> two{2, 4};
  const double l1 = naive_ce(logits, 0, 2), l2 = naive_ce(logits, 1, 4);
  EXPECT_NEAR(weighted_cross_entropy(logits, two, w).loss, (2 * l1 + l2) / 3, 1e-12);
}

TEST(CrossEntropy, UnitWeightsMatchUnweighted) {
  const auto logits = random_tensor({7, 6}, 9, -3, 3);
  const std::vector<std::size_t> labels{0, 1, 2, 3, 4, 5, 1};
  double mean = 0;
  for (std::size_t i = 0; i < 7; ++i) mean += naive_ce(logits, i, labels[i]);
  mean /= 7;
  EXPECT_DOUBLE_EQ(weighted_cross_entropy(logits, labels, std::vector<double>(6, 1.0)).loss, mean);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  auto logits = random_tensor({5, 6}, 11, -2, 2);
  const std::vector<std::size_t> labels{0, 5, 2, 2, 3};
  const std::vector<double> w{0.5, 1.0, 2.0, 1.5, 0.7, 3.0};
  const auto result = weighted_cross_entropy(logits, labels, w);
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < 6; ++j) row += result.grad_logits[i * 6 + j];
    EXPECT_NEAR(row, 0.0, 1e-6);
  }
  auto loss = [&] { return weighted_cross_entropy(logits, labels, w).loss; };
  EXPECT_LT(testing::relative_error(result.grad_logits.values(),
                                    testing::numerical_gradient(loss, logits.values())),
            1e-4);
}

TEST(CrossEntropy, ShiftInvariance) {
  auto logits = random_tensor({4, 6}, 21, -2, 2);
  const std::vector<std::size_t> labels{1, 2, 3, 4};
  const std::vector<double> w{1, 2, 3, 1, 2, 3};
  const double base = weighted_cross_entropy(logits, labels, w).loss;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) logits[i * 6 + j] += 100.0 * (i + 1);
  EXPECT_NEAR(weighted_cross_entropy(logits, labels, w).loss, base, 1e-6);
}

TEST(CrossEntropy, RejectsBadInput) {
  const Tensor<double> logits({2, 6}, 0.0);
  const std::vector<double> w(6, 1.0);
  EXPECT_THROW(weighted_cross_entropy(logits, std::vector<std::size_t>{0, 6}, w), DataError);
  EXPECT_THROW(weighted_cross_entropy(logits, std::vector<std::size_t>{0}, w), ShapeError);
  EXPECT_THROW(weighted_cross_entropy(logits, std::vector<std::size_t>{0, 1},
                                      std::vector<double>{1, 1, 1, 1, 1, 0}),
               ConfigError);
}

ModelParams<double> scalar_params(double value) {
  ModelParams<double> p;
  p.add("w", Tensor<double>({1}, value));
  return p;
}

Gradients<double> scalar_grad(double value) {
  Gradients<double> g;
  g.add("w", Tensor<double>({1}, value));
  return g;
}

TEST(Adam, OneStepHandValue) {
  auto params = scalar_params(0.5);
  AdamState<double> state;
  TrainConfig config;
  adam_step(params, scalar_grad(1.0), state, config);
  EXPECT_EQ(state.t, 1u);
  EXPECT_NEAR(0.5 - params.at("w")[0], 1e-4 / (1 + 1e-8), 1e-15);
}

TEST(Adam, ZeroGradientIsIdentity) {
  auto params = scalar_params(0.25);
  AdamState<double> state;
  adam_step(params, scalar_grad(0.0), state, TrainConfig{});
  EXPECT_EQ(params.at("w")[0], 0.25);
  // Any second moment and step count, first moment at rest.
  state.v.at("w")[0] = 3.7;
  state.t = 41;
  adam_step(params, scalar_grad(0.0), state, TrainConfig{});
  EXPECT_EQ(params.at("w")[0], 0.25);
}

TEST(Adam, StepBoundedByLearningRate) {
  auto params = scalar_params(0.0);
  AdamState<double> state;
  TrainConfig config;
  double previous = 0.0;
  for (int step = 0; step < 2; ++step) {
    adam_step(params, scalar_grad(1.0), state, config);
    const double delta = previous - params.at("w")[0];
    EXPECT_GT(delta, 0.0);
    EXPECT_LE(delta, config.learning_rate * (1 + 1e-9));
    previous = params.at("w")[0];
  }
  EXPECT_GE(state.v.at("w")[0], 0.0);
}

TEST(Adam, RejectsMismatchedState) {
  auto params = scalar_params(0.0);
  AdamState<double> state;
  adam_step(params, scalar_grad(1.0), state, TrainConfig{});
  Gradients<double> wrong;
  wrong.add("w", Tensor<double>({2}, 1.0));
  EXPECT_THROW(adam_step(params, wrong, state, TrainConfig{}), ShapeError);
  Gradients<double> other;
  other.add("u", Tensor<double>({1}, 1.0));
  EXPECT_THROW(adam_step(params, other, state, TrainConfig{}), ShapeError);
}

TEST(Batches, PartitionArithmetic) {
  const auto b = plan_batches(130, 64, 5, 1);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 64u);
  EXPECT_EQ(b[1].size(), 64u);
  EXPECT_EQ(b[2].size(), 2u);
  std::set<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  EXPECT_EQ(seen.size(), 130u);
  EXPECT_EQ(plan_batches(130, 64, 5, 1), b);
  EXPECT_NE(plan_batches(130, 64, 5, 2), b);
  EXPECT_NE(plan_batches(130, 64, 6, 1), b);
}

TEST(Batches, SingletonTailMerged) {
  const auto b = plan_batches(129, 64, 1, 1);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[1].size(), 65u);
  EXPECT_EQ(plan_batches(1, 64, 1, 1).size(), 1u);
  EXPECT_THROW(plan_batches(0, 64, 1, 1), DataError);
}

TEST(EarlyStopping, ScriptedTraces) {
  auto r = testing::run_trace({1.0, 0.9, 0.95}, 1, 1e-6);
  EXPECT_EQ(r.epochs_run, 3u);
  EXPECT_EQ(r.snapshot, 2u);
  EXPECT_EQ(r.best_loss, 0.9);
  EXPECT_TRUE(r.stopped_early);

  r = testing::run_trace({3, 2, 1, 0.5, 0.25}, 1, 1e-6);
  EXPECT_EQ(r.epochs_run, 5u);
  EXPECT_EQ(r.snapshot, 5u);
  EXPECT_FALSE(r.stopped_early);

  r = testing::run_trace({1.0}, 3, 0);
  EXPECT_EQ(r.epochs_run, 1u);

  // Gains smaller than min_delta are not improvements.
  r = testing::run_trace({1.0, 1.0 - 5e-7, 1.0 - 9e-7, 0.5}, 2, 1e-6);
  EXPECT_EQ(r.epochs_run, 3u);
  EXPECT_EQ(r.snapshot, 1u);
}

TEST(EarlyStopping, MatchesReferenceOnRandomTraces) {
  Rng rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> trace(1 + rng.below(30));
    double level = 1.0;
    for (auto& v : trace) {
      level += (rng.uniform() - 0.6) * 0.1;
      v = rng.below(4) == 0 ? trace.front() : level;
    }
    const std::size_t patience = 1 + rng.below(5);
    const double min_delta = rng.below(2) ? 0.0 : 0.01;
    const auto got = testing::run_trace(trace, patience, min_delta);
    const auto ref = testing::reference_stop(trace, patience, min_delta);
    ASSERT_EQ(got.epochs_run, ref.epochs_run) << "trial " << trial;
    ASSERT_EQ(got.snapshot, ref.best_epoch) << "trial " << trial;
    for (std::size_t e = 0; e < got.epochs_run; ++e) EXPECT_GE(trace[e] + min_delta, got.best_loss);
  }
}

TEST(EarlyStopping, RejectsNonFinite) {
  EXPECT_THROW(testing::run_trace({1.0, NAN}, 3, 0), TrainingError);
}

class FitTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const testing::PatternSpec spec;
    NormalizationStats stats;
    train_ = testing::to_dataset<float>(testing::synthetic_set({3, 3, 3, 3, 3, 3}, spec, 1), nullptr,
                                        &stats);
    val_ = testing::to_dataset<float>(testing::synthetic_set({1, 1, 1, 1, 1, 1}, spec, 2), &stats);
    config_.learning_rate = 1e-3;
    config_.batch_size = 8;
    config_.max_epochs = 3;
    config_.seed = 9;
  }

  Dataset<float> train_, val_;
  TrainConfig config_;
};

TEST_F(FitTest, EpochLossFinite) {
  ResNet<float> model(testing::toy_architecture(4), 3);
  AdamState<float> state;
  const auto w = loss_weights(train_.labels, 6, true);
  const double loss = train_epoch(model, train_, state, config_, w, 1);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_EQ(state.t, 3u);  // 18 samples in batches of 8, 8, 2
}

TEST_F(FitTest, MaxEpochsOneRunsOnce) {
  ResNet<float> model(testing::toy_architecture(4), 3);
  config_.max_epochs = 1;
  const auto r = fit(model, train_, val_, config_);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.best_epoch, 1u);
}

TEST_F(FitTest, ReturnsBestSnapshotAndIsDeterministic) {
  config_.learning_rate = 3e-2;  // large enough for the validation loss to move around
  config_.max_epochs = 6;
  config_.patience = 6;
  ResNet<float> a(testing::toy_architecture(4), 3);
  std::vector<EpochRecord> seen;
  const auto ra = fit(a, train_, val_, config_, [&](const EpochRecord& r) { seen.push_back(r); });
  EXPECT_EQ(seen, ra.history);
  double best = INFINITY;
  for (const auto& h : ra.history) best = std::min(best, h.val_loss);
  EXPECT_EQ(ra.best_val_loss, best);
  EXPECT_EQ(ra.history[ra.best_epoch - 1].val_loss, best);
  EXPECT_EQ(a.params(), ra.best_params);
  const auto w = loss_weights(train_.labels, 6, true);
  EXPECT_EQ(evaluate_loss(a, val_, w), best);

  ResNet<float> b(testing::toy_architecture(4), 3);
  const auto rb = fit(b, train_, val_, config_);
  EXPECT_EQ(ra.history, rb.history);
  EXPECT_EQ(ra.best_params, rb.best_params);
}

TEST_F(FitTest, RejectsEmptyValidation) {
  ResNet<float> model(testing::toy_architecture(4), 3);
  Dataset<float> empty;
  EXPECT_THROW(fit(model, train_, empty, config_), DataError);
  TrainConfig bad = config_;
  bad.beta1 = 1.0;
  EXPECT_THROW(fit(model, train_, val_, bad), ConfigError);
}

TEST(History, CsvRoundTrip) {
  const std::vector<EpochRecord> h{{1, 1.5, 1.25}, {2, 0.1 + 0.2, 1.0 / 3.0}};
  const std::string text = format_history(h);
  EXPECT_EQ(text.substr(0, 25), "epoch,train_loss,val_loss");
  EXPECT_EQ(parse_history(text), h);
  EXPECT_THROW(parse_history("epoch,loss\n"), ParseError);
}

}  // namespace
}  // namespace glpath
