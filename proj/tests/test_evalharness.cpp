#include <gtest/gtest.h>

#include <cmath>

#include "koopcon/evalharness.hpp"

using namespace koopcon;

namespace {

EvalConfig small_eval() {
  EvalConfig e;
  e.epochs = 20;
  e.learning_rate = 1e-2;
  e.classifier_width = 4;
  e.repeats = 1;
  return e;
}

// Logits are a one-hot of the label encoded in the first pixel.
struct OracleModel {
  std::size_t classes;
  Tensor operator()(const Tensor& x) const {
    const std::size_t n = x.dim(0), per = x.numel() / n;
    std::vector<double> out(n * classes, 0.0);
    for (std::size_t i = 0; i < n; ++i) out[i * classes + static_cast<std::size_t>(x.at(i * per))] = 1.0;
    return Tensor({n, classes}, out);
  }
};

CondensedSet as_condensed(const LabeledImages& d, std::size_t per_class) {
  CondensedSet s;
  s.images = d.images;
  s.labels = d.labels;
  s.class_count = d.class_count;
  s.per_class = per_class;
  return s;
}

}  // namespace

TEST(TrainClassifier, SeparableToyReachesPerfectTrainingAccuracy) {
  const LabeledImages data = make_constant_toy(2, 8, 1, 8, 8, 1);
  const ConvNetClassifier net = train_classifier(data, small_eval(), 3);
  EXPECT_DOUBLE_EQ(evaluate(net, data), 1.0);
}

TEST(TrainClassifier, SameSeedSameParameters) {
  const LabeledImages data = make_constant_toy(2, 4, 1, 8, 8, 2, 0.2);
  const auto a = train_classifier(data, small_eval(), 5).parameters();
  const auto b = train_classifier(data, small_eval(), 5).parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].values(), b[i].values());
}

TEST(TrainClassifier, ZeroEpochsReturnsInitialization) {
  const LabeledImages data = make_constant_toy(2, 4, 1, 8, 8, 2);
  EvalConfig e = small_eval();
  e.epochs = 0;
  const auto trained = train_classifier(data, e, 7).parameters();
  const auto init = make_classifier(data, e, Rng::mix(7, 0xF00D)).parameters();
  for (std::size_t i = 0; i < init.size(); ++i) EXPECT_EQ(trained[i].values(), init[i].values());
}

TEST(TrainClassifier, MiniBatchPathAboveFullBatchLimit) {
  const LabeledImages data = make_constant_toy(2, 10, 1, 8, 8, 3, 0.1);
  EvalConfig e = small_eval();
  e.full_batch_limit = 8;
  e.batch_size = 6;
  EXPECT_DOUBLE_EQ(evaluate(train_classifier(data, e, 1), data), 1.0);
}

TEST(TrainClassifier, EmptyDataIsDataError) {
  EXPECT_THROW(train_classifier(LabeledImages{}, small_eval(), 0), DataError);
}

TEST(Evaluate, OracleModelScoresOne) {
  LabeledImages d;
  d.class_count = 3;
  d.labels = {0, 2, 1, 2};
  d.images = Tensor({4, 1, 1, 1}, {0, 2, 1, 2});
  EXPECT_DOUBLE_EQ(evaluate(OracleModel{3}, d), 1.0);
}

TEST(Evaluate, MatchesHandCountOnFiveSamples) {
  LabeledImages d;
  d.class_count = 3;
  d.images = Tensor({5, 1, 1, 1}, {0, 1, 2, 1, 0});
  d.labels = {0, 1, 1, 2, 0};  // oracle predicts the pixel: hits at 0, 1, 4
  EXPECT_DOUBLE_EQ(evaluate(OracleModel{3}, d, 2), 3.0 / 5.0);
}

TEST(Evaluate, GeometryMismatchIsDimensionError) {
  const LabeledImages data = make_constant_toy(2, 2, 1, 8, 8, 4);
  const ConvNetClassifier net({1, 12, 12}, 2, 2, 0);
  EXPECT_THROW(evaluate(net, data), DimensionError);
}

TEST(Evaluate, UntrainedModelIsNearChanceOnBalancedSet) {
  const LabeledImages data = make_constant_toy(10, 5, 1, 8, 8, 5, 0.3);
  double total = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const double acc = evaluate(ConvNetClassifier({1, 8, 8}, 10, 4, s), data);
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    total += acc;
  }
  std::cout << "mean untrained accuracy over 10 seeds: " << total / 10.0 << "\n";
}

TEST(RunComparison, SingleSeedHasZeroStd) {
  const LabeledImages train = make_constant_toy(2, 6, 1, 8, 8, 6, 0.1);
  const LabeledImages test = make_constant_toy(2, 4, 1, 8, 8, 7, 0.1);
  const EvalReport r = run_comparison(train, test, as_condensed(make_constant_toy(2, 2, 1, 8, 8, 8), 2), small_eval());
  ASSERT_EQ(r.synth.size(), 1u);
  ASSERT_EQ(r.real.size(), 1u);
  EXPECT_EQ(r.synth_summary.std, 0.0);
  EXPECT_EQ(r.real_summary.std, 0.0);
}

TEST(RunComparison, RerunIsBitIdenticalAndSummaryRecomputes) {
  const LabeledImages train = make_constant_toy(2, 6, 1, 8, 8, 6, 0.3);
  const LabeledImages test = make_constant_toy(2, 4, 1, 8, 8, 7, 0.3);
  const CondensedSet condensed = as_condensed(make_constant_toy(2, 2, 1, 8, 8, 8, 0.3), 2);
  EvalConfig e = small_eval();
  e.repeats = 3;
  e.epochs = 3;
  const EvalReport a = run_comparison(train, test, condensed, e);
  const EvalReport b = run_comparison(train, test, condensed, e);
  EXPECT_EQ(a.synth, b.synth);
  EXPECT_EQ(a.real, b.real);
  EXPECT_EQ(a.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  const Summary s = summarize(a.synth);
  EXPECT_EQ(s.mean, a.synth_summary.mean);
  EXPECT_EQ(s.std, a.synth_summary.std);
  for (double acc : a.synth) {
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
  }
}

TEST(RunComparison, ClassCountMismatchIsConsistencyError) {
  const LabeledImages train = make_constant_toy(3, 4, 1, 8, 8, 1);
  EXPECT_THROW(run_comparison(train, train, as_condensed(make_constant_toy(2, 1, 1, 8, 8, 1), 1), small_eval()),
               ConsistencyError);
}

TEST(Summary, MeanAndSampleStd) {
  const Summary s = summarize({0.5, 0.7, 0.9});
  EXPECT_NEAR(s.mean, 0.7, 1e-15);
  EXPECT_NEAR(s.std, 0.2, 1e-15);
}

TEST(Report, CsvAndTable) {
  EvalConfig e;
  e.repeats = 2;
  const EvalReport r = make_report("mnist", 10, e, {0.9, 0.8}, {0.85, 0.75}, 1.0);
  const std::string csv = report_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "row,seed,synth_accuracy,real_accuracy,gap");
  EXPECT_NE(csv.find("seed,1,0.80000000000000004,0.75,"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\nmean,,"), std::string::npos);
  EXPECT_NE(report_table(r).find("85.0 +-  7.1"), std::string::npos) << report_table(r);
}
