#include <gtest/gtest.h>

#include "gaug/svm.hpp"
#include "test_util.hpp"

using namespace gaug;
using gaug::testing::scratch_dir;

namespace {

// Three well separated blobs.
LabeledSet blobs(std::uint64_t seed, std::size_t per_class = 60) {
  GaussianSpec spec;
  spec.means = {{0.0, 0.0}, {20.0, 0.0}, {0.0, 20.0}};
  spec.covariance = {1.0, 0.0, 0.0, 1.0};
  spec.train_counts = {per_class, per_class, per_class};
  spec.test_counts = {1, 1, 1};
  return sample_gaussians(spec, seed).train;
}

}  // namespace

TEST(Svm, SeparableDataIsFitPerfectly) {
  const auto data = blobs(1);
  const auto model = svm_train(data, {1e-3, 30, 2});
  EXPECT_EQ(model.training_accuracy, 1.0);
  EXPECT_EQ(svm_predict(model, data.features), data.labels);
}

TEST(Svm, TrainingAccuracyMatchesPredictions) {
  const auto data = sample_gaussians({}, 3).train;
  const auto model = svm_train(data, {1e-3, 10, 4});
  const auto pred = svm_predict(model, data.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  EXPECT_DOUBLE_EQ(model.training_accuracy, static_cast<double>(hits) / data.size());
  EXPECT_GT(model.training_accuracy, 0.85);
}

TEST(Svm, ZeroModelPredictsLowestClass) {
  LinearSvmModel model;
  model.weights = Matrix(3, 2);
  model.biases = {0, 0, 0};
  model.feature_mean = {0, 0};
  model.feature_scale = {1, 1};
  const auto pred = svm_predict(model, Matrix(4, 2, {1, 2, -3, 4, 0, 0, 9, -9}));
  EXPECT_EQ(pred, (std::vector<int>(4, 0)));
}

TEST(Svm, UntrainedClassesAreNeverPredicted) {
  LinearSvmModel model;
  model.weights = Matrix(3, 1, {0, 0, 0});
  model.biases = {0, 5, 1};
  model.feature_mean = {0};
  model.feature_scale = {1};
  model.trained_class = {true, false, true};
  EXPECT_EQ(svm_predict(model, Matrix(1, 1, {0.0})), (std::vector<int>{2}));
}

TEST(Svm, SharedBiasShiftKeepsPredictions) {
  const auto data = sample_gaussians({}, 5).test;
  auto model = svm_train(sample_gaussians({}, 5).train, {1e-3, 5, 6});
  const auto before = svm_predict(model, data.features);
  for (double& b : model.biases) b += 3.25;
  EXPECT_EQ(svm_predict(model, data.features), before);
}

TEST(Svm, StandardizationStatistics) {
  const auto data = sample_gaussians({}, 7).train;
  const auto model = svm_train(data, {1e-3, 2, 1});
  const Matrix z = standardize(model, data.features);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t r = 0; r < z.rows; ++r) m += z(r, c);
    m /= z.rows;
    for (std::size_t r = 0; r < z.rows; ++r) v += (z(r, c) - m) * (z(r, c) - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / z.rows, 1.0, 1e-12);
  }
}

TEST(Svm, ObjectiveTrendsDown) {
  const auto data = sample_gaussians({}, 8).train;
  const auto model = svm_train(data, {1e-3, 40, 9});
  ASSERT_EQ(model.epoch_objective.size(), 40u);
  // stochastic steps: compare moving averages over 10-epoch windows
  auto window = [&](std::size_t start) {
    double s = 0;
    for (std::size_t i = start; i < start + 10; ++i) s += model.epoch_objective[i];
    return s / 10;
  };
  EXPECT_LE(window(30), window(0));
  EXPECT_LE(window(20), window(10) + 1e-3);
}

TEST(Svm, Contracts) {
  auto data = blobs(2, 10);
  for (auto& l : data.labels) l = 1;
  EXPECT_THROW(svm_train(data), DataError);
  const auto model = svm_train(blobs(2, 10));
  EXPECT_THROW(svm_predict(model, Matrix(2, 3)), DataError);
  EXPECT_THROW(svm_train(blobs(2, 10), {0.0, 5, 1}), ParameterError);
  EXPECT_THROW(svm_train(blobs(2, 10), {1e-3, 0, 1}), ParameterError);
}

TEST(Svm, Deterministic) {
  const auto data = sample_gaussians({}, 10).train;
  EXPECT_EQ(svm_train(data, {1e-3, 5, 11}).weights.values, svm_train(data, {1e-3, 5, 11}).weights.values);
}

TEST(Evaluate, OneMistakeInThreeHundred) {
  std::vector<int> truth, pred;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 100; ++i) truth.push_back(c);
  pred = truth;
  pred[250] = 0;
  const auto rep = evaluate(pred, truth, 3);
  EXPECT_DOUBLE_EQ(rep.overall, 299.0 / 300.0);
  EXPECT_DOUBLE_EQ(*rep.per_class[0], 1.0);
  EXPECT_DOUBLE_EQ(*rep.per_class[2], 0.99);
  EXPECT_EQ(rep.confusion.at(2, 0), 1u);
  EXPECT_EQ(rep.confusion.total(), 300u);
}

TEST(Evaluate, AbsentClassIsUndefined) {
  const std::vector<int> truth{0, 0, 1}, pred{0, 1, 1};
  const auto rep = evaluate(pred, truth, 3);
  EXPECT_FALSE(rep.per_class[2].has_value());
  EXPECT_DOUBLE_EQ(*rep.per_class[0], 0.5);
  const auto j = accuracy_json(rep, {"a", "b", "c"});
  EXPECT_TRUE(j["per_class"]["c"].is_null());
  EXPECT_DOUBLE_EQ(j["overall"].get<double>(), 2.0 / 3.0);
  EXPECT_THROW(evaluate(pred, std::vector<int>{0, 1}, 3), DataError);
  EXPECT_THROW(evaluate(std::vector<int>{3}, std::vector<int>{0}, 3), DataError);
}

TEST(Evaluate, ConfusionCsvRoundTripRecomputesAccuracy) {
  const std::vector<int> truth{0, 1, 2, 2, 1, 0, 2}, pred{0, 2, 2, 1, 1, 0, 2};
  const auto rep = evaluate(pred, truth, 3);
  const auto path = (scratch_dir("confusion") / "c.csv").string();
  write_confusion_csv(rep.confusion, path);
  EXPECT_EQ(gaug::testing::read_file(path).substr(0, 26), "true,pred_0,pred_1,pred_2\n");
  const auto back = accuracy_from_confusion(read_confusion_csv(path));
  EXPECT_EQ(back.confusion.counts, rep.confusion.counts);
  EXPECT_DOUBLE_EQ(back.overall, rep.overall);
}
