#include <gtest/gtest.h>

#include <fstream>

#include "gaug/data.hpp"
#include "test_util.hpp"

using namespace gaug;
using gaug::testing::read_file;
using gaug::testing::scratch_dir;

namespace {

std::string image_row(int label, int fill, std::size_t pixels = 48 * 48) {
  std::string s = std::to_string(label) + ",";
  for (std::size_t i = 0; i < pixels; ++i) s += (i ? " " : "") + std::to_string(fill);
  return s;
}

std::string write_text(const std::string& test, const std::string& text) {
  const auto path = scratch_dir(test) / "in.csv";
  std::ofstream(path) << text;
  return path.string();
}

}  // namespace

TEST(Gaussians, DefaultCounts) {
  const auto split = sample_gaussians({}, 1);
  EXPECT_EQ(class_histogram(split.train), (std::vector<std::size_t>{1000, 1000, 100}));
  EXPECT_EQ(class_histogram(split.test), (std::vector<std::size_t>{100, 100, 100}));
  EXPECT_EQ(split.train.features.cols, 2u);
  EXPECT_EQ(split.train.sample_shape, (Shape{2}));
}

TEST(Gaussians, MomentsMatchSpecification) {
  GaussianSpec spec;
  spec.means = {{6.5, 7.0}};
  spec.train_counts = {100000};
  spec.test_counts = {1};
  const auto x = sample_gaussians(spec, 7).train.features;
  double m0 = 0, m1 = 0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    m0 += x(i, 0);
    m1 += x(i, 1);
  }
  m0 /= x.rows;
  m1 /= x.rows;
  double c00 = 0, c01 = 0, c11 = 0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    c00 += (x(i, 0) - m0) * (x(i, 0) - m0);
    c01 += (x(i, 0) - m0) * (x(i, 1) - m1);
    c11 += (x(i, 1) - m1) * (x(i, 1) - m1);
  }
  const double n = x.rows - 1.0;
  EXPECT_NEAR(m0, 6.5, 0.05);
  EXPECT_NEAR(m1, 7.0, 0.05);
  EXPECT_NEAR(c00 / n, 2.0, 0.05);
  EXPECT_NEAR(c01 / n, 1.0, 0.05);
  EXPECT_NEAR(c11 / n, 2.0, 0.05);
}

TEST(Gaussians, DeterministicPerSeed) {
  EXPECT_EQ(sample_gaussians({}, 3).train.features.values, sample_gaussians({}, 3).train.features.values);
  EXPECT_NE(sample_gaussians({}, 3).train.features.values, sample_gaussians({}, 4).train.features.values);
}

TEST(Gaussians, RejectsBadCovarianceAndCounts) {
  GaussianSpec spec;
  spec.covariance = {1.0, 2.0, 2.0, 1.0};
  EXPECT_THROW(sample_gaussians(spec, 1), ParameterError);
  spec.covariance = {1.0, 0.5, 0.4, 1.0};
  EXPECT_THROW(sample_gaussians(spec, 1), ParameterError);
  spec = {};
  spec.train_counts = {1000, 1000};
  EXPECT_THROW(sample_gaussians(spec, 1), ParameterError);
  spec = {};
  spec.test_counts = {100, 0, 100};
  EXPECT_THROW(sample_gaussians(spec, 1), ParameterError);
}

TEST(SplitDomains, ExtractsReferenceAndTarget) {
  const auto train = sample_gaussians({}, 2).train;
  const auto pair = split_domains(train, 0, 2);
  EXPECT_EQ(pair.reference.rows, 1000u);
  EXPECT_EQ(pair.target.rows, 100u);
  EXPECT_EQ(pair.reference.row(0)[0], train.features(0, 0));
  EXPECT_EQ(pair.target.row(0)[1], train.features(2000, 1));
  EXPECT_THROW(split_domains(train, 1, 1), DataError);

  LabeledSet two = train;
  for (auto& l : two.labels) l = l == 2 ? 1 : l;
  EXPECT_THROW(split_domains(two, 0, 2), DataError);
}

TEST(MergeAugmented, BalancesMinorityClass) {
  const auto train = sample_gaussians({}, 3).train;
  LabeledSet generated;
  generated.num_classes = 3;
  generated.sample_shape = {2};
  generated.features = Matrix(900, 2);
  generated.labels.assign(900, 2);
  const auto merged = merge_augmented(train, generated);
  EXPECT_EQ(merged.size(), 3000u);
  EXPECT_EQ(class_histogram(merged), (std::vector<std::size_t>{1000, 1000, 1000}));
  EXPECT_EQ(merged.features.rows, 3000u);

  LabeledSet empty;
  empty.num_classes = 3;
  EXPECT_EQ(merge_augmented(train, empty).features.values, train.features.values);

  generated.features = Matrix(900, 3);
  EXPECT_THROW(merge_augmented(train, generated), DataError);
}

TEST(SubsamplePerClass, KeepsFractionOfEachClass) {
  const auto train = sample_gaussians({}, 4).train;
  const auto sub = subsample_per_class(train, 0.2, 9);
  EXPECT_EQ(class_histogram(sub), (std::vector<std::size_t>{200, 200, 20}));
  EXPECT_EQ(subsample_per_class(train, 0.2, 9).features.values, sub.features.values);
  EXPECT_THROW(subsample_per_class(train, 0.0, 9), ParameterError);
  EXPECT_THROW(subsample_per_class(train, 1.5, 9), ParameterError);
}

TEST(ClassHistogram, CountsAndValidation) {
  LabeledSet set;
  set.num_classes = 4;
  set.features = Matrix(5, 1);
  set.labels = {0, 3, 3, 1, 3};
  EXPECT_EQ(class_histogram(set), (std::vector<std::size_t>{1, 1, 0, 3}));
  set.labels[2] = 4;
  EXPECT_THROW(check_labels(set), DataError);
}

TEST(ImageCsv, LoadsLabelAndScalesPixels) {
  std::string row = "3,0";
  for (int i = 1; i < 48 * 48 - 1; ++i) row += " 128";
  row += " 255";
  const auto set = load_image_csv(write_text("img_scale", "emotion,pixels\n" + row + "\n"));
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.labels[0], 3);
  EXPECT_EQ(set.sample_shape, (Shape{48, 48, 1}));
  EXPECT_EQ(set.features(0, 0), -1.0);
  EXPECT_EQ(set.features(0, 48 * 48 - 1), 1.0);
  EXPECT_NEAR(set.features(0, 1), 128.0 / 127.5 - 1.0, 1e-15);
}

TEST(ImageCsv, ReportsMalformedRows) {
  const std::string good = image_row(1, 10);
  try {
    load_image_csv(write_text("img_short", good + "\n" + image_row(2, 10, 2303) + "\n"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("2303"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_image_csv(write_text("img_label", image_row(7, 10) + "\n")), DataError);
  EXPECT_THROW(load_image_csv(write_text("img_pixel", image_row(0, 256) + "\n")), DataError);
  EXPECT_THROW(load_image_csv(write_text("img_text", "1,3 4 x\n")), DataError);
  EXPECT_THROW(load_image_csv("/nonexistent/fer.csv"), IoError);
}

TEST(ImageCsv, MaxRowsAndRoundTrip) {
  std::string text;
  for (int i = 0; i < 5; ++i) text += image_row(i, 40 * i) + "\n";
  const std::string path = write_text("img_round", text);
  EXPECT_EQ(load_image_csv(path, 48, 3).size(), 3u);
  const auto set = load_image_csv(path);
  EXPECT_EQ(set.size(), 5u);

  const auto out = scratch_dir("img_round_out") / "out.csv";
  write_image_csv(set, out.string());
  const auto back = load_image_csv(out.string());
  EXPECT_EQ(back.labels, set.labels);
  EXPECT_EQ(back.features.values, set.features.values);
}

TEST(Matrix, GatherBuildsBatchTensor) {
  Matrix m(3, 2, {1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> idx{2, 0};
  const Tensor t = m.gather(idx, {2});
  EXPECT_EQ(t.shape(), (Shape{2, 2}));
  EXPECT_EQ(t.to_vector(), (std::vector<double>{5, 6, 1, 2}));
  EXPECT_THROW(Matrix(2, 2, {1, 2, 3}), DimensionError);
  const std::vector<double> wide{1, 2, 3};
  EXPECT_THROW(m.append_row(wide), DimensionError);
}
