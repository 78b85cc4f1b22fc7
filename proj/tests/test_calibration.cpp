#include <gtest/gtest.h>

#include <map>

#include "qrater/calibration.hpp"
#include "qrater/errors.hpp"
#include "support.hpp"

using namespace qrater;
namespace fs = std::filesystem;

TEST(Calibration, LoadsFixture) {
  const CalibrationSet c = load_calibration(qtest::fixture("cnn-digits") / "calib");
  EXPECT_EQ(c.count(), 500);
  EXPECT_EQ(c.num_classes, 10);
  EXPECT_EQ(c.sample_shape(), (Shape{1, 8, 8}));
  EXPECT_EQ(c.inputs.shape(), (Shape{500, 1, 8, 8}));
  std::map<std::uint32_t, int> per_class;
  for (auto l : c.labels) ++per_class[l];
  EXPECT_EQ(per_class.size(), 10u);
  for (const auto& [label, n] : per_class) EXPECT_EQ(n, 50) << label;
}

TEST(Calibration, SaveLoadRoundTrip) {
  const CalibrationSet c = load_calibration(qtest::fixture("mlp-2layer") / "calib");
  qtest::TempDir tmp;
  save_calibration(c, tmp / "c");
  const CalibrationSet r = load_calibration(tmp / "c");
  EXPECT_EQ(r.inputs, c.inputs);
  EXPECT_EQ(r.labels, c.labels);
  EXPECT_EQ(r.num_classes, c.num_classes);
}

TEST(Calibration, MalformedFiles) {
  const CalibrationSet c = load_calibration(qtest::fixture("mlp-2layer") / "calib");
  qtest::TempDir tmp;
  save_calibration(c, tmp / "c");
  fs::resize_file(tmp / "c" / "labels.u32", 12);
  EXPECT_THROW(load_calibration(tmp / "c"), FormatError);
  EXPECT_THROW(load_calibration(tmp / "missing"), FormatError);

  CalibrationSet bad = c;
  bad.labels[0] = 9;
  save_calibration(bad, tmp / "d");
  EXPECT_THROW(load_calibration(tmp / "d"), FormatError);
}

TEST(Calibration, SubsetKeepsRowsAndLabels) {
  const CalibrationSet c = load_calibration(qtest::fixture("mlp-2layer") / "calib");
  const CalibrationSet s = c.subset({5, 0, 17});
  ASSERT_EQ(s.count(), 3);
  EXPECT_EQ(s.labels, (std::vector<std::uint32_t>{c.labels[5], c.labels[0], c.labels[17]}));
  for (std::int64_t j = 0; j < 4; ++j) {
    EXPECT_EQ(s.inputs[j], c.inputs[5 * 4 + j]);
    EXPECT_EQ(s.inputs[4 + j], c.inputs[j]);
  }
  EXPECT_THROW(c.subset({200}), ArgumentError);
}

TEST(SelectPerClass, BalancedAndSeeded) {
  const CalibrationSet c = load_calibration(qtest::fixture("cnn-digits") / "calib");
  const CalibrationSet a = select_per_class(c, 20, 7);
  EXPECT_EQ(a.count(), 200);
  std::map<std::uint32_t, int> per_class;
  for (auto l : a.labels) ++per_class[l];
  for (const auto& [label, n] : per_class) EXPECT_EQ(n, 20) << label;

  const CalibrationSet b = select_per_class(c, 20, 7);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  const CalibrationSet other = select_per_class(c, 20, 8);
  EXPECT_FALSE(other.inputs == a.inputs);
}

TEST(SelectPerClass, TooFewSamplesIsConfigError) {
  const CalibrationSet c = load_calibration(qtest::fixture("cnn-digits") / "calib");
  EXPECT_THROW(select_per_class(c, 51, 0), ConfigError);
  EXPECT_THROW(select_per_class(c, 0, 0), ConfigError);
}
