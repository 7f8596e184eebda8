#include <gtest/gtest.h>

#include <cmath>

#include "opttune/paramspace.hpp"
#include "opttune/surrogate.hpp"

namespace opttune {
namespace {

std::vector<TrainingRow> step_rows(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = uniform01(rng), b = uniform01(rng);
    rows.push_back({{a, b}, a < 0.5 ? 1.0 : 5.0 + b});
  }
  return rows;
}

TEST(Surrogate, LearnsStepFunction) {
  const auto model = Surrogate::fit(step_rows(200, 1), {});
  EXPECT_EQ(model.tree_count(), 32u);
  EXPECT_EQ(model.width(), 2u);
  const std::vector<double> lo{0.2, 0.5}, hi{0.8, 0.5};
  EXPECT_NEAR(model.predict(lo).mean, 1.0, 0.3);
  EXPECT_NEAR(model.predict(hi).mean, 5.5, 0.5);
  EXPECT_GE(model.predict(lo).stddev, 0.0);
}

TEST(Surrogate, UncertaintyIsHigherAwayFromData) {
  std::vector<TrainingRow> rows;
  for (int i = 0; i < 40; ++i) rows.push_back({{i / 100.0}, std::sin(i / 10.0)});
  rows.push_back({{1.0}, 3.0});
  rows.push_back({{0.95}, -2.0});
  const auto model = Surrogate::fit(rows, {});
  const std::vector<double> dense{0.2}, sparse{0.97};
  EXPECT_GT(model.predict(sparse).stddev, model.predict(dense).stddev);
}

TEST(Surrogate, SameSeedSameModel) {
  SurrogateOptions o;
  o.seed = 17;
  const auto a = Surrogate::fit(step_rows(100, 2), o);
  const auto b = Surrogate::fit(step_rows(100, 2), o);
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> x{uniform01(rng), uniform01(rng)};
    EXPECT_EQ(a.predict(x).mean, b.predict(x).mean);
    EXPECT_EQ(a.predict(x).stddev, b.predict(x).stddev);
  }
}

TEST(Surrogate, DuplicateRowsEqualWeightedRow) {
  auto rows = step_rows(60, 3);
  auto doubled = rows;
  doubled.push_back(rows.front());
  auto weighted = rows;
  weighted.front().weight = 2.0;
  const auto a = Surrogate::fit(doubled, {});
  const auto b = Surrogate::fit(weighted, {});
  for (const auto& r : rows) EXPECT_EQ(a.predict(r.x).mean, b.predict(r.x).mean);
}

TEST(Surrogate, ConstantTargetHasNoSpread) {
  std::vector<TrainingRow> rows;
  for (int i = 0; i < 20; ++i) rows.push_back({{i / 20.0, 1.0 - i / 20.0}, 2.5});
  const auto model = Surrogate::fit(rows, {});
  const std::vector<double> x{0.3, 0.3};
  EXPECT_DOUBLE_EQ(model.predict(x).mean, 2.5);
  EXPECT_DOUBLE_EQ(model.predict(x).stddev, 0.0);
}

TEST(Surrogate, EmptyTrainingSetThrows) { EXPECT_THROW(Surrogate::fit({}, {}), std::invalid_argument); }

TEST(ExpectedImprovement, ClosedForm) {
  // sd * pdf(0) at mean == best
  EXPECT_NEAR(expected_improvement(1.0, 1.0, 1.0), 0.3989422804014327, 1e-12);
  EXPECT_DOUBLE_EQ(expected_improvement(2.0, 1.0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(expected_improvement(1.0, 2.0, 0.0), 0.0);
  // z = 1: 1 * Phi(1) + pdf(1)
  EXPECT_NEAR(expected_improvement(1.0, 0.0, 1.0), 0.8413447460685429 + 0.24197072451914337, 1e-9);
}

TEST(ExpectedImprovement, MonotoneInMeanAndSpread) {
  double last = 1e9;
  for (double mean = -2.0; mean <= 2.0; mean += 0.25) {
    const double ei = expected_improvement(0.0, mean, 0.5);
    EXPECT_GE(ei, 0.0);
    EXPECT_LE(ei, last);
    last = ei;
  }
  EXPECT_LT(expected_improvement(0.0, 1.0, 0.1), expected_improvement(0.0, 1.0, 1.0));
}

}  // namespace
}  // namespace opttune
