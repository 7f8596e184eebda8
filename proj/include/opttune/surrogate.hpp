#pragma once

// Bootstrap ensemble of CART regression trees with variance-reduction splits.

#include <cstdint>
#include <span>
#include <vector>

namespace opttune {

struct TrainingRow {
  std::vector<double> x;
  double y = 0.0;
  double weight = 1.0;
};

struct SurrogateOptions {
  std::size_t trees = 32;
  double feature_fraction = 0.8;
  double min_leaf_weight = 2.0;
  std::size_t max_depth = 32;
  std::uint64_t seed = 0;
};

struct Prediction {
  double mean = 0.0;
  double stddev = 0.0;
};

class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };

  /// Fits on rows with per-row integer-like weights (bootstrap counts).
  static RegressionTree fit(std::span<const TrainingRow> rows, std::span<const double> weights,
                            const SurrogateOptions& options, std::uint64_t seed);

  double predict(std::span<const double> x) const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

class Surrogate {
 public:
  /// Rows with identical (x, y) are merged into one weighted row before
  /// fitting, so the model depends only on the weighted row set.
  /// Throws std::invalid_argument on an empty training set.
  static Surrogate fit(std::vector<TrainingRow> rows, const SurrogateOptions& options);

  /// Mean and population standard deviation of the per-tree predictions.
  Prediction predict(std::span<const double> x) const;

  std::size_t tree_count() const { return trees_.size(); }
  std::size_t width() const { return width_; }

 private:
  std::vector<RegressionTree> trees_;
  std::size_t width_ = 0;
};

/// E[max(0, best - Y)] for Y ~ N(mean, stddev^2) (minimisation).
double expected_improvement(double best, double mean, double stddev);

}  // namespace opttune
