#include "opttune/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "opttune/paramspace.hpp"

namespace opttune {
namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(std::span<const TrainingRow> rows, std::span<const double> weights, const SurrogateOptions& opt,
              std::uint64_t seed)
      : rows_(rows), weights_(weights), opt_(opt), rng_(seed) {}

  std::vector<RegressionTree::Node> build() {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < rows_.size(); ++i)
      if (weights_[i] > 0.0) idx.push_back(i);
    grow(idx, 0);
    return std::move(nodes_);
  }

 private:
  int grow(std::vector<std::size_t>& idx, std::size_t depth) {
    double w = 0.0, wy = 0.0;
    for (auto i : idx) {
      w += weights_[i];
      wy += weights_[i] * rows_[i].y;
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({-1, 0.0, -1, -1, w > 0.0 ? wy / w : 0.0});
    if (depth >= opt_.max_depth || w < 2.0 * opt_.min_leaf_weight) return id;

    const Split split = best_split(idx);
    if (split.feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto i : idx) (rows_[i].x[split.feature] <= split.threshold ? left : right).push_back(i);
    nodes_[id].feature = split.feature;
    nodes_[id].threshold = split.threshold;
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  Split best_split(const std::vector<std::size_t>& idx) {
    const std::size_t width = rows_[idx.front()].x.size();
    std::vector<std::size_t> features(width);
    std::iota(features.begin(), features.end(), 0);
    for (std::size_t i = width; i > 1; --i) std::swap(features[i - 1], features[uniform_index(rng_, i)]);
    const auto subset =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opt_.feature_fraction * static_cast<double>(width))));

    Split best;
    // Like random forests elsewhere: keep looking past the subset until some valid split exists.
    for (std::size_t k = 0; k < width; ++k) {
      if (k >= subset && best.feature >= 0) break;
      consider(idx, features[k], best);
    }
    return best;
  }

  void consider(const std::vector<std::size_t>& idx, std::size_t f, Split& best) {
    std::vector<std::size_t> order(idx);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return rows_[a].x[f] < rows_[b].x[f]; });
    if (rows_[order.front()].x[f] == rows_[order.back()].x[f]) return;

    double tw = 0.0, ty = 0.0, tyy = 0.0;
    for (auto i : order) {
      const double w = weights_[i], y = rows_[i].y;
      tw += w;
      ty += w * y;
      tyy += w * y * y;
    }
    const double parent_sse = tyy - ty * ty / tw;
    double lw = 0.0, ly = 0.0, lyy = 0.0;
    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
      const auto i = order[k];
      const double w = weights_[i], y = rows_[i].y;
      lw += w;
      ly += w * y;
      lyy += w * y * y;
      const double a = rows_[i].x[f], b = rows_[order[k + 1]].x[f];
      if (a == b) continue;
      const double rw = tw - lw;
      if (lw < opt_.min_leaf_weight || rw < opt_.min_leaf_weight) continue;
      const double ry = ty - ly, ryy = tyy - lyy;
      const double sse = (lyy - ly * ly / lw) + (ryy - ry * ry / rw);
      const double gain = parent_sse - sse;
      if (gain > best.gain + 1e-12 * std::max(1.0, std::abs(parent_sse))) {
        best.gain = gain;
        best.feature = static_cast<int>(f);
        best.threshold = a + (b - a) / 2.0;
      }
    }
  }

  std::span<const TrainingRow> rows_;
  std::span<const double> weights_;
  const SurrogateOptions& opt_;
  Rng rng_;
  std::vector<RegressionTree::Node> nodes_;
};

}  // namespace

RegressionTree RegressionTree::fit(std::span<const TrainingRow> rows, std::span<const double> weights,
                                   const SurrogateOptions& options, std::uint64_t seed) {
  RegressionTree t;
  t.nodes_ = TreeBuilder(rows, weights, options, seed).build();
  return t;
}

double RegressionTree::predict(std::span<const double> x) const {
  int n = 0;
  while (nodes_[n].feature >= 0) n = x[nodes_[n].feature] <= nodes_[n].threshold ? nodes_[n].left : nodes_[n].right;
  return nodes_[n].value;
}

Surrogate Surrogate::fit(std::vector<TrainingRow> rows, const SurrogateOptions& options) {
  if (rows.empty()) throw std::invalid_argument("surrogate needs at least one training row");
  const std::size_t width = rows.front().x.size();
  for (const auto& r : rows)
    if (r.x.size() != width) throw std::invalid_argument("training rows differ in width");

  // Canonical weighted row set: sorted, identical (x, y) merged.
  std::sort(rows.begin(), rows.end(), [](const TrainingRow& a, const TrainingRow& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  std::vector<TrainingRow> merged;
  for (auto& r : rows) {
    if (!merged.empty() && merged.back().x == r.x && merged.back().y == r.y) merged.back().weight += r.weight;
    else merged.push_back(std::move(r));
  }

  double total = 0.0;
  std::vector<double> cumulative;
  for (const auto& r : merged) cumulative.push_back(total += r.weight);
  const auto draws = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(total)));

  Surrogate s;
  s.width_ = width;
  for (std::size_t t = 0; t < options.trees; ++t) {
    const std::uint64_t tree_seed = options.seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL * (t + 1);
    Rng rng(tree_seed);
    std::vector<double> counts(merged.size(), 0.0);
    for (std::size_t d = 0; d < draws; ++d) {
      const double u = uniform01(rng) * total;
      const auto k = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
      counts[std::min(k, merged.size() - 1)] += 1.0;
    }
    s.trees_.push_back(RegressionTree::fit(merged, counts, options, rng()));
  }
  return s;
}

Prediction Surrogate::predict(std::span<const double> x) const {
  double sum = 0.0, sq = 0.0;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& t : trees_) {
    const double v = t.predict(x);
    sum += v;
    sq += v * v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == hi) return {lo, 0.0};
  const double n = static_cast<double>(trees_.size());
  const double mean = sum / n;
  return {mean, std::sqrt(std::max(0.0, sq / n - mean * mean))};
}

double expected_improvement(double best, double mean, double stddev) {
  const double diff = best - mean;
  if (!(stddev > 0.0)) return std::max(0.0, diff);
  const double z = diff / stddev;
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  return diff * cdf + stddev * pdf;
}

}  // namespace opttune
