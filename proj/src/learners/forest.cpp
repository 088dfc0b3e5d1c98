// CART regression trees on bootstrap resamples. Splits maximise the decrease
// in sum of squared errors; thresholds sit midway between adjacent distinct
// values. Candidate features are scanned in ascending index and thresholds in
// ascending value, and only a strictly better gain replaces the incumbent,
// which gives the lowest-feature-then-lowest-threshold tie rule.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iwc/learners.hpp"
#include "iwc/rng.hpp"

namespace iwc {

double TreeFit::predict(std::span<const double> input) const {
  int node = 0;
  while (feature[static_cast<std::size_t>(node)] >= 0) {
    const auto k = static_cast<std::size_t>(node);
    node = input[static_cast<std::size_t>(feature[k])] <= threshold[k] ? left[k]
                                                                       : right[k];
  }
  return value[static_cast<std::size_t>(node)];
}

namespace {

struct Builder {
  const Matrix& x;
  std::span<const double> y;
  const ForestSettings& settings;
  int mtry;
  Engine engine;
  TreeFit tree;
  std::vector<std::size_t> scratch;
  std::vector<int> features;

  int add_leaf(double value) {
    tree.feature.push_back(-1);
    tree.threshold.push_back(0.0);
    tree.left.push_back(-1);
    tree.right.push_back(-1);
    tree.value.push_back(value);
    return static_cast<int>(tree.feature.size()) - 1;
  }

  // Grows the subtree over rows[begin, end) and returns its node index.
  int grow(std::vector<std::size_t>& rows, std::size_t begin, std::size_t end,
           int depth) {
    const std::size_t n = end - begin;
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) sum += y[rows[i]];
    const double mean = sum / static_cast<double>(n);
    const auto min_leaf = static_cast<std::size_t>(settings.min_leaf);
    if (depth >= settings.max_depth || n < 2 * min_leaf) return add_leaf(mean);

    // Choose mtry features without replacement, then scan them in order.
    const int p = static_cast<int>(x.cols());
    for (int k = 0; k < mtry; ++k) {
      std::uniform_int_distribution<int> pick(k, p - 1);
      std::swap(features[static_cast<std::size_t>(k)],
                features[static_cast<std::size_t>(pick(engine))]);
    }
    std::vector<int> chosen(features.begin(), features.begin() + mtry);
    std::sort(chosen.begin(), chosen.end());

    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    const double base = sum * sum / static_cast<double>(n);
    for (int f : chosen) {
      scratch.assign(rows.begin() + static_cast<long>(begin),
                     rows.begin() + static_cast<long>(end));
      std::sort(scratch.begin(), scratch.end(), [&](std::size_t a, std::size_t b) {
        return x(static_cast<Eigen::Index>(a), f) < x(static_cast<Eigen::Index>(b), f);
      });
      double left_sum = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += y[scratch[i]];
        const std::size_t n_left = i + 1;
        const double v = x(static_cast<Eigen::Index>(scratch[i]), f);
        const double v_next = x(static_cast<Eigen::Index>(scratch[i + 1]), f);
        if (n_left < min_leaf || n - n_left < min_leaf || !(v < v_next)) continue;
        const double right_sum = sum - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                            right_sum * right_sum / static_cast<double>(n - n_left) -
                            base;
        if (gain > best_gain) {
          const double mid = v + 0.5 * (v_next - v);
          best_gain = gain;
          best_feature = f;
          best_threshold = mid < v_next ? mid : v;
        }
      }
    }
    if (best_feature < 0 || !(best_gain > 1e-12 * std::max(1.0, std::fabs(base)))) {
      return add_leaf(mean);
    }

    const auto mid_it = std::stable_partition(
        rows.begin() + static_cast<long>(begin), rows.begin() + static_cast<long>(end),
        [&](std::size_t r) {
          return x(static_cast<Eigen::Index>(r), best_feature) <= best_threshold;
        });
    const auto split = static_cast<std::size_t>(mid_it - rows.begin());
    const int node = add_leaf(mean);
    const auto k = static_cast<std::size_t>(node);
    tree.feature[k] = best_feature;
    tree.threshold[k] = best_threshold;
    const int l = grow(rows, begin, split, depth + 1);
    const int r = grow(rows, split, end, depth + 1);
    tree.left[k] = l;
    tree.right[k] = r;
    return node;
  }
};

}  // namespace

ForestFit fit_forest(const Matrix& x, std::span<const double> y,
                     const ForestSettings& settings, std::uint64_t seed) {
  if (static_cast<std::size_t>(x.rows()) != y.size() || y.empty()) {
    throw Error(ErrorKind::kShapeMismatch, "design and outcome lengths differ");
  }
  const int p = static_cast<int>(x.cols());
  int mtry = settings.feature_subsample > 0
                 ? settings.feature_subsample
                 : static_cast<int>(std::floor(std::sqrt(static_cast<double>(p))));
  mtry = std::clamp(mtry, 1, std::max(p, 1));
  const std::size_t n = y.size();
  const auto n_boot = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(settings.bootstrap_fraction *
                                               static_cast<double>(n))));

  ForestFit forest;
  forest.trees.reserve(static_cast<std::size_t>(settings.n_trees));
  for (int t = 0; t < settings.n_trees; ++t) {
    Builder builder{x, y, settings, mtry, make_engine(seed, static_cast<std::uint64_t>(t)),
                    {}, {}, {}};
    builder.features.resize(static_cast<std::size_t>(p));
    std::iota(builder.features.begin(), builder.features.end(), 0);
    std::vector<std::size_t> rows(n_boot);
    std::uniform_int_distribution<std::size_t> draw(0, n - 1);
    for (auto& r : rows) r = draw(builder.engine);
    if (p == 0) {
      double s = 0.0;
      for (std::size_t r : rows) s += y[r];
      builder.add_leaf(s / static_cast<double>(rows.size()));
    } else {
      builder.grow(rows, 0, rows.size(), 0);
    }
    forest.trees.push_back(std::move(builder.tree));
  }
  return forest;
}

}  // namespace iwc
