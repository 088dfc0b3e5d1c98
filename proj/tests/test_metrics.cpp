#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "iwc/metrics.hpp"

namespace {

using iwc::EffectEstimates;

EffectEstimates effects(const std::vector<double>& theta) {
  const auto n = static_cast<Eigen::Index>(theta.size());
  EffectEstimates e;
  e.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), n);
  e.theta_given = Eigen::MatrixXd::Zero(n, n);
  e.available.assign(theta.size(), true);
  return e;
}

EffectEstimates random_effects(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  EffectEstimates e;
  e.theta = Eigen::VectorXd::NullaryExpr(n, [&] { return normal(rng); });
  e.theta_given = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return normal(rng); });
  e.available.assign(static_cast<std::size_t>(n), true);
  return e;
}

template <class F>
iwc::ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const iwc::Error& e) {
    return e.kind();
  }
  return iwc::ErrorKind::kIoError;  // sentinel: nothing was thrown
}

// ---------------------------------------------------------------- weighted errors

TEST(WeightedError, CreditExampleSinglePair) {
  const std::vector<EffectEstimates> truth{effects({-0.4993, 0.0})};
  const std::vector<EffectEstimates> est{effects({-0.2444, 0.0})};
  const auto w = iwc::weighted_rel_err_ate(est, truth);
  EXPECT_NEAR(w.value, 0.5105, 5e-5);
  EXPECT_EQ(w.terms, 2u);
  EXPECT_EQ(w.dropped, 0u);
}

TEST(WeightedError, ThreeLevelHandValue) {
  // True ATEs |1|, |3|, |2| per unordered pair; only pairs touching level 1 are off.
  const std::vector<EffectEstimates> truth{effects({0.0, 1.0, 3.0})};
  const std::vector<EffectEstimates> est{effects({0.0, 1.5, 3.0})};
  EXPECT_NEAR(iwc::weighted_rel_err_ate(est, truth).value, 1.0 / 6.0, 1e-15);
}

TEST(WeightedError, ExactEstimatesGiveZero) {
  std::mt19937_64 rng(1);
  std::vector<EffectEstimates> s;
  for (int m = 0; m < 4; ++m) s.push_back(random_effects(5, rng));
  EXPECT_EQ(iwc::weighted_rel_err_ate(s, s).value, 0.0);
  EXPECT_EQ(iwc::weighted_rel_err_atte(s, s).value, 0.0);
}

TEST(WeightedError, AtteMatchesDoubleLoopOracle) {
  std::mt19937_64 rng(2);
  std::vector<EffectEstimates> est, truth;
  for (int m = 0; m < 3; ++m) {
    est.push_back(random_effects(5, rng));
    truth.push_back(random_effects(5, rng));
  }
  double total = 0.0;
  for (int m = 0; m < 3; ++m) {
    const auto& t = truth[static_cast<std::size_t>(m)].theta_given;
    const auto& e = est[static_cast<std::size_t>(m)].theta_given;
    double norm = 0.0;
    double acc = 0.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (int i = 0; i < 5; ++i) {
        for (int k = 0; k < 5; ++k) {
          for (int j = 0; j < 5; ++j) {
            if (i == k || i == j || k == j) continue;
            const double tv = t(i, j) - t(k, j);
            const double ev = e(i, j) - e(k, j);
            if (pass == 0) {
              norm += std::fabs(tv);
            } else {
              acc += std::fabs(tv) / norm * std::fabs(ev / tv - 1.0);
            }
          }
        }
      }
    }
    total += acc;
  }
  const auto w = iwc::weighted_rel_err_atte(est, truth);
  EXPECT_NEAR(w.value, total / 3.0, 1e-12 * total);
  EXPECT_EQ(w.terms, 3u * 60u);
}

TEST(WeightedError, PermutationInvariantOverRepetitions) {
  std::mt19937_64 rng(3);
  std::vector<EffectEstimates> est, truth;
  for (int m = 0; m < 6; ++m) {
    est.push_back(random_effects(4, rng));
    truth.push_back(random_effects(4, rng));
  }
  const double a = iwc::weighted_rel_err_ate(est, truth).value;
  const double c = iwc::consistency_std(est, truth);
  std::reverse(est.begin(), est.end());
  std::reverse(truth.begin(), truth.end());
  EXPECT_NEAR(iwc::weighted_rel_err_ate(est, truth).value, a, 1e-14 * a);
  EXPECT_NEAR(iwc::consistency_std(est, truth), c, 1e-14 * c);
}

TEST(WeightedError, ZeroTruthIsDroppedOrRejected) {
  const std::vector<EffectEstimates> zero{effects({2.0, 2.0, 2.0})};
  const std::vector<EffectEstimates> est{effects({2.0, 2.1, 1.9})};
  EXPECT_EQ(kind_of([&] { iwc::weighted_rel_err_ate(est, zero); }),
            iwc::ErrorKind::kAllTrueEffectsZero);
  // One repetition with usable pairs: the zero repetition is skipped.
  const std::vector<EffectEstimates> truth{effects({2.0, 2.0, 2.0}), effects({0.0, 1.0, 1.0})};
  const std::vector<EffectEstimates> est2{effects({2.0, 2.1, 1.9}), effects({0.0, 1.0, 1.0})};
  const auto w = iwc::weighted_rel_err_ate(est2, truth);
  EXPECT_EQ(w.repetitions, 1u);
  EXPECT_EQ(w.dropped, 6u + 2u);
  EXPECT_EQ(w.value, 0.0);
}

TEST(WeightedError, TwoLevelsHaveNoTriples) {
  const std::vector<EffectEstimates> s{effects({-0.4993, 0.0})};
  EXPECT_EQ(kind_of([&] { iwc::weighted_rel_err_atte(s, s); }), iwc::ErrorKind::kNoValidTriples);
}

TEST(ErrorReduction, PublishedRows) {
  EXPECT_NEAR(iwc::error_reduction(0.161, 0.0235), 0.854, 5e-4);
  EXPECT_NEAR(iwc::error_reduction(0.8812, 0.1205), 0.8633, 5e-5);
  EXPECT_EQ(iwc::error_reduction(0.3, 0.3), 0.0);
  EXPECT_EQ(kind_of([] { iwc::error_reduction(0.0, 0.1); }), iwc::ErrorKind::kDivisionByZero);
}

// ---------------------------------------------------------------- consistency

TEST(Consistency, MeanHandFixture) {
  Eigen::MatrixXd est(2, 2), truth(2, 2);
  est << 1.1, 2.0, 0.9, 2.4;
  truth << 1.0, 2.0, 1.0, 2.0;
  // Estimand 0 sums match exactly; estimand 1 is 4.4 / 4 - 1 = 0.1.
  EXPECT_NEAR(iwc::consistency_mean(est, truth), 0.05, 1e-15);
  EXPECT_EQ(iwc::consistency_mean(truth, truth), 0.0);
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 2);
  EXPECT_EQ(kind_of([&] { iwc::consistency_mean(est, zero); }), iwc::ErrorKind::kZeroDenominator);
}

TEST(Consistency, StdHandFixture) {
  Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(3, 2);
  Eigen::MatrixXd est(3, 2);
  est << 1.0, 0.0, 2.0, 0.0, 3.0, 0.3;
  EXPECT_NEAR(iwc::consistency_std(est, truth), (1.0 + std::sqrt(0.03)) / 2.0, 1e-15);
  Eigen::MatrixXd shifted = truth.array() + 0.7;
  EXPECT_NEAR(iwc::consistency_std(shifted, truth), 0.0, 1e-15);
  EXPECT_EQ(kind_of([&] { iwc::consistency_std(est.topRows(1), truth.topRows(1)); }),
            iwc::ErrorKind::kInsufficientRepetitions);
}

TEST(Consistency, ConditionalMatchesDoubleLoopOracle) {
  std::mt19937_64 rng(4);
  std::vector<EffectEstimates> est, truth;
  for (int m = 0; m < 3; ++m) {
    est.push_back(random_effects(3, rng));
    truth.push_back(random_effects(3, rng));
  }
  double mean_sum = 0.0;
  double sd_sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      double se = 0.0, st = 0.0, d[3];
      for (int m = 0; m < 3; ++m) {
        se += est[static_cast<std::size_t>(m)].theta_given(i, j);
        st += truth[static_cast<std::size_t>(m)].theta_given(i, j);
        d[m] = est[static_cast<std::size_t>(m)].theta_given(i, j) -
               truth[static_cast<std::size_t>(m)].theta_given(i, j);
      }
      mean_sum += std::fabs(se / st - 1.0);
      const double mu = (d[0] + d[1] + d[2]) / 3.0;
      sd_sum += std::sqrt(((d[0] - mu) * (d[0] - mu) + (d[1] - mu) * (d[1] - mu) +
                           (d[2] - mu) * (d[2] - mu)) / 2.0);
    }
  }
  EXPECT_NEAR(iwc::consistency_mean_conditional(est, truth), mean_sum / 6.0, 1e-12);
  EXPECT_NEAR(iwc::consistency_std_conditional(est, truth), sd_sum / 6.0, 1e-12);
}

TEST(Consistency, ConditionalReducesToUnconditionalOnMatchingFixture) {
  // Two levels: n(n-1) = 2 = K, and theta^{0|1}, theta^{1|0} copy theta^0, theta^1.
  std::mt19937_64 rng(5);
  std::vector<EffectEstimates> est, truth;
  for (int m = 0; m < 4; ++m) {
    for (auto* s : {&est, &truth}) {
      auto e = random_effects(2, rng);
      e.theta_given(0, 1) = e.theta[0];
      e.theta_given(1, 0) = e.theta[1];
      s->push_back(e);
    }
  }
  EXPECT_DOUBLE_EQ(iwc::consistency_mean_conditional(est, truth), iwc::consistency_mean(est, truth));
  EXPECT_DOUBLE_EQ(iwc::consistency_std_conditional(est, truth), iwc::consistency_std(est, truth));
}

// ---------------------------------------------------------------- decomposition

struct Fixture {
  iwc::EvaluationSet es;
  Eigen::MatrixXd g_true;
  Eigen::MatrixXd p_true;
};

Fixture decomposition_fixture(std::mt19937_64& rng, bool exact) {
  Fixture f;
  f.es = fixtures::random_evaluation_set(50, 3, rng);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.7, 1.3);
  f.g_true = f.es.g_hat;
  f.p_true = f.es.p_hat;
  if (!exact) {
    for (Eigen::Index r = 0; r < 50; ++r) {
      for (Eigen::Index k = 0; k < 3; ++k) {
        f.g_true(r, k) += 0.3 * normal(rng);
        f.p_true(r, k) *= uniform(rng);
      }
      f.p_true.row(r) /= f.p_true.row(r).sum();
    }
  }
  return f;
}

TEST(Decomposition, TermsSumToTheTotalError) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = decomposition_fixture(rng, false);
    for (int i = 0; i < 3; ++i) {
      const auto d = iwc::decompose_iwc_error(f.es, f.g_true, f.p_true, 0.4, i);
      EXPECT_NEAR(d.sum(), d.total, 1e-10);
      EXPECT_NEAR(d.total, 0.4 - iwc::theta_iwc(f.es, i), 1e-15);
      EXPECT_EQ(d.zero, 0.0);
      for (int j = 0; j < 3; ++j) {
        if (j == i) continue;
        const auto c =
            iwc::decompose_iwc_error_conditional(f.es, f.g_true, f.p_true, -0.2, i, j, 0.3);
        EXPECT_NEAR(c.sum(), c.total, 1e-10);
        EXPECT_NEAR(c.total, -0.2 - iwc::theta_iwc_conditional(f.es, i, j), 1e-15);
      }
    }
  }
}

TEST(Decomposition, ExactNuisancesLeaveOnlySamplingTerms) {
  std::mt19937_64 rng(7);
  const auto f = decomposition_fixture(rng, true);
  for (int i = 0; i < 3; ++i) {
    const auto d = iwc::decompose_iwc_error(f.es, f.g_true, f.p_true, 0.1, i);
    EXPECT_EQ(d.g_bias, 0.0);
    EXPECT_EQ(d.mixed, 0.0);
    EXPECT_NEAR(d.sum(), d.total, 1e-12);
  }
  // With the sample share as the population marginal the conditional terms vanish too.
  const double share = static_cast<double>(f.es.count(2)) / 50.0;
  const auto c = iwc::decompose_iwc_error_conditional(f.es, f.g_true, f.p_true, 0.1, 0, 2, share);
  EXPECT_NEAR(c.g_bias, 0.0, 1e-15);
  EXPECT_NEAR(c.mixed, 0.0, 1e-15);
}

TEST(Decomposition, RejectsMismatchedInputs) {
  std::mt19937_64 rng(8);
  const auto f = decomposition_fixture(rng, false);
  EXPECT_EQ(kind_of([&] {
              iwc::decompose_iwc_error(f.es, f.g_true.topRows(10), f.p_true, 0.0, 0);
            }),
            iwc::ErrorKind::kShapeMismatch);
  EXPECT_EQ(kind_of([&] {
              iwc::decompose_iwc_error_conditional(f.es, f.g_true, f.p_true, 0.0, 1, 1, 0.3);
            }),
            iwc::ErrorKind::kUnknownTreatmentLabel);
}

}  // namespace
