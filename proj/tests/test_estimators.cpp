#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "iwc/estimators.hpp"
#include "oracle.hpp"

namespace {

void expect_rel(double a, double b, double tol) {
  EXPECT_LE(std::fabs(a - b), tol * std::max(1.0, std::fabs(b))) << a << " vs " << b;
}

// ---------------------------------------------------------------- credit example

TEST(CreditExample, IgnoringCausalityEstimates) {
  const auto es = fixtures::credit_evaluation_set();
  EXPECT_NEAR(iwc::theta_ioc(es, 0), 0.0733, 5e-4);
  EXPECT_NEAR(iwc::theta_ioc(es, 1), 0.0737, 5e-4);
  EXPECT_NEAR(iwc::theta_ioc_conditional(es, 0, 1), 0.0617, 5e-4);
}

TEST(CreditExample, IncorporatingCausalityEstimates) {
  const auto es = fixtures::credit_evaluation_set();
  EXPECT_NEAR(iwc::theta_iwc(es, 0), 0.0670, 5e-4);
  EXPECT_NEAR(iwc::theta_iwc(es, 1), 0.3114, 5e-4);
  EXPECT_NEAR(iwc::theta_iwc_conditional(es, 0, 1), 0.0610, 5e-4);
}

TEST(CreditExample, EffectsAgainstTruth) {
  // The published propensities contain an exact 0, so the validated family
  // entry points are bypassed in favour of the per-parameter estimators.
  const auto es = fixtures::credit_evaluation_set();
  const auto truth = iwc::counterfactual_truth(fixtures::credit_truth_matrix(), es.d);
  const double factual = (0.533 + 0.541) / 2;
  EXPECT_NEAR(truth.ate(0, 1), -0.4993, 5e-4);
  EXPECT_NEAR(truth.atte(0, 1, 1), -0.4985, 5e-4);
  EXPECT_NEAR(iwc::theta_ioc(es, 0) - iwc::theta_ioc(es, 1), -0.0004, 5e-4);
  EXPECT_NEAR(iwc::theta_iwc(es, 0) - iwc::theta_iwc(es, 1), -0.2444, 5e-4);
  EXPECT_NEAR(iwc::theta_ioc_conditional(es, 0, 1) - factual, -0.4753, 5e-4);
  EXPECT_NEAR(iwc::theta_iwc_conditional(es, 0, 1) - factual, -0.4760, 5e-4);
  EXPECT_NEAR(truth.theta_given(1, 1), factual, 1e-15);
}

// ---------------------------------------------------------------- oracle

TEST(Oracle, TwoHundredRandomTables) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> levels_dist(2, 5);
  for (int table = 0; table < 200; ++table) {
    const int n = levels_dist(rng);
    const std::size_t rows = std::uniform_int_distribution<std::size_t>(n, 50)(rng);
    const auto es = fixtures::random_evaluation_set(rows, n, rng);
    const double m_j = std::uniform_real_distribution<double>(0.05, 0.9)(rng);
    for (int i = 0; i < n; ++i) {
      expect_rel(iwc::theta_ioc(es, i), oracle::ioc(es, i), 1e-12);
      expect_rel(iwc::theta_iwc(es, i), oracle::iwc(es, i), 1e-12);
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        expect_rel(iwc::theta_ioc_conditional(es, i, j), oracle::ioc_given(es, i, j), 1e-12);
        expect_rel(iwc::theta_iwc_conditional(es, i, j), oracle::iwc_given(es, i, j), 1e-12);
        expect_rel(iwc::theta_dre_conditional(es, i, j, m_j), oracle::dre_given(es, i, j, m_j),
                   1e-12);
      }
    }
  }
}

// Long enough for the vector kernels' main loops and tails to both run.
TEST(Oracle, LargeTableMatchesOracle) {
  std::mt19937_64 rng(5);
  const auto es = fixtures::random_evaluation_set(5003, 4, rng);
  for (int i = 0; i < 4; ++i) expect_rel(iwc::theta_iwc(es, i), oracle::iwc(es, i), 1e-12);
}

// ---------------------------------------------------------------- properties

TEST(Dre, DefaultMarginalReducesToIwc) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto es = fixtures::random_evaluation_set(40, 3, rng);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        expect_rel(iwc::theta_dre_conditional(es, i, j), iwc::theta_iwc_conditional(es, i, j),
                   1e-13);
      }
    }
  }
}

TEST(Dre, ScalesInverselyWithTheMarginal) {
  std::mt19937_64 rng(8);
  const auto es = fixtures::random_evaluation_set(30, 3, rng);
  const double a = iwc::theta_dre_conditional(es, 0, 2, 0.2);
  const double b = iwc::theta_dre_conditional(es, 0, 2, 0.4);
  expect_rel(a, 2.0 * b, 1e-13);
  EXPECT_THROW(iwc::theta_dre_conditional(es, 0, 2, 0.0), iwc::Error);
}

TEST(Properties, PerfectOutcomeModelMakesCorrectionsVanish) {
  std::mt19937_64 rng(9);
  auto es = fixtures::random_evaluation_set(25, 3, rng);
  for (std::size_t m = 0; m < es.rows(); ++m) es.y[m] = es.g_hat(static_cast<long>(m), es.d[m]);
  for (int i = 0; i < 3; ++i) {
    expect_rel(iwc::theta_iwc(es, i), iwc::theta_ioc(es, i), 1e-14);
    for (int j = 0; j < 3; ++j) {
      if (i != j) {
        expect_rel(iwc::theta_iwc_conditional(es, i, j), iwc::theta_ioc_conditional(es, i, j),
                   1e-14);
      }
    }
  }
}

TEST(Properties, PropensityScalingMovesOnlyUnconditionalEstimates) {
  std::mt19937_64 rng(10);
  auto es = fixtures::random_evaluation_set(30, 3, rng);
  const double before = iwc::theta_iwc(es, 1);
  const double before_given = iwc::theta_iwc_conditional(es, 1, 0);
  es.p_hat *= 0.5;
  const double after = iwc::theta_iwc(es, 1);
  const double after_given = iwc::theta_iwc_conditional(es, 1, 0);
  EXPECT_GT(std::fabs(after - before), 1e-6);
  expect_rel(after_given, before_given, 1e-14);
  // Halving every P_hat doubles the correction term exactly.
  const double correction = before - iwc::theta_ioc(es, 1);
  expect_rel(after - iwc::theta_ioc(es, 1), 2.0 * correction, 1e-12);
}

TEST(Properties, EffectMatricesAreAntisymmetric) {
  std::mt19937_64 rng(11);
  const auto es = fixtures::random_evaluation_set(40, 4, rng);
  const auto report = iwc::full_report(es);
  for (auto f : {iwc::EstimatorFamily::kIoc, iwc::EstimatorFamily::kIwc, iwc::EstimatorFamily::kDre}) {
    const auto& e = report.family(f);
    const auto ate = e.ate_matrix();
    EXPECT_TRUE(ate.isApprox(-ate.transpose())) << iwc::estimator_family_name(f);
    for (int i = 0; i < 4; ++i) {
      for (int k = 0; k < 4; ++k) {
        for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(e.atte(i, k, j), -e.atte(k, i, j));
      }
    }
  }
  EXPECT_GE(report.max_ipw_weight, 1.0);
}

TEST(Properties, DiagonalIsTheFactualMean) {
  std::mt19937_64 rng(12);
  const auto es = fixtures::random_evaluation_set(30, 3, rng);
  const auto e = iwc::estimate_family(es, iwc::EstimatorFamily::kIwc);
  for (int j = 0; j < 3; ++j) {
    double s = 0.0;
    int n = 0;
    for (std::size_t m = 0; m < es.rows(); ++m) {
      if (es.d[m] == j) {
        s += es.y[m];
        ++n;
      }
    }
    expect_rel(e.theta_given(j, j), s / n, 1e-14);
  }
}

// ---------------------------------------------------------------- errors

TEST(Errors, EmptyTreatedGroup) {
  std::mt19937_64 rng(13);
  auto es = fixtures::random_evaluation_set(10, 3, rng);
  for (auto& d : es.d) d = d == 2 ? 0 : d;
  try {
    iwc::theta_iwc_conditional(es, 0, 2);
    ADD_FAILURE();
  } catch (const iwc::Error& e) {
    EXPECT_EQ(e.kind(), iwc::ErrorKind::kEmptyTreatedGroup);
  }
  const auto report = iwc::estimate_family(es, iwc::EstimatorFamily::kIwc);
  EXPECT_FALSE(report.available[2]);
  EXPECT_TRUE(std::isnan(report.theta_given(0, 2)));
  EXPECT_TRUE(std::isfinite(report.theta[2]));
}

TEST(Errors, ValidationRejectsBadBlocks) {
  std::mt19937_64 rng(14);
  auto es = fixtures::random_evaluation_set(10, 2, rng);
  es.p_hat(3, 1) = 0.0;
  EXPECT_THROW(es.validate(), iwc::Error);
  es = fixtures::random_evaluation_set(10, 2, rng);
  es.d[0] = 2;
  EXPECT_THROW(es.validate(), iwc::Error);
  EXPECT_THROW(iwc::theta_ioc(es, 5), iwc::Error);
}

TEST(Report, JsonCarriesEveryFamily) {
  std::mt19937_64 rng(15);
  const auto es = fixtures::random_evaluation_set(4, 2, rng);
  auto report = iwc::full_report(es);
  report.truth = iwc::counterfactual_truth(fixtures::credit_truth_matrix(), es.d);
  const auto j = report.to_json({1000.0, 2000.0});
  EXPECT_EQ(j["schema"], "iwc.estimate_report/1");
  for (const char* f : {"IoC", "IwC", "DRE"}) {
    EXPECT_EQ(j["families"][f]["theta"].size(), 2u);
    EXPECT_EQ(j["families"][f]["atte"][0][1].size(), 2u);
  }
  EXPECT_TRUE(j.contains("truth"));
}

}  // namespace
