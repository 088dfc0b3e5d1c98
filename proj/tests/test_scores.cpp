#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "iwc/rng.hpp"
#include "iwc/scores.hpp"

namespace {

using iwc::EstimatorFamily;
using iwc::ScoreKind;
using iwc::Slot;

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Two-level population with confounding through z:
//   z, x, u ~ N(0, 1);  P(D = 1 | x, z) = sigmoid(z + x / 2)
//   g(i, u, z) = i + u + z;  y = g(D, u, z) + N(0, 1/4)
// theta^i = i, and theta^{i|j} = i +- 2 E[z sigmoid(w)] with w = z + x/2,
// where Stein's lemma turns E[z sigmoid(w)] into E[sigmoid'(w)], w ~ N(0, 5/4).
class ToySampler : public iwc::ScoreSampler {
 public:
  ToySampler() {
    const double sd = std::sqrt(1.25);
    const int steps = 200000;
    const double lo = -14.0 * sd;
    const double h = 28.0 * sd / steps;
    double s = 0.0;
    for (int k = 0; k <= steps; ++k) {
      const double w = lo + k * h;
      const double dens = std::exp(-0.5 * w * w / 1.25) / (sd * std::sqrt(2.0 * M_PI));
      const double sig = sigmoid(w);
      s += (k == 0 || k == steps ? 0.5 : 1.0) * sig * (1.0 - sig) * dens;
    }
    stein_ = s * h;
  }

  std::size_t n_levels() const override { return 2; }

  iwc::TruthSample draw(std::size_t n, std::uint64_t seed) const override {
    iwc::Engine engine(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif;
    iwc::TruthSample s;
    const auto rows = static_cast<Eigen::Index>(n);
    s.table.u.resize(rows, 1);
    s.table.x.resize(rows, 1);
    s.table.z.resize(rows, 1);
    s.g.resize(rows, 2);
    s.p.resize(rows, 2);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double z = normal(engine);
      const double x = normal(engine);
      const double u = normal(engine);
      const double p1 = sigmoid(z + 0.5 * x);
      const int d = unif(engine) < p1 ? 1 : 0;
      s.table.u(r, 0) = u;
      s.table.x(r, 0) = x;
      s.table.z(r, 0) = z;
      s.g(r, 0) = u + z;
      s.g(r, 1) = 1.0 + u + z;
      s.p(r, 0) = 1.0 - p1;
      s.p(r, 1) = p1;
      s.table.d.push_back(d);
      s.table.y.push_back(s.g(r, d) + 0.5 * normal(engine));
    }
    s.m = true_marginals();
    return s;
  }

  iwc::TrueValue true_theta(int i, int j) const override {
    if (j < 0) return {static_cast<double>(i), 0.0};
    return {i + (j == 1 ? 2.0 : -2.0) * stein_, 0.0};
  }

  std::vector<double> true_marginals() const override { return {0.5, 0.5}; }

 private:
  double stein_ = 0.0;
};

const iwc::GateauxResult& slot_result(const std::vector<iwc::GateauxResult>& rs, Slot slot) {
  for (const auto& r : rs) {
    if (r.slot == slot) return r;
  }
  throw std::runtime_error("slot missing");
}

const ToySampler& toy() {
  static const ToySampler sampler;
  return sampler;
}

constexpr std::size_t kMc = 200000;

// ---------------------------------------------------------------- score terms

TEST(ScoreTerms, HandValues) {
  const iwc::NuisanceValues nv{0.3, 0.25, 0.5, 0.4};
  // IoC unconditional ignores y and d.
  auto t = iwc::score_terms({EstimatorFamily::kIoc, 1, -1}, 9.0, 1, nv);
  EXPECT_DOUBLE_EQ(t.slope, 1.0);
  EXPECT_DOUBLE_EQ(t.offset, -0.3);
  // IwC unconditional on a level-i row: -(g + (y - g) / a).
  t = iwc::score_terms({EstimatorFamily::kIwc, 1, -1}, 1.3, 1, nv);
  EXPECT_DOUBLE_EQ(t.offset, -(0.3 + 1.0 / 0.25));
  t = iwc::score_terms({EstimatorFamily::kIwc, 1, -1}, 1.3, 0, nv);
  EXPECT_DOUBLE_EQ(t.offset, -0.3);
  // IwC conditional on a level-j row: slope 1/m_j, offset -g/m_j.
  t = iwc::score_terms({EstimatorFamily::kIwc, 1, 0}, 1.3, 0, nv);
  EXPECT_DOUBLE_EQ(t.slope, 1.0 / 0.4);
  EXPECT_DOUBLE_EQ(t.offset, -0.3 / 0.4);
  // ... and on a level-i row: slope 0, offset -(a_j / a_i)(y - g) / m_j.
  t = iwc::score_terms({EstimatorFamily::kIwc, 1, 0}, 1.3, 1, nv);
  EXPECT_DOUBLE_EQ(t.slope, 0.0);
  EXPECT_DOUBLE_EQ(t.offset, -(0.5 / 0.25) * 1.0 / 0.4);
  // DRE conditional has unit slope on every row.
  t = iwc::score_terms({EstimatorFamily::kDre, 1, 0}, 1.3, 2, nv);
  EXPECT_DOUBLE_EQ(t.slope, 1.0);
  EXPECT_DOUBLE_EQ(t.offset, 0.0);
  t = iwc::score_terms({EstimatorFamily::kIoc, 1, 0}, 1.3, 0, nv);
  EXPECT_DOUBLE_EQ(t.slope, 1.0 / 0.4);
  EXPECT_NEAR(iwc::eval_score({EstimatorFamily::kIoc, 1, 0}, 1.3, 0, 0.3, nv), 0.0, 1e-15);
}

TEST(ScoreTerms, DomainAndKindErrors) {
  iwc::NuisanceValues bad_a{0.0, 0.0, 0.5, 0.5};
  try {
    iwc::score_terms({EstimatorFamily::kIwc, 0, -1}, 1.0, 0, bad_a);
    ADD_FAILURE();
  } catch (const iwc::Error& e) {
    EXPECT_EQ(e.kind(), iwc::ErrorKind::kDomainError);
  }
  iwc::NuisanceValues bad_m{0.0, 0.5, 0.5, 0.0};
  EXPECT_THROW(iwc::score_terms({EstimatorFamily::kDre, 0, 1}, 1.0, 0, bad_m), iwc::Error);
  EXPECT_THROW((ScoreKind{EstimatorFamily::kIwc, 1, 1}.validate(3)), iwc::Error);
  EXPECT_THROW((ScoreKind{EstimatorFamily::kIwc, 3, -1}.validate(3)), iwc::Error);
  EXPECT_EQ((ScoreKind{EstimatorFamily::kDre, 2, 0}.name()), "DRE(2|0)");
}

TEST(ScoreTerms, SlotsReadByEachScore) {
  EXPECT_EQ(iwc::slots_for({EstimatorFamily::kIoc, 0, -1}), std::vector<Slot>{Slot::kG});
  EXPECT_EQ(iwc::slots_for({EstimatorFamily::kIwc, 0, -1}), (std::vector<Slot>{Slot::kG, Slot::kAi}));
  EXPECT_EQ(iwc::slots_for({EstimatorFamily::kIoc, 0, 1}), (std::vector<Slot>{Slot::kG, Slot::kMj}));
  EXPECT_EQ(iwc::slots_for({EstimatorFamily::kDre, 0, 1}).size(), 4u);
}

// ---------------------------------------------------------------- roots

TEST(SolveTheta, RootsReproduceTheEstimators) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const auto es = fixtures::random_evaluation_set(35, 3, rng);
    std::vector<double> share(3);
    for (int j = 0; j < 3; ++j) share[static_cast<std::size_t>(j)] = es.count(j) / 35.0;
    for (int i = 0; i < 3; ++i) {
      EXPECT_NEAR(iwc::solve_theta({EstimatorFamily::kIoc, i, -1}, es, share), iwc::theta_ioc(es, i), 1e-12);
      EXPECT_NEAR(iwc::solve_theta({EstimatorFamily::kIwc, i, -1}, es, share), iwc::theta_iwc(es, i), 1e-12);
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        EXPECT_NEAR(iwc::solve_theta({EstimatorFamily::kIoc, i, j}, es, share),
                    iwc::theta_ioc_conditional(es, i, j), 1e-12);
        EXPECT_NEAR(iwc::solve_theta({EstimatorFamily::kIwc, i, j}, es, share),
                    iwc::theta_iwc_conditional(es, i, j), 1e-12);
        const std::vector<double> m{0.3, 0.3, 0.3};
        EXPECT_NEAR(iwc::solve_theta({EstimatorFamily::kDre, i, j}, es, m),
                    iwc::theta_dre_conditional(es, i, j, 0.3), 1e-12);
      }
    }
  }
}

TEST(SolveTheta, FunctionValuedNuisancesMatchMatrices) {
  const auto s = toy().draw(500, 3);
  iwc::NuisancePoint point;
  point.g = [](int level, std::span<const double> u, std::span<const double> z) {
    return level + u[0] + z[0];
  };
  point.a = [](std::span<const double> x, std::span<const double> z) {
    const double p1 = sigmoid(z[0] + 0.5 * x[0]);
    return Eigen::Vector2d(1.0 - p1, p1).eval();
  };
  point.m = {0.5, 0.5};
  iwc::EvaluationSet es;
  es.y = s.table.y;
  es.d = s.table.d;
  es.g_hat = s.g;
  es.p_hat = s.p;
  for (ScoreKind kind : {ScoreKind{EstimatorFamily::kIwc, 1, -1}, ScoreKind{EstimatorFamily::kDre, 0, 1}}) {
    EXPECT_NEAR(iwc::solve_theta(kind, s.table, point), iwc::solve_theta(kind, es, point.m), 1e-12);
  }
}

// ---------------------------------------------------------------- moment

TEST(Moment, TrueNuisancesZeroTheMeanScore) {
  for (auto family : {EstimatorFamily::kIoc, EstimatorFamily::kIwc, EstimatorFamily::kDre}) {
    for (int j : {-1, 0}) {
      if (family == EstimatorFamily::kDre && j < 0) continue;
      const ScoreKind kind{family, 1, j};
      const auto r = iwc::moment_check(kind, toy(), kMc, 101);
      EXPECT_TRUE(r.pass) << kind.name() << " mean " << r.mean << " se " << r.stderr_;
    }
  }
}

TEST(Moment, ShiftedThetaIsDetected) {
  const auto r = iwc::moment_check({EstimatorFamily::kIwc, 1, -1}, toy(), kMc, 102, 0.05);
  EXPECT_FALSE(r.pass);
  EXPECT_NEAR(r.mean, 0.05, 5 * r.stderr_);
}

// ---------------------------------------------------------------- Gateaux

TEST(Gateaux, IgnoringCausalityHasUnitGSlope) {
  const auto dir = iwc::default_direction(2, toy().true_marginals());
  const auto rs = iwc::gateaux_check({EstimatorFamily::kIoc, 1, -1}, toy(), dir,
                                     iwc::kDefaultRGrid, 20000, 5);
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_NEAR(rs[0].slope, -1.0, 1e-12);
  EXPECT_FALSE(rs[0].orthogonal);
}

TEST(Gateaux, IncorporatingCausalityIsOrthogonalInEverySlot) {
  const auto dir = iwc::default_direction(2, toy().true_marginals());
  for (int j : {-1, 0}) {
    const ScoreKind kind{EstimatorFamily::kIwc, 1, j};
    for (const auto& r : iwc::gateaux_check(kind, toy(), dir, iwc::kDefaultRGrid, kMc, 6)) {
      EXPECT_TRUE(r.orthogonal) << kind.name() << " " << iwc::slot_name(r.slot) << " slope "
                                << r.slope << " se " << r.stderr_;
    }
  }
  const auto rand_dir = iwc::random_direction(2, 1, 1, 1, toy().true_marginals(), 99);
  for (const auto& r : iwc::gateaux_check({EstimatorFamily::kIwc, 0, 1}, toy(), rand_dir,
                                          iwc::kDefaultRGrid, kMc, 7)) {
    EXPECT_TRUE(r.orthogonal) << iwc::slot_name(r.slot) << " slope " << r.slope;
  }
}

TEST(Gateaux, DoublyRobustConditionalIsNotOrthogonalInTheMarginal) {
  const auto dir = iwc::default_direction(2, toy().true_marginals());
  const ScoreKind kind{EstimatorFamily::kDre, 1, 0};
  const auto rs = iwc::gateaux_check(kind, toy(), dir, iwc::kDefaultRGrid, kMc, 8);
  const auto& m = slot_result(rs, Slot::kMj);
  EXPECT_FALSE(m.orthogonal);
  // d/dr of -E[...] / (m + r dm) at r = 0 is theta * dm / m with dm = 0.1 m.
  EXPECT_NEAR(m.slope, 0.1 * toy().true_theta(1, 0).value, 5 * m.stderr_ + 1e-3);
  EXPECT_TRUE(slot_result(rs, Slot::kG).orthogonal);
  EXPECT_TRUE(slot_result(rs, Slot::kAi).orthogonal);
  EXPECT_TRUE(slot_result(rs, Slot::kAj).orthogonal);
}

TEST(Gateaux, ConditionalIgnoringCausalityIsNotOrthogonalInG) {
  const auto dir = iwc::default_direction(2, toy().true_marginals());
  const auto rs = iwc::gateaux_check({EstimatorFamily::kIoc, 1, 0}, toy(), dir,
                                     iwc::kDefaultRGrid, kMc, 9);
  EXPECT_NEAR(slot_result(rs, Slot::kG).slope, -1.0, 0.02);
  EXPECT_TRUE(slot_result(rs, Slot::kMj).orthogonal);
}

TEST(Gateaux, PathLeavingTheUnitIntervalIsRejected) {
  auto dir = iwc::default_direction(2, toy().true_marginals());
  dir.delta_a = [](int, double, std::span<const double>, std::span<const double>) { return 50.0; };
  try {
    iwc::gateaux_check({EstimatorFamily::kIwc, 1, -1}, toy(), dir, iwc::kDefaultRGrid, 100, 1);
    ADD_FAILURE();
  } catch (const iwc::Error& e) {
    EXPECT_EQ(e.kind(), iwc::ErrorKind::kInvalidPath);
  }
}

TEST(Gateaux, JsonVerdicts) {
  iwc::GateauxResult r;
  r.slot = Slot::kMj;
  r.slope = 0.2;
  r.stderr_ = 0.01;
  const auto j = iwc::to_json(r);
  EXPECT_EQ(j["slot"], "m_j");
  EXPECT_EQ(j["verdict"], "not_orthogonal");
}

}  // namespace
