#pragma once

// Shared fixtures: the credit-limit worked example and small random tables.

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "iwc/data.hpp"
#include "iwc/estimators.hpp"

namespace fixtures {

// Training rows (z, x, u, d, y) for the credit-limit example. The fourth
// outcome is printed as .800 in the source table; every other row and the
// generating formula give .080, which is what is used here.
struct CreditRow {
  double z, x, u, d, y;
};

inline const std::array<CreditRow, 10> kCreditTrain{{
    {1000, 21, 500, 1000, 0.095},
    {2000, 22, 1000, 1000, 0.090},
    {3000, 23, 1500, 1000, 0.087},
    {4000, 24, 2000, 1000, 0.080},
    {5000, 25, 2500, 1000, 0.075},
    {6000, 26, 3000, 2000, 0.569},
    {7000, 27, 3500, 2000, 0.566},
    {8000, 28, 4000, 2000, 0.562},
    {9000, 29, 4500, 2000, 0.553},
    {10000, 30, 5000, 2000, 0.551},
}};

inline const std::array<CreditRow, 4> kCreditEval{{
    {3000, 20, 500, 1000, 0.075},
    {4000, 22, 1000, 1000, 0.071},
    {8000, 24, 1500, 2000, 0.533},
    {8000, 26, 3000, 2000, 0.541},
}};

// Published fitted potential outcomes and probabilities for the evaluation rows.
inline constexpr double kCreditGHat[4][2] = {{0.08750311, 0.08846092},
                                             {0.08244466, 0.08318813},
                                             {0.06524595, 0.06526066},
                                             {0.05816412, 0.05787875}};
inline constexpr double kCreditPHat[4][2] = {
    {0.9818, 0.0182}, {0.9005, 0.0995}, {0.0001, 0.9999}, {0.0000, 1.0000}};
// True potential outcomes (Y(1000), Y(2000)).
inline constexpr double kCreditTruth[4][2] = {
    {0.075, 0.575}, {0.071, 0.571}, {0.037, 0.533}, {0.040, 0.541}};

template <std::size_t N>
iwc::ObservationTable credit_table(const std::array<CreditRow, N>& rows) {
  iwc::ObservationTable t;
  t.u.resize(N, 1);
  t.x.resize(N, 1);
  t.z.resize(N, 1);
  for (std::size_t r = 0; r < N; ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    t.y.push_back(rows[r].y);
    t.d.push_back(rows[r].d == 1000 ? 0 : 1);
    t.u(ri, 0) = rows[r].u;
    t.x(ri, 0) = rows[r].x;
    t.z(ri, 0) = rows[r].z;
  }
  return t;
}

inline iwc::TreatmentCoding credit_coding() { return iwc::TreatmentCoding({1000.0, 2000.0}); }

inline iwc::EvaluationSet credit_evaluation_set() {
  iwc::EvaluationSet es;
  es.g_hat.resize(4, 2);
  es.p_hat.resize(4, 2);
  for (int r = 0; r < 4; ++r) {
    es.y.push_back(kCreditEval[static_cast<std::size_t>(r)].y);
    es.d.push_back(kCreditEval[static_cast<std::size_t>(r)].d == 1000 ? 0 : 1);
    for (int c = 0; c < 2; ++c) {
      es.g_hat(r, c) = kCreditGHat[r][c];
      es.p_hat(r, c) = kCreditPHat[r][c];
    }
  }
  return es;
}

inline Eigen::MatrixXd credit_truth_matrix() {
  Eigen::MatrixXd g(4, 2);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 2; ++c) g(r, c) = kCreditTruth[r][c];
  }
  return g;
}

// Random evaluation set with every level present and propensities on the
// simplex bounded away from zero.
inline iwc::EvaluationSet random_evaluation_set(std::size_t rows, int levels,
                                                std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  iwc::EvaluationSet es;
  es.g_hat.resize(static_cast<Eigen::Index>(rows), levels);
  es.p_hat.resize(static_cast<Eigen::Index>(rows), levels);
  std::uniform_int_distribution<int> label(0, levels - 1);
  for (std::size_t m = 0; m < rows; ++m) {
    const auto r = static_cast<Eigen::Index>(m);
    const int d = m < static_cast<std::size_t>(levels) ? static_cast<int>(m) : label(rng);
    es.d.push_back(d);
    es.y.push_back(normal(rng));
    double total = 0.0;
    for (int c = 0; c < levels; ++c) {
      es.g_hat(r, c) = normal(rng);
      es.p_hat(r, c) = unif(rng);
      total += es.p_hat(r, c);
    }
    es.p_hat.row(r) /= total;
  }
  return es;
}

}  // namespace fixtures
