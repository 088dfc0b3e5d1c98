#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "iwc/data.hpp"
#include "iwc/learners.hpp"
#include "json.hpp"

namespace iwc {

// Fitted nuisances plus the rows the estimators average over.
struct NuisanceBundle {
  const FittedOutcomeModel* g_hat = nullptr;
  const FittedPropensityModel* p_hat = nullptr;
  RowIndex eval_rows;
};

// Everything the estimators read, materialized once: observed y and labels
// over the evaluation rows, g_hat(i, u_m, z_m) for every level i (column i),
// and clipped propensities P_hat_i(x_m, z_m) (column i).
struct EvaluationSet {
  std::vector<double> y;
  std::vector<int> d;
  Eigen::MatrixXd g_hat;
  Eigen::MatrixXd p_hat;

  std::size_t rows() const { return y.size(); }
  std::size_t n_levels() const { return static_cast<std::size_t>(g_hat.cols()); }
  std::size_t count(int level) const;
  void validate() const;  // throws ShapeMismatch / UnknownTreatmentLabel / DomainError
};

EvaluationSet make_evaluation_set(const ObservationTable& table,
                                  const NuisanceBundle& bundle);

// (1/N) sum_m g_hat(i, u_m, z_m)
double theta_ioc(const EvaluationSet& es, int i);
// Average of g_hat(i, ., .) over rows observed at level j.
double theta_ioc_conditional(const EvaluationSet& es, int i, int j);
// theta_ioc plus (1/N) sum over level-i rows of (y - g_hat_i) / P_hat_i.
double theta_iwc(const EvaluationSet& es, int i);
// (1/N_j) [sum over level-j rows of g_hat_i
//          + sum over level-i rows of (P_hat_j / P_hat_i)(y - g_hat_i)]
double theta_iwc_conditional(const EvaluationSet& es, int i, int j);
// Root of the empirical doubly-robust score with marginal m_j; m_j defaults
// to N_j / N, where the root coincides with theta_iwc_conditional.
double theta_dre_conditional(const EvaluationSet& es, int i, int j,
                             std::optional<double> m_j = std::nullopt);

double theta_ioc(const ObservationTable& t, const NuisanceBundle& b, int i);
double theta_ioc_conditional(const ObservationTable& t, const NuisanceBundle& b,
                             int i, int j);
double theta_iwc(const ObservationTable& t, const NuisanceBundle& b, int i);
double theta_iwc_conditional(const ObservationTable& t, const NuisanceBundle& b,
                             int i, int j);
double theta_dre_conditional(const ObservationTable& t, const NuisanceBundle& b,
                             int i, int j, std::optional<double> m_j = std::nullopt);

enum class EstimatorFamily { kIoc, kIwc, kDre };
const char* estimator_family_name(EstimatorFamily f);

// theta^i and theta^{i|j} for one construction. Column j of theta_given is
// missing (NaN, available[j] = false) when no evaluation row has level j.
// The diagonal theta^{j|j} is the factual mean of y over level j.
struct EffectEstimates {
  Eigen::VectorXd theta;
  Eigen::MatrixXd theta_given;  // (i, j) -> theta^{i|j}
  std::vector<bool> available;

  std::size_t n_levels() const { return static_cast<std::size_t>(theta.size()); }
  double ate(int i, int k) const { return theta[i] - theta[k]; }
  double atte(int i, int k, int j) const {
    return theta_given(i, j) - theta_given(k, j);
  }
  Eigen::MatrixXd ate_matrix() const;
};

struct EstimateReport {
  std::size_t n_rows = 0;
  std::vector<std::size_t> counts;
  EffectEstimates ioc;
  EffectEstimates iwc;
  EffectEstimates dre;
  std::optional<EffectEstimates> truth;
  double max_ipw_weight = 0.0;

  const EffectEstimates& family(EstimatorFamily f) const;
  nlohmann::json to_json(const std::vector<double>& level_values) const;
};

EffectEstimates estimate_family(const EvaluationSet& es, EstimatorFamily family);
EstimateReport full_report(const EvaluationSet& es);
EstimateReport full_report(const ObservationTable& table, const NuisanceBundle& bundle);

// Ground truth from counterfactual outcomes: g_true(m, i) = g(d^i, u_m, z_m).
// theta^{i|j} averages g_true(., i) over rows observed at level j.
EffectEstimates counterfactual_truth(const Eigen::MatrixXd& g_true,
                                     const std::vector<int>& d);

}  // namespace iwc
