#include "iwc/estimators.hpp"

#include <cmath>
#include <limits>

#include "iwc/kernels.hpp"

namespace iwc {

std::size_t EvaluationSet::count(int level) const {
  std::size_t c = 0;
  for (int v : d) c += v == level ? 1 : 0;
  return c;
}

void EvaluationSet::validate() const {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (n == 0) throw Error(ErrorKind::kShapeMismatch, "no evaluation rows");
  if (static_cast<Eigen::Index>(d.size()) != n || g_hat.rows() != n ||
      p_hat.rows() != n || p_hat.cols() != g_hat.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "evaluation set blocks differ in shape");
  }
  for (int v : d) {
    if (v < 0 || v >= g_hat.cols()) {
      throw Error(ErrorKind::kUnknownTreatmentLabel, "label " + std::to_string(v));
    }
  }
  if (!(p_hat.array() > 0.0).all()) {
    throw Error(ErrorKind::kDomainError, "propensities must be positive");
  }
}

EvaluationSet make_evaluation_set(const ObservationTable& table,
                                  const NuisanceBundle& bundle) {
  if (bundle.g_hat == nullptr || bundle.p_hat == nullptr) {
    throw Error(ErrorKind::kConfigError, "nuisance bundle is incomplete");
  }
  if (bundle.eval_rows.empty()) {
    throw Error(ErrorKind::kShapeMismatch, "eval_rows is empty");
  }
  if (bundle.g_hat->n_levels != bundle.p_hat->n_levels()) {
    throw Error(ErrorKind::kDimensionMismatch,
                "outcome and propensity models disagree on the level count");
  }
  EvaluationSet es;
  for (std::size_t r : bundle.eval_rows) {
    if (r >= table.rows()) throw Error(ErrorKind::kShapeMismatch, "eval row out of range");
    es.y.push_back(table.y[r]);
    es.d.push_back(table.d[r]);
  }
  es.g_hat = bundle.g_hat->predict_all(table, bundle.eval_rows);
  es.p_hat = bundle.p_hat->predict_all(table, bundle.eval_rows);
  es.validate();
  return es;
}

namespace {

// Rows at level `level`, gathered into contiguous arrays for the kernels.
struct Gathered {
  std::vector<double> y, g, num, den;
};

Gathered gather(const EvaluationSet& es, int level, int g_col, int num_col) {
  Gathered out;
  for (std::size_t m = 0; m < es.rows(); ++m) {
    if (es.d[m] != level) continue;
    const auto r = static_cast<Eigen::Index>(m);
    out.y.push_back(es.y[m]);
    out.g.push_back(es.g_hat(r, g_col));
    out.num.push_back(num_col < 0 ? 1.0 : es.p_hat(r, num_col));
    out.den.push_back(es.p_hat(r, level));
  }
  return out;
}

void check_level(const EvaluationSet& es, int level) {
  if (level < 0 || static_cast<std::size_t>(level) >= es.n_levels()) {
    throw Error(ErrorKind::kUnknownTreatmentLabel, "level " + std::to_string(level));
  }
}

double column_sum(const EvaluationSet& es, int i) {
  return kernels::sum({es.g_hat.col(i).data(), es.rows()});
}

double level_sum_of_g(const EvaluationSet& es, int i, int j) {
  std::vector<double> vals;
  for (std::size_t m = 0; m < es.rows(); ++m) {
    if (es.d[m] == j) vals.push_back(es.g_hat(static_cast<Eigen::Index>(m), i));
  }
  return kernels::sum(vals);
}

std::size_t require_level_rows(const EvaluationSet& es, int j) {
  const std::size_t n_j = es.count(j);
  if (n_j == 0) {
    throw Error(ErrorKind::kEmptyTreatedGroup,
                "no evaluation rows at level " + std::to_string(j));
  }
  return n_j;
}

// sum over level-i rows of (P_hat_j / P_hat_i)(y - g_hat_i); j < 0 means weight 1/P_hat_i.
double correction(const EvaluationSet& es, int i, int j) {
  const Gathered g = gather(es, i, i, j);
  return kernels::weighted_residual_sum(g.y, g.g, g.num, g.den);
}

double factual_mean(const EvaluationSet& es, int j) {
  std::vector<double> vals;
  for (std::size_t m = 0; m < es.rows(); ++m) {
    if (es.d[m] == j) vals.push_back(es.y[m]);
  }
  return kernels::sum(vals) / static_cast<double>(vals.size());
}

}  // namespace

double theta_ioc(const EvaluationSet& es, int i) {
  check_level(es, i);
  return column_sum(es, i) / static_cast<double>(es.rows());
}

double theta_ioc_conditional(const EvaluationSet& es, int i, int j) {
  check_level(es, i);
  check_level(es, j);
  const std::size_t n_j = require_level_rows(es, j);
  return level_sum_of_g(es, i, j) / static_cast<double>(n_j);
}

double theta_iwc(const EvaluationSet& es, int i) {
  check_level(es, i);
  return (column_sum(es, i) + correction(es, i, -1)) / static_cast<double>(es.rows());
}

double theta_iwc_conditional(const EvaluationSet& es, int i, int j) {
  check_level(es, i);
  check_level(es, j);
  const std::size_t n_j = require_level_rows(es, j);
  return (level_sum_of_g(es, i, j) + correction(es, i, j)) / static_cast<double>(n_j);
}

double theta_dre_conditional(const EvaluationSet& es, int i, int j,
                             std::optional<double> m_j) {
  check_level(es, i);
  check_level(es, j);
  const std::size_t n_j = require_level_rows(es, j);
  const auto n = static_cast<double>(es.rows());
  const double m = m_j.value_or(static_cast<double>(n_j) / n);
  if (!(m > 0.0)) throw Error(ErrorKind::kDomainError, "m_j must be positive");
  return (level_sum_of_g(es, i, j) + correction(es, i, j)) / (n * m);
}

double theta_ioc(const ObservationTable& t, const NuisanceBundle& b, int i) {
  return theta_ioc(make_evaluation_set(t, b), i);
}
double theta_ioc_conditional(const ObservationTable& t, const NuisanceBundle& b,
                             int i, int j) {
  return theta_ioc_conditional(make_evaluation_set(t, b), i, j);
}
double theta_iwc(const ObservationTable& t, const NuisanceBundle& b, int i) {
  return theta_iwc(make_evaluation_set(t, b), i);
}
double theta_iwc_conditional(const ObservationTable& t, const NuisanceBundle& b,
                             int i, int j) {
  return theta_iwc_conditional(make_evaluation_set(t, b), i, j);
}
double theta_dre_conditional(const ObservationTable& t, const NuisanceBundle& b,
                             int i, int j, std::optional<double> m_j) {
  return theta_dre_conditional(make_evaluation_set(t, b), i, j, m_j);
}

const char* estimator_family_name(EstimatorFamily f) {
  switch (f) {
    case EstimatorFamily::kIoc: return "IoC";
    case EstimatorFamily::kIwc: return "IwC";
    case EstimatorFamily::kDre: return "DRE";
  }
  return "unknown";
}

Eigen::MatrixXd EffectEstimates::ate_matrix() const {
  const auto n = theta.size();
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) m(i, k) = i == k ? 0.0 : theta[i] - theta[k];
  }
  return m;
}

EffectEstimates estimate_family(const EvaluationSet& es, EstimatorFamily family) {
  es.validate();
  const auto n = static_cast<int>(es.n_levels());
  EffectEstimates out;
  out.theta.resize(n);
  out.theta_given = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  out.available.assign(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n; ++i) {
    out.theta[i] = family == EstimatorFamily::kIoc ? theta_ioc(es, i) : theta_iwc(es, i);
  }
  for (int j = 0; j < n; ++j) {
    if (es.count(j) == 0) continue;
    out.available[static_cast<std::size_t>(j)] = true;
    for (int i = 0; i < n; ++i) {
      double v;
      if (i == j) {
        v = factual_mean(es, j);
      } else if (family == EstimatorFamily::kIoc) {
        v = theta_ioc_conditional(es, i, j);
      } else if (family == EstimatorFamily::kIwc) {
        v = theta_iwc_conditional(es, i, j);
      } else {
        v = theta_dre_conditional(es, i, j);
      }
      out.theta_given(i, j) = v;
    }
  }
  return out;
}

EstimateReport full_report(const EvaluationSet& es) {
  EstimateReport report;
  report.n_rows = es.rows();
  for (std::size_t j = 0; j < es.n_levels(); ++j) {
    report.counts.push_back(es.count(static_cast<int>(j)));
  }
  report.ioc = estimate_family(es, EstimatorFamily::kIoc);
  report.iwc = estimate_family(es, EstimatorFamily::kIwc);
  report.dre = estimate_family(es, EstimatorFamily::kDre);
  for (std::size_t m = 0; m < es.rows(); ++m) {
    const double w = 1.0 / es.p_hat(static_cast<Eigen::Index>(m), es.d[m]);
    report.max_ipw_weight = std::max(report.max_ipw_weight, w);
  }
  return report;
}

EstimateReport full_report(const ObservationTable& table, const NuisanceBundle& bundle) {
  return full_report(make_evaluation_set(table, bundle));
}

const EffectEstimates& EstimateReport::family(EstimatorFamily f) const {
  switch (f) {
    case EstimatorFamily::kIoc: return ioc;
    case EstimatorFamily::kIwc: return iwc;
    case EstimatorFamily::kDre: return dre;
  }
  return iwc;
}

EffectEstimates counterfactual_truth(const Eigen::MatrixXd& g_true,
                                     const std::vector<int>& d) {
  const Eigen::Index n = g_true.cols();
  const auto rows = static_cast<std::size_t>(g_true.rows());
  if (rows == 0 || d.size() != rows) {
    throw Error(ErrorKind::kShapeMismatch, "counterfactual matrix and labels differ");
  }
  EffectEstimates out;
  out.theta.resize(n);
  out.theta_given = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  out.available.assign(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.theta[i] = kernels::sum({g_true.col(i).data(), rows}) / static_cast<double>(rows);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    std::vector<std::size_t> idx;
    for (std::size_t m = 0; m < rows; ++m) {
      if (d[m] == j) idx.push_back(m);
    }
    if (idx.empty()) continue;
    out.available[static_cast<std::size_t>(j)] = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<double> vals;
      vals.reserve(idx.size());
      for (std::size_t m : idx) vals.push_back(g_true(static_cast<Eigen::Index>(m), i));
      out.theta_given(i, j) = kernels::sum(vals) / static_cast<double>(idx.size());
    }
  }
  return out;
}

namespace {

nlohmann::json value_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

nlohmann::json estimates_json(const EffectEstimates& e) {
  using nlohmann::json;
  const auto n = static_cast<int>(e.n_levels());
  json theta = json::array();
  json given = json::array();
  json ate = json::array();
  json atte = json::array();
  for (int i = 0; i < n; ++i) {
    theta.push_back(value_or_null(e.theta[i]));
    json g_row = json::array();
    json a_row = json::array();
    json t_row = json::array();
    for (int k = 0; k < n; ++k) {
      g_row.push_back(value_or_null(e.theta_given(i, k)));
      a_row.push_back(value_or_null(i == k ? 0.0 : e.ate(i, k)));
      json t_col = json::array();
      for (int j = 0; j < n; ++j) t_col.push_back(value_or_null(e.atte(i, k, j)));
      t_row.push_back(std::move(t_col));
    }
    given.push_back(std::move(g_row));
    ate.push_back(std::move(a_row));
    atte.push_back(std::move(t_row));
  }
  return {{"theta", theta},
          {"theta_given", given},
          {"ate", ate},
          {"atte", atte}};
}

}  // namespace

nlohmann::json EstimateReport::to_json(const std::vector<double>& level_values) const {
  nlohmann::json j;
  j["schema"] = "iwc.estimate_report/1";
  j["levels"] = level_values;
  j["n_rows"] = n_rows;
  j["counts"] = counts;
  j["max_ipw_weight"] = max_ipw_weight;
  j["families"]["IoC"] = estimates_json(ioc);
  j["families"]["IwC"] = estimates_json(iwc);
  j["families"]["DRE"] = estimates_json(dre);
  if (truth) j["truth"] = estimates_json(*truth);
  j["index_convention"] =
      "theta_given[i][j] = theta^{i|j}; ate[i][k] = theta^i - theta^k; "
      "atte[i][k][j] = theta^{i|j} - theta^{k|j}";
  return j;
}

}  // namespace iwc
