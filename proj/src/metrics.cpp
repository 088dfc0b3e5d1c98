#include "iwc/metrics.hpp"

#include <cmath>

#include "iwc/kernels.hpp"

namespace iwc {
namespace {

void check_series(std::span<const EffectEstimates> est, std::span<const EffectEstimates> truth) {
  if (est.size() != truth.size()) {
    throw Error(ErrorKind::kShapeMismatch, "estimate and truth series differ in length");
  }
  if (est.empty()) throw Error(ErrorKind::kShapeMismatch, "empty series");
  const std::size_t n = est.front().n_levels();
  for (std::size_t m = 0; m < est.size(); ++m) {
    if (est[m].n_levels() != n || truth[m].n_levels() != n) {
      throw Error(ErrorKind::kShapeMismatch, "repetitions differ in level count");
    }
  }
}

// Per repetition: gather (true, est) effects, normalize weights over the
// usable ones, then average the repetition sums.
template <class EffectsOf>
WeightedError weighted_error(std::span<const EffectEstimates> est,
                             std::span<const EffectEstimates> truth, EffectsOf effects_of) {
  WeightedError out;
  std::vector<double> rep_values;
  std::vector<std::pair<double, double>> effects;
  for (std::size_t m = 0; m < est.size(); ++m) {
    effects.clear();
    effects_of(est[m], truth[m], effects);
    std::vector<double> abs_true;
    std::vector<std::pair<double, double>> usable;
    for (const auto& [t, e] : effects) {
      if (!std::isfinite(t) || !std::isfinite(e) || std::fabs(t) < kZeroEffect) {
        ++out.dropped;
        continue;
      }
      usable.emplace_back(t, e);
      abs_true.push_back(std::fabs(t));
    }
    if (usable.empty()) continue;
    const double norm = kernels::sum(abs_true);
    std::vector<double> terms;
    for (const auto& [t, e] : usable) terms.push_back(std::fabs(t) / norm * std::fabs(e / t - 1.0));
    rep_values.push_back(kernels::sum(terms));
    out.terms += usable.size();
  }
  if (rep_values.empty()) {
    throw Error(ErrorKind::kAllTrueEffectsZero, "every true effect is zero or missing");
  }
  out.repetitions = rep_values.size();
  out.value = kernels::sum(rep_values) / static_cast<double>(rep_values.size());
  return out;
}

double mean_statistic(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
  const Eigen::Index k = est.cols();
  std::vector<double> per;
  for (Eigen::Index c = 0; c < k; ++c) {
    std::vector<double> e(est.col(c).data(), est.col(c).data() + est.rows());
    std::vector<double> t(truth.col(c).data(), truth.col(c).data() + truth.rows());
    const double denom = kernels::sum(t);
    if (denom == 0.0) {
      throw Error(ErrorKind::kZeroDenominator, "true values sum to zero for estimand " +
                                                   std::to_string(c));
    }
    per.push_back(std::fabs(kernels::sum(e) / denom - 1.0));
  }
  return kernels::sum(per) / static_cast<double>(k);
}

double std_statistic(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
  const Eigen::Index m = est.rows();
  if (m < 2) throw Error(ErrorKind::kInsufficientRepetitions, "need at least two repetitions");
  const Eigen::Index k = est.cols();
  std::vector<double> per;
  for (Eigen::Index c = 0; c < k; ++c) {
    std::vector<double> diff(static_cast<std::size_t>(m));
    for (Eigen::Index r = 0; r < m; ++r) diff[static_cast<std::size_t>(r)] = est(r, c) - truth(r, c);
    const double mean = kernels::sum(diff) / static_cast<double>(m);
    for (double& d : diff) d = (d - mean) * (d - mean);
    per.push_back(std::sqrt(kernels::sum(diff) / static_cast<double>(m - 1)));
  }
  return kernels::sum(per) / static_cast<double>(k);
}

void check_matrices(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "estimate and truth matrices differ in shape");
  }
  if (est.rows() == 0 || est.cols() == 0) throw Error(ErrorKind::kShapeMismatch, "empty series");
  if (!est.allFinite() || !truth.allFinite()) {
    throw Error(ErrorKind::kNonFiniteValue, "series contains missing or non-finite values");
  }
}

// Repetitions x n(n-1) matrices of off-diagonal theta^{i|j}, (i, j) row-major.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> conditional_matrices(
    std::span<const EffectEstimates> est, std::span<const EffectEstimates> truth) {
  check_series(est, truth);
  const auto n = static_cast<Eigen::Index>(est.front().n_levels());
  const auto reps = static_cast<Eigen::Index>(est.size());
  Eigen::MatrixXd e(reps, n * (n - 1));
  Eigen::MatrixXd t(reps, n * (n - 1));
  for (Eigen::Index m = 0; m < reps; ++m) {
    Eigen::Index c = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        e(m, c) = est[static_cast<std::size_t>(m)].theta_given(i, j);
        t(m, c) = truth[static_cast<std::size_t>(m)].theta_given(i, j);
        ++c;
      }
    }
  }
  return {e, t};
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> unconditional_matrices(
    std::span<const EffectEstimates> est, std::span<const EffectEstimates> truth) {
  check_series(est, truth);
  const auto n = static_cast<Eigen::Index>(est.front().n_levels());
  const auto reps = static_cast<Eigen::Index>(est.size());
  Eigen::MatrixXd e(reps, n);
  Eigen::MatrixXd t(reps, n);
  for (Eigen::Index m = 0; m < reps; ++m) {
    e.row(m) = est[static_cast<std::size_t>(m)].theta.transpose();
    t.row(m) = truth[static_cast<std::size_t>(m)].theta.transpose();
  }
  return {e, t};
}

void check_eval(const EvaluationSet& es, const Eigen::MatrixXd& g_true,
                const Eigen::MatrixXd& p_true, int i) {
  es.validate();
  const auto rows = static_cast<Eigen::Index>(es.rows());
  if (g_true.rows() != rows || p_true.rows() != rows || g_true.cols() != es.g_hat.cols() ||
      p_true.cols() != es.g_hat.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "true nuisances do not match the evaluation set");
  }
  if (i < 0 || i >= es.g_hat.cols()) throw Error(ErrorKind::kUnknownTreatmentLabel, "level");
}

}  // namespace

WeightedError weighted_rel_err_ate(std::span<const EffectEstimates> estimates,
                                   std::span<const EffectEstimates> truth) {
  check_series(estimates, truth);
  return weighted_error(estimates, truth,
                        [](const EffectEstimates& e, const EffectEstimates& t, auto& out) {
                          const auto n = static_cast<int>(e.n_levels());
                          for (int i = 0; i < n; ++i) {
                            for (int k = 0; k < n; ++k) {
                              if (i != k) out.emplace_back(t.ate(i, k), e.ate(i, k));
                            }
                          }
                        });
}

WeightedError weighted_rel_err_atte(std::span<const EffectEstimates> estimates,
                                    std::span<const EffectEstimates> truth) {
  check_series(estimates, truth);
  if (estimates.front().n_levels() < 3) {
    throw Error(ErrorKind::kNoValidTriples, "ATTE error needs at least three levels");
  }
  return weighted_error(estimates, truth,
                        [](const EffectEstimates& e, const EffectEstimates& t, auto& out) {
                          const auto n = static_cast<int>(e.n_levels());
                          for (int i = 0; i < n; ++i) {
                            for (int k = 0; k < n; ++k) {
                              for (int j = 0; j < n; ++j) {
                                if (i == k || k == j || i == j) continue;
                                out.emplace_back(t.atte(i, k, j), e.atte(i, k, j));
                              }
                            }
                          }
                        });
}

double error_reduction(double ioc_err, double iwc_err) {
  if (!(ioc_err > 0.0)) throw Error(ErrorKind::kDivisionByZero, "IoC error must be positive");
  return std::fabs(iwc_err / ioc_err - 1.0);
}

double consistency_mean(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& truth) {
  check_matrices(estimates, truth);
  return mean_statistic(estimates, truth);
}

double consistency_std(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& truth) {
  check_matrices(estimates, truth);
  return std_statistic(estimates, truth);
}

double consistency_mean(std::span<const EffectEstimates> estimates,
                        std::span<const EffectEstimates> truth) {
  const auto [e, t] = unconditional_matrices(estimates, truth);
  return consistency_mean(e, t);
}

double consistency_std(std::span<const EffectEstimates> estimates,
                       std::span<const EffectEstimates> truth) {
  const auto [e, t] = unconditional_matrices(estimates, truth);
  return consistency_std(e, t);
}

double consistency_mean_conditional(std::span<const EffectEstimates> estimates,
                                    std::span<const EffectEstimates> truth) {
  const auto [e, t] = conditional_matrices(estimates, truth);
  return consistency_mean(e, t);
}

double consistency_std_conditional(std::span<const EffectEstimates> estimates,
                                   std::span<const EffectEstimates> truth) {
  const auto [e, t] = conditional_matrices(estimates, truth);
  return consistency_std(e, t);
}

ErrorDecomposition decompose_iwc_error(const EvaluationSet& es, const Eigen::MatrixXd& g_true,
                                       const Eigen::MatrixXd& p_true, double theta_true, int i) {
  check_eval(es, g_true, p_true, i);
  const std::size_t n = es.rows();
  std::vector<double> g(n), bias(n), resid(n, 0.0), mixed(n, 0.0);
  for (std::size_t m = 0; m < n; ++m) {
    const auto r = static_cast<Eigen::Index>(m);
    const double gi = g_true(r, i);
    const double ghat = es.g_hat(r, i);
    g[m] = gi;
    bias[m] = gi - ghat;
    if (es.d[m] != i) continue;
    const double e = p_true(r, i);
    const double ehat = es.p_hat(r, i);
    const double y = es.y[m];
    resid[m] = (y - gi) / e;
    // (y - g)/E - (y - g_hat)/E_hat over a common denominator.
    mixed[m] = ((ehat - e) * (y - gi) + e * (ghat - gi)) / (e * (ehat - e) + e * e);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  ErrorDecomposition out;
  out.sampling = theta_true - kernels::sum(g) * inv_n;
  out.g_bias = kernels::sum(bias) * inv_n;
  out.residual_sampling = -kernels::sum(resid) * inv_n;
  out.mixed = kernels::sum(mixed) * inv_n;
  out.zero = 0.0;
  out.estimate = theta_iwc(es, i);
  out.total = theta_true - out.estimate;
  return out;
}

ErrorDecomposition decompose_iwc_error_conditional(const EvaluationSet& es,
                                                   const Eigen::MatrixXd& g_true,
                                                   const Eigen::MatrixXd& p_true,
                                                   double theta_true, int i, int j,
                                                   double m_true) {
  check_eval(es, g_true, p_true, i);
  if (j < 0 || j >= es.g_hat.cols() || j == i) {
    throw Error(ErrorKind::kUnknownTreatmentLabel, "conditioning level");
  }
  if (!(m_true > 0.0)) throw Error(ErrorKind::kDomainError, "marginal must be positive");
  const std::size_t n = es.rows();
  const double p_hat = static_cast<double>(es.count(j)) / static_cast<double>(n);
  if (p_hat == 0.0) throw Error(ErrorKind::kEmptyTreatedGroup, "no rows at the conditioning level");
  const double p = m_true;
  std::vector<double> g(n, 0.0), bias(n, 0.0), resid(n, 0.0), mixed(n, 0.0);
  for (std::size_t m = 0; m < n; ++m) {
    const auto r = static_cast<Eigen::Index>(m);
    const double gi = g_true(r, i);
    const double ghat = es.g_hat(r, i);
    if (es.d[m] == j) {
      g[m] = gi / p;
      bias[m] = (p_hat * (gi - ghat) + (p_hat - p) * ghat) / ((p_hat - p) * p + p * p);
    }
    if (es.d[m] == i) {
      const double y = es.y[m];
      const double true_w = p_true(r, j) / (p_true(r, i) * p);
      const double hat_w = es.p_hat(r, j) / (es.p_hat(r, i) * p_hat);
      resid[m] = true_w * (y - gi);
      mixed[m] = true_w * (y - gi) - hat_w * (y - ghat);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  ErrorDecomposition out;
  out.sampling = theta_true - kernels::sum(g) * inv_n;
  out.g_bias = kernels::sum(bias) * inv_n;
  out.residual_sampling = -kernels::sum(resid) * inv_n;
  out.mixed = kernels::sum(mixed) * inv_n;
  out.zero = 0.0;
  out.estimate = theta_iwc_conditional(es, i, j);
  out.total = theta_true - out.estimate;
  return out;
}

}  // namespace iwc
