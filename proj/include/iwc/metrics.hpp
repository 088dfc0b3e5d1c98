#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "iwc/estimators.hpp"

namespace iwc {

// Weighted relative error over repetitions. Terms whose true effect is below
// kZeroEffect in magnitude are left out and counted in `dropped`.
struct WeightedError {
  double value = 0.0;
  std::size_t terms = 0;        // (pair or triple, repetition) terms used
  std::size_t dropped = 0;      // terms skipped for a zero or missing truth
  std::size_t repetitions = 0;  // repetitions contributing at least one term
};

inline constexpr double kZeroEffect = 1e-12;

// (1/M) sum_m sum_{i != k} w_ik |est/true - 1| with w_ik = |true_ik| / sum |true|
// over ordered pairs. Repetitions with no usable pair are skipped.
// Throws AllTrueEffectsZero when no repetition has a usable pair.
WeightedError weighted_rel_err_ate(std::span<const EffectEstimates> estimates,
                                   std::span<const EffectEstimates> truth);
// Same over ordered triples (i, k | j) with i, k, j pairwise distinct.
// Throws NoValidTriples with fewer than three levels.
WeightedError weighted_rel_err_atte(std::span<const EffectEstimates> estimates,
                                    std::span<const EffectEstimates> truth);

// |iwc / ioc - 1|; throws DivisionByZero unless ioc > 0.
double error_reduction(double ioc_err, double iwc_err);

// (1/K) sum_i |sum_m est_i / sum_m true_i - 1| over the K = n levels.
double consistency_mean(std::span<const EffectEstimates> estimates,
                        std::span<const EffectEstimates> truth);
// (1/K) sum_i sample sd over m of (est_i - true_i); needs M >= 2.
double consistency_std(std::span<const EffectEstimates> estimates,
                       std::span<const EffectEstimates> truth);
// The same two statistics over the n(n-1) off-diagonal theta^{i|j}.
double consistency_mean_conditional(std::span<const EffectEstimates> estimates,
                                    std::span<const EffectEstimates> truth);
double consistency_std_conditional(std::span<const EffectEstimates> estimates,
                                   std::span<const EffectEstimates> truth);

// Generic forms over a repetitions x K matrix of values.
double consistency_mean(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& truth);
double consistency_std(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& truth);

// Error of the IwC estimate split into
//   sampling            theta_true - mean g_i
//   g_bias              mean (g_i - g_hat_i)
//   residual_sampling   0 - mean 1{i} (y - g_i) / E_i        (population mean is 0)
//   mixed               mean 1{i} [(y - g_i)/E_i - (y - g_hat_i)/E_hat_i]
//   zero                the population residual term, identically 0
// so that the five terms sum to theta_true - theta_hat_w.
struct ErrorDecomposition {
  double sampling = 0.0;
  double g_bias = 0.0;
  double residual_sampling = 0.0;
  double mixed = 0.0;
  double zero = 0.0;
  double total = 0.0;     // theta_true - theta_hat_w, computed directly
  double estimate = 0.0;  // theta_hat_w

  double sum() const { return sampling + g_bias + residual_sampling + mixed + zero; }
};

// g_true and p_true hold the true g(d^i, u, z) and P_i(x, z) for the rows of es.
ErrorDecomposition decompose_iwc_error(const EvaluationSet& es, const Eigen::MatrixXd& g_true,
                                       const Eigen::MatrixXd& p_true, double theta_true, int i);
// Conditional analogue for theta^{i|j} with the population marginal m_true of
// level j; the estimate uses the sample share N_j / N.
ErrorDecomposition decompose_iwc_error_conditional(const EvaluationSet& es,
                                                   const Eigen::MatrixXd& g_true,
                                                   const Eigen::MatrixXd& p_true,
                                                   double theta_true, int i, int j,
                                                   double m_true);

}  // namespace iwc
