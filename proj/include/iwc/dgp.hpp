#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "iwc/data.hpp"
#include "iwc/estimators.hpp"
#include "iwc/scores.hpp"
#include "json.hpp"

namespace iwc {

enum class Tail { kLight, kHeavy };
// kSimulated: log-polynomial k with interactions up to order 4.
// kLinear: k(v) = c1 . v.
enum class KMode { kSimulated, kLinear };
enum class TruePropensity { kAnalytic, kMonteCarlo };

struct BlockCorrelation {
  double a = 0.5;
  double b = 0.5;
};

struct DgpConfig {
  // f(D) = alpha + (1 - alpha) [beta D^m + (1 - beta) exp(D^n)]
  double alpha = 0.05;
  double beta = 0.05;
  double power_m = 1.0;
  double power_n = 2.0;

  // q = {exp(|a0 . z|) + e1 log(e2 + k(z)^2 + |k(u)|^tau)}^r_exp
  std::vector<double> a0;
  double e1 = 0.1;
  double e2 = 0.0;
  double tau = 1.5;
  double r_exp = 0.5;

  // latent = lambda (a1 . x + |a2 . z|^gamma + b1 x9/(1+|x3|) + b2 x10/(1+|x6|)) + nu
  std::vector<double> a1;
  std::vector<double> a2;
  double lambda = 1.0;
  double gamma = 2.0;
  double b1 = 1.775;
  double b2 = -1.354;

  KMode k_mode = KMode::kSimulated;
  // c1 vectors; when empty in simulated mode they are drawn N(0, 1) from
  // interaction_seed together with the order-2..4 vectors.
  std::vector<double> c1z;
  std::vector<double> c1u;
  std::uint64_t interaction_seed = 20240917;

  Tail tail = Tail::kLight;
  BlockCorrelation corr_u{0.8, 0.2};
  BlockCorrelation corr_x{0.2, 2.0};
  BlockCorrelation corr_z{0.5, 0.5};
  double dof_u = 10.0;
  double dof_x = 10.0;
  double dof_z = 5.0;

  // xi ~ N(0, xi_sd); xi_sd = xi_relative * sd of f(D) q over the sample
  // unless xi_sd_override is set. nu ~ N(0, nu_sd), times the sample sd of
  // the index lambda * s(x, z) when nu_relative is set; with an absolute
  // unit scale the simulated coefficients make assignment all but
  // deterministic.
  double xi_relative = 0.1;
  std::optional<double> xi_sd_override;
  double nu_sd = 1.0;
  bool nu_relative = true;
  bool standardize_latent = true;

  TruePropensity true_propensity = TruePropensity::kAnalytic;
  int n_nu = 2000;

  int n_levels = 5;
  std::size_t p_u = 10;
  std::size_t p_x = 10;
  std::size_t p_z = 20;

  // Coefficient sets for the simulated and the semi-synthetic experiments.
  static DgpConfig simulated();
  static DgpConfig semi_synthetic();

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static DgpConfig from_json(const nlohmann::json& j);
};

// C_ij = a + (1 - a) exp(-b |i - j|)
Eigen::MatrixXd correlation_matrix(std::size_t p, const BlockCorrelation& c);

struct Features {
  Matrix u;
  Matrix x;
  Matrix z;
};

Features sample_features(const DgpConfig& config, std::size_t n, std::uint64_t seed);

// All products of r distinct components in lexicographic index order.
std::vector<double> interaction_vector(std::span<const double> v, int r);

// c[0] has length p; c[r-1] has length C(p, r).
struct KCoefficients {
  std::array<std::vector<double>, 4> c;
};

// Prepared evaluator for k(v). The log terms sum_r c_r . log|v_bar_r| are
// collapsed into one weight per component (log of a product is the sum of
// logs), and the polynomial term is accumulated streamwise.
class KEvaluator {
 public:
  KEvaluator() = default;
  KEvaluator(KCoefficients coefficients, KMode mode);
  double operator()(std::span<const double> v) const;
  const KCoefficients& coefficients() const { return coef_; }

 private:
  KCoefficients coef_;
  KMode mode_ = KMode::kLinear;
  std::vector<double> log_weight_;
};

double k_of(std::span<const double> v, const KCoefficients& c, KMode mode);

inline constexpr double kLogFloor = 1e-12;

double f_of_d(double d, const DgpConfig& config);

struct Assignment {
  std::vector<int> labels;
  std::vector<double> level_values;
  std::vector<double> thresholds;  // n_levels - 1 cut points on the scaled latent
  std::vector<double> latent;      // scaled latent per row
  double latent_scale = 1.0;       // latent = raw latent / latent_scale
};

// Deterministic part of the latent: lambda (a1 . x + |a2 . z|^gamma + ...).
double latent_index(std::span<const double> x, std::span<const double> z,
                    const DgpConfig& config);

// Ranks the latent scores into equal-count categories, cuts halfway between
// neighbouring categories and values each level at its category median.
Assignment assign_treatment(const Matrix& x, const Matrix& z,
                            std::span<const double> nu, const DgpConfig& config);

// Frozen quantities that turn a latent score into a level and fix xi's scale.
struct Calibration {
  double latent_scale = 1.0;
  double nu_sd = 1.0;  // absolute sd of nu
  std::vector<double> thresholds;
  std::vector<double> level_values;
  double xi_sd = 0.0;
};

struct SyntheticSample {
  ObservationTable table;
  std::vector<double> level_values;
  std::vector<double> q;
  std::vector<double> f_levels;
  Eigen::MatrixXd g;           // N x n: f(d^i) q(u_m, z_m)
  Eigen::MatrixXd propensity;  // N x n true P_i(x_m, z_m)
  std::vector<double> latent;  // scaled latent
  std::vector<double> xi;
  Calibration calibration;

  TreatmentCoding coding() const { return TreatmentCoding(level_values); }
};

// Prepared DGP: expands coefficient vectors once and generates samples.
class Dgp {
 public:
  explicit Dgp(DgpConfig config);

  const DgpConfig& config() const { return config_; }
  double q(std::span<const double> u, std::span<const double> z) const;
  const KEvaluator& k_z() const { return k_z_; }
  const KEvaluator& k_u() const { return k_u_; }

  // Features plus noise streams derived from seed; calibrated on the sample
  // itself when `calibration` is empty.
  SyntheticSample synthesize(const Features& features, std::uint64_t seed,
                             const std::optional<Calibration>& calibration = std::nullopt) const;
  SyntheticSample generate(std::size_t n, std::uint64_t seed,
                           const std::optional<Calibration>& calibration = std::nullopt) const;

  // True P(level | x, z) for latent index s under a calibration.
  Eigen::VectorXd true_propensity(double index, const Calibration& cal,
                                  std::uint64_t row_seed) const;

 private:
  DgpConfig config_;
  KEvaluator k_z_;
  KEvaluator k_u_;
};

SyntheticSample gen_dataset(const DgpConfig& config, std::size_t n, std::uint64_t seed);
// Regenerates treatments and outcomes on externally supplied features.
SyntheticSample gen_semi_synthetic(const Features& features, const DgpConfig& config,
                                   std::uint64_t seed);

EffectEstimates ground_truth(const SyntheticSample& sample, std::span<const std::size_t> rows);

// Sidecar CSV of the hidden columns: q, latent, xi, g_1..g_n, p_1..p_n.
void write_hidden_csv(const std::filesystem::path& path, const SyntheticSample& sample);

// Population with frozen calibration, for moment and orthogonality checks.
class DgpSampler : public ScoreSampler {
 public:
  DgpSampler(DgpConfig config, std::uint64_t seed, std::size_t calibration_rows = 200000,
             std::size_t truth_rows = 1000000);

  std::size_t n_levels() const override;
  TruthSample draw(std::size_t n, std::uint64_t seed) const override;
  TrueValue true_theta(int i, int j) const override;
  std::vector<double> true_marginals() const override { return marginals_; }
  const Calibration& calibration() const { return calibration_; }
  const Dgp& dgp() const { return dgp_; }

 private:
  Dgp dgp_;
  Calibration calibration_;
  Eigen::VectorXd theta_;
  Eigen::VectorXd theta_se_;
  Eigen::MatrixXd theta_given_;
  Eigen::MatrixXd theta_given_se_;
  std::vector<double> marginals_;
};

}  // namespace iwc
