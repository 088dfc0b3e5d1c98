#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "iwc/data.hpp"
#include "json.hpp"

namespace iwc {

// ---------------------------------------------------------------- outcome

enum class Family { kOls, kRidge, kLasso, kRandomForest, kMlp };

const char* family_name(Family family);
Family parse_family(const std::string& name);  // throws ConfigError

struct ForestSettings {
  int n_trees = 100;
  int max_depth = 12;
  int min_leaf = 5;
  // Features tried per split; 0 means floor(sqrt(p)).
  int feature_subsample = 0;
  double bootstrap_fraction = 1.0;
};

struct MlpSettings {
  std::vector<int> widths{64, 64, 64};
  double learning_rate = 1e-3;
  int epochs = 200;
  int batch_size = 128;
};

struct OutcomeModelSpec {
  Family family = Family::kOls;
  double lambda_reg = 0.0;  // ridge and lasso penalty
  double lasso_tol = 1e-10;
  int lasso_max_iter = 100000;
  ForestSettings forest;
  MlpSettings mlp;
  // Unset: one model per level for linear families, a joint model with the
  // level index as an extra input for the forest and the MLP.
  std::optional<bool> per_level;

  bool resolved_per_level() const;
  void validate() const;  // throws ConfigError
};

// Per-family learned parameters. Inputs are the concatenated row [u, z] plus,
// for joint models, the level index as a trailing feature.
struct LinearFit {
  std::vector<double> beta;
  double intercept = 0.0;
};

struct TreeFit {
  // Node k is a leaf when feature[k] < 0; otherwise rows with
  // input[feature[k]] <= threshold[k] go to left[k].
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> value;

  double predict(std::span<const double> input) const;
};

struct ForestFit {
  std::vector<TreeFit> trees;
};

struct MlpLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

// tanh hidden layers and a linear output, on standardized inputs and outputs.
struct MlpFit {
  std::vector<MlpLayer> layers;
  Eigen::VectorXd in_mean;
  Eigen::VectorXd in_scale;
  double out_mean = 0.0;
  double out_scale = 1.0;
};

using RegressorFit = std::variant<LinearFit, ForestFit, MlpFit>;

struct FittedOutcomeModel {
  Family family = Family::kOls;
  bool per_level = true;
  std::size_t p_u = 0;
  std::size_t p_z = 0;
  std::size_t n_levels = 0;
  // One entry per level when per_level, a single joint entry otherwise.
  std::vector<RegressorFit> regressors;

  double predict(int level, std::span<const double> u,
                 std::span<const double> z) const;
  // rows x n_levels matrix of g_hat(level, u_m, z_m) over the listed rows.
  Eigen::MatrixXd predict_all(const ObservationTable& table,
                              std::span<const std::size_t> rows) const;
};

FittedOutcomeModel fit_outcome_model(const OutcomeModelSpec& spec,
                                     const ObservationTable& table,
                                     std::span<const std::size_t> train_rows,
                                     std::size_t n_levels, std::uint64_t seed);

// Single-regressor fits on a dense design; exposed for tests.
LinearFit fit_ols(const Matrix& x, std::span<const double> y);
LinearFit fit_ridge(const Matrix& x, std::span<const double> y, double lambda);
LinearFit fit_lasso(const Matrix& x, std::span<const double> y, double lambda,
                    double tol, int max_iter);
ForestFit fit_forest(const Matrix& x, std::span<const double> y,
                     const ForestSettings& settings, std::uint64_t seed);
MlpFit fit_mlp(const Matrix& x, std::span<const double> y,
               const MlpSettings& settings, std::uint64_t seed);

double predict_regressor(const RegressorFit& fit, std::span<const double> input);
// Batch prediction over the rows of a dense design.
Eigen::VectorXd predict_regressor(const RegressorFit& fit, const Matrix& x);

nlohmann::json to_json(const FittedOutcomeModel& model);
FittedOutcomeModel outcome_model_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------- propensity

struct PropensitySettings {
  double l2_penalty = 1.0;
  int max_iter = 5000;
  // On the max-norm of the gradient of the per-row objective.
  double tol = 1e-7;
  double clip = 1e-3;
  bool penalize_intercept = false;
  double separation_bound = 1e3;
};

// Baseline-category multinomial logit: level 0 has the zero weight row, so the
// binary case is exactly logistic regression. Columns of `weights` are
// [x, z, intercept] on the raw feature scale.
struct FittedPropensityModel {
  Eigen::MatrixXd weights;  // n_levels x (p_x + p_z + 1)
  double clip = 1e-3;
  std::size_t p_x = 0;
  std::size_t p_z = 0;
  int iterations = 0;
  bool converged = false;
  bool separation_warning = false;
  double final_gradient = 0.0;

  std::size_t n_levels() const { return static_cast<std::size_t>(weights.rows()); }
  Eigen::VectorXd predict_raw(std::span<const double> x,
                              std::span<const double> z) const;
  Eigen::VectorXd predict(std::span<const double> x,
                          std::span<const double> z) const;
  // rows x n_levels matrix of clipped propensities.
  Eigen::MatrixXd predict_all(const ObservationTable& table,
                              std::span<const std::size_t> rows) const;
};

// Components below eps are raised to eps and the rest rescaled so the vector
// sums to 1, repeated until no rescaled component drops below eps.
Eigen::VectorXd clip_simplex(const Eigen::VectorXd& p, double eps);

FittedPropensityModel fit_propensity(const ObservationTable& table,
                                     std::span<const std::size_t> train_rows,
                                     std::size_t n_levels,
                                     const PropensitySettings& settings);

nlohmann::json to_json(const FittedPropensityModel& model);
FittedPropensityModel propensity_model_from_json(const nlohmann::json& j);

}  // namespace iwc
