#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "iwc/data.hpp"
#include "iwc/estimators.hpp"
#include "json.hpp"

namespace iwc {

// Family plus estimand: unconditional theta^i when j < 0, theta^{i|j} otherwise.
struct ScoreKind {
  EstimatorFamily family = EstimatorFamily::kIwc;
  int i = 0;
  int j = -1;

  bool conditional() const { return j >= 0; }
  std::string name() const;
  void validate(std::size_t n_levels) const;  // throws ConfigError
};

// Nuisance slots at one row: g(d^i, u, z), a_i(x, z), a_j(x, z) and m_j.
// Unconditional kinds ignore a_j and m_j.
struct NuisanceValues {
  double g_i = 0.0;
  double a_i = 1.0;
  double a_j = 1.0;
  double m_j = 1.0;
};

// Every score is affine in vartheta: psi = slope * vartheta + offset.
struct ScoreTerms {
  double slope = 0.0;
  double offset = 0.0;
};

ScoreTerms score_terms(const ScoreKind& kind, double y, int d, const NuisanceValues& nv);
double eval_score(const ScoreKind& kind, double y, int d, double vartheta,
                  const NuisanceValues& nv);

// Function-valued nuisance point for scoring arbitrary rows.
struct NuisancePoint {
  std::function<double(int level, std::span<const double> u, std::span<const double> z)> g;
  std::function<Eigen::VectorXd(std::span<const double> x, std::span<const double> z)> a;
  std::vector<double> m;
};

double eval_score(const ScoreKind& kind, const ObservationTable& table, std::size_t row,
                  double vartheta, const NuisancePoint& point);

// Root in vartheta of the empirical mean of psi. Nuisances come as matrices
// over the rows (column i holds level i) plus the marginals m.
double solve_theta(const ScoreKind& kind, const EvaluationSet& es,
                   std::span<const double> m);
double solve_theta(const ScoreKind& kind, const ObservationTable& table,
                   const NuisancePoint& point);

// ---------------------------------------------------------------- checks

// A population with known nuisances. draw() returns rows together with the
// true g(d^i, u, z) for every level, the true propensities and marginals.
struct TruthSample {
  ObservationTable table;
  Eigen::MatrixXd g;  // rows x n_levels
  Eigen::MatrixXd p;  // rows x n_levels
  std::vector<double> m;
};

struct TrueValue {
  double value = 0.0;
  double stderr_ = 0.0;
};

class ScoreSampler {
 public:
  virtual ~ScoreSampler() = default;
  virtual std::size_t n_levels() const = 0;
  virtual TruthSample draw(std::size_t n, std::uint64_t seed) const = 0;
  // Population value of theta^i or theta^{i|j} with its Monte-Carlo error.
  virtual TrueValue true_theta(int i, int j) const = 0;
  virtual std::vector<double> true_marginals() const = 0;
};

struct MomentResult {
  double mean = 0.0;
  double stderr_ = 0.0;
  bool pass = false;
};

// Mean of psi at the true theta (shifted by theta_offset) and true nuisances.
// Passes iff |mean| < 3 * stderr, where stderr folds in the error of the
// true theta.
MomentResult moment_check(const ScoreKind& kind, const ScoreSampler& sampler,
                          std::size_t n_mc, std::uint64_t seed,
                          double theta_offset = 0.0);

enum class Slot { kG, kAi, kAj, kMj };
const char* slot_name(Slot slot);
// The slots a score actually reads.
std::vector<Slot> slots_for(const ScoreKind& kind);

// Perturbation direction (varrho - rho) as functions of the row. delta_g
// returns the shift of g(d^i, ., .); delta_a returns the shift of a_level.
struct PerturbationDirection {
  std::function<double(int level, std::span<const double> u, std::span<const double> z)> delta_g;
  std::function<double(int level, double a, std::span<const double> x,
                       std::span<const double> z)>
      delta_a;
  std::vector<double> delta_m;
};

// delta_g = 1, delta_a = sigmoid(logit(a) + 0.5) - a, delta_m = 0.1 m.
PerturbationDirection default_direction(std::size_t n_levels,
                                        const std::vector<double>& m);
// delta_g = tanh of a random linear function of (u, z); delta_a a logit shift
// by 0.5 * tanh of a random linear function of (x, z); delta_m = +-0.1 m.
PerturbationDirection random_direction(std::size_t n_levels, std::size_t p_u,
                                       std::size_t p_x, std::size_t p_z,
                                       const std::vector<double>& m,
                                       std::uint64_t seed);

struct GateauxResult {
  Slot slot = Slot::kG;
  double slope = 0.0;
  double stderr_ = 0.0;
  bool orthogonal = false;  // |slope| < 3 * stderr
};

// Per-slot derivative of E[psi(theta, rho + r (varrho - rho))] at r = 0,
// estimated by a least-squares line through the r grid with common random
// numbers across r. Throws InvalidPath if a probability leaves (0, 1).
std::vector<GateauxResult> gateaux_check(const ScoreKind& kind,
                                         const ScoreSampler& sampler,
                                         const PerturbationDirection& direction,
                                         std::span<const double> r_grid,
                                         std::size_t n_mc, std::uint64_t seed);

inline constexpr double kDefaultRGrid[] = {-0.1, -0.05, 0.05, 0.1};

nlohmann::json to_json(const MomentResult& r);
nlohmann::json to_json(const GateauxResult& r);

}  // namespace iwc
