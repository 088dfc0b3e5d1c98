#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iwc/dgp.hpp"
#include "iwc/estimators.hpp"
#include "iwc/learners.hpp"
#include "iwc/metrics.hpp"
#include "json.hpp"

namespace iwc {

inline constexpr int kConfigSchemaVersion = 1;

struct RegressorSpec {
  std::string name;  // label used in reports and the metrics CSV
  OutcomeModelSpec spec;
};

enum class DataMode { kSimulated, kSemiSynthetic };

struct ScoreCheckSettings {
  std::size_t n_mc = 100000;
  std::size_t calibration_rows = 200000;
  std::size_t truth_rows = 1000000;
};

struct ExperimentConfig {
  std::string run_id = "run";
  DataMode mode = DataMode::kSimulated;
  DgpConfig dgp = DgpConfig::simulated();
  // Semi-synthetic mode resamples rows of this feature file (columns u_k, x_k,
  // z_k); without it, features are drawn from the DGP as a stand-in.
  std::optional<std::filesystem::path> features_csv;
  std::size_t n = 10000;
  int m = 20;
  std::uint64_t seed = 1;
  double train_fraction = 0.7;
  std::vector<RegressorSpec> regressors;
  PropensitySettings propensity;
  std::vector<EstimatorFamily> families{EstimatorFamily::kIoc, EstimatorFamily::kIwc,
                                        EstimatorFamily::kDre};
  std::filesystem::path outdir = "runs";
  int threads = 0;  // 0: hardware concurrency
  bool write_reports = true;
  ScoreCheckSettings scores;
  std::vector<std::size_t> ladder{2500, 5000, 10000, 20000};

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::filesystem::path run_dir() const { return outdir / run_id; }
};

std::vector<RegressorSpec> default_regressors();

// Seed of repetition m: a splitmix hash of (seed, m), so any single
// repetition can be replayed on its own.
std::uint64_t repetition_seed(std::uint64_t seed, int m);

// One repetition's data: a synthetic sample of n rows.
SyntheticSample repetition_sample(const ExperimentConfig& config, std::size_t n,
                                  std::uint64_t rep_seed);

struct RepetitionFailure {
  int repetition = 0;
  std::string regressor;  // empty when the whole repetition failed
  std::string error;
};

struct RegressorSeries {
  std::string name;
  std::vector<int> repetitions;  // indices of the successful repetitions
  std::vector<EstimateReport> reports;
  std::vector<EffectEstimates> truth;
};

struct MetricRow {
  std::string regressor;
  std::string family;
  std::string metric;
  double value = 0.0;
};

struct ExperimentResult {
  std::vector<RegressorSeries> series;
  std::vector<RepetitionFailure> failures;
  std::vector<MetricRow> metrics;
  nlohmann::json diagnostics;

  bool partial() const { return !failures.empty(); }
};

// Every repetition: derive its seed, generate data, split, fit the
// propensity once and each regressor on the training rows, then evaluate the
// estimators and the ground truth on the test rows. A failing repetition or
// regressor is recorded and skipped. With persist set, writes config.json,
// reports/m_<k>.json, metrics.csv and checks.json under run_dir().
ExperimentResult run_experiment(const ExperimentConfig& config, bool persist = true);

// Metrics over a finished series: weighted ATE/ATTE errors, error reductions
// against IoC, and the consistency statistics.
std::vector<MetricRow> compute_metrics(const std::vector<RegressorSeries>& series,
                                       const std::vector<EstimatorFamily>& families);

struct LadderPoint {
  std::size_t n = 0;
  std::string regressor;
  std::string family;
  double consistency_mean = 0.0;
  double consistency_std = 0.0;
  double consistency_mean_conditional = 0.0;
  double consistency_std_conditional = 0.0;
  std::size_t repetitions = 0;
};

struct LadderResult {
  std::vector<LadderPoint> points;
  std::vector<RepetitionFailure> failures;
  bool partial() const { return !failures.empty(); }
};

LadderResult run_consistency_ladder(const ExperimentConfig& config,
                                    const std::vector<std::size_t>& n_list,
                                    bool persist = true);

// Moment and per-slot Gateaux verdicts for every family on both estimands.
nlohmann::json run_score_checks(const ExperimentConfig& config, bool persist = true);

void write_metrics_csv(const std::filesystem::path& path, const ExperimentConfig& config,
                       const std::vector<MetricRow>& rows);

// Feature-only CSV with header u_k, x_k, z_k.
Features read_features_csv(const std::filesystem::path& path, std::size_t p_u,
                           std::size_t p_x, std::size_t p_z);
void write_features_csv(const std::filesystem::path& path, const Features& features);

}  // namespace iwc
