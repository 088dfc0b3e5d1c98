#include "iwc/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "iwc/rng.hpp"
#include "iwc/scores.hpp"

namespace iwc {
namespace {

const char* mode_name(DataMode m) {
  return m == DataMode::kSimulated ? "simulated" : "semi_synthetic";
}

EstimatorFamily parse_estimator_family(const std::string& s) {
  std::string upper = s;
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (upper == "IOC") return EstimatorFamily::kIoc;
  if (upper == "IWC") return EstimatorFamily::kIwc;
  if (upper == "DRE" || upper == "DR") return EstimatorFamily::kDre;
  throw Error(ErrorKind::kConfigError, "unknown estimator family '" + s + "'");
}

nlohmann::json regressor_to_json(const RegressorSpec& r) {
  const auto& s = r.spec;
  nlohmann::json j = {{"name", r.name},
                      {"family", family_name(s.family)},
                      {"lambda", s.lambda_reg},
                      {"lasso_tol", s.lasso_tol},
                      {"lasso_max_iter", s.lasso_max_iter},
                      {"forest",
                       {{"n_trees", s.forest.n_trees},
                        {"max_depth", s.forest.max_depth},
                        {"min_leaf", s.forest.min_leaf},
                        {"feature_subsample", s.forest.feature_subsample},
                        {"bootstrap_fraction", s.forest.bootstrap_fraction}}},
                      {"mlp",
                       {{"widths", s.mlp.widths},
                        {"learning_rate", s.mlp.learning_rate},
                        {"epochs", s.mlp.epochs},
                        {"batch_size", s.mlp.batch_size}}}};
  j["per_level"] = s.per_level ? nlohmann::json(*s.per_level) : nlohmann::json(nullptr);
  return j;
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key) && !j[key].is_null()) field = j[key].get<T>();
}

RegressorSpec regressor_from_json(const nlohmann::json& j) {
  RegressorSpec r;
  if (j.is_string()) {
    r.spec.family = parse_family(j.get<std::string>());
    r.name = family_name(r.spec.family);
    return r;
  }
  r.spec.family = parse_family(j.at("family").get<std::string>());
  r.name = j.value("name", std::string(family_name(r.spec.family)));
  auto& s = r.spec;
  read_field(j, "lambda", s.lambda_reg);
  read_field(j, "lasso_tol", s.lasso_tol);
  read_field(j, "lasso_max_iter", s.lasso_max_iter);
  if (j.contains("per_level") && !j["per_level"].is_null()) s.per_level = j["per_level"].get<bool>();
  if (j.contains("forest")) {
    const auto& f = j["forest"];
    read_field(f, "n_trees", s.forest.n_trees);
    read_field(f, "max_depth", s.forest.max_depth);
    read_field(f, "min_leaf", s.forest.min_leaf);
    read_field(f, "feature_subsample", s.forest.feature_subsample);
    read_field(f, "bootstrap_fraction", s.forest.bootstrap_fraction);
  }
  if (j.contains("mlp")) {
    const auto& m = j["mlp"];
    read_field(m, "widths", s.mlp.widths);
    read_field(m, "learning_rate", s.mlp.learning_rate);
    read_field(m, "epochs", s.mlp.epochs);
    read_field(m, "batch_size", s.mlp.batch_size);
  }
  return r;
}

// Writes through a temporary file so a crash never leaves a torn artifact.
void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorKind::kIoError, "cannot write " + tmp);
    out << text;
    if (!out) throw Error(ErrorKind::kIoError, "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

int resolve_threads(int requested, std::size_t tasks) {
  int t = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  t = std::max(1, t);
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(t), tasks));
}

// Runs task(k) for k in [0, count) on a small pool; results are keyed by k so
// the outcome does not depend on scheduling.
template <class Task>
void parallel_for(std::size_t count, int threads, Task task) {
  const int workers = resolve_threads(threads, count);
  if (workers <= 1) {
    for (std::size_t k = 0; k < count; ++k) task(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < count; k = next++) task(k);
    });
  }
  for (auto& t : pool) t.join();
}

struct RegressorOutcome {
  std::optional<EstimateReport> report;
  std::string error;
};

struct RepetitionOutcome {
  std::string error;  // set when the repetition failed before any regressor ran
  EffectEstimates truth;
  std::vector<RegressorOutcome> regressors;
  nlohmann::json record;
};

RepetitionOutcome run_repetition(const ExperimentConfig& config, const Features* pool, int m) {
  RepetitionOutcome out;
  out.regressors.resize(config.regressors.size());
  const std::uint64_t seed = repetition_seed(config.seed, m);
  out.record = {{"schema", "iwc.repetition/1"}, {"repetition", m}, {"seed", seed}};
  try {
    SyntheticSample sample;
    if (pool != nullptr) {
      Features f;
      Engine engine = make_engine(seed, streams::kFeatures + 1);
      std::uniform_int_distribution<Eigen::Index> pick(0, pool->x.rows() - 1);
      const auto n = static_cast<Eigen::Index>(config.n);
      f.u.resize(n, pool->u.cols());
      f.x.resize(n, pool->x.cols());
      f.z.resize(n, pool->z.cols());
      for (Eigen::Index r = 0; r < n; ++r) {
        const Eigen::Index src = pick(engine);
        f.u.row(r) = pool->u.row(src);
        f.x.row(r) = pool->x.row(src);
        f.z.row(r) = pool->z.row(src);
      }
      sample = gen_semi_synthetic(f, config.dgp, seed);
    } else {
      sample = repetition_sample(config, config.n, seed);
    }
    const auto n_levels = static_cast<std::size_t>(config.dgp.n_levels);
    const SplitIndex split = split_train_test(sample.table, config.train_fraction, seed);
    const auto missing = levels_missing_from(sample.table, split.train_rows, n_levels);
    if (!missing.empty()) {
      throw Error(ErrorKind::kLevelMissingInTrain,
                  "level " + std::to_string(missing.front()) + " absent from training rows");
    }
    const FittedPropensityModel prop =
        fit_propensity(sample.table, split.train_rows, n_levels, config.propensity);
    out.truth = ground_truth(sample, split.test_rows);
    out.record["level_values"] = sample.level_values;
    out.record["n_train"] = split.train_rows.size();
    out.record["n_test"] = split.test_rows.size();
    out.record["propensity"] = {{"iterations", prop.iterations},
                                {"converged", prop.converged},
                                {"separation_warning", prop.separation_warning},
                                {"final_gradient", prop.final_gradient}};
    nlohmann::json regs = nlohmann::json::object();
    for (std::size_t r = 0; r < config.regressors.size(); ++r) {
      const RegressorSpec& spec = config.regressors[r];
      try {
        const FittedOutcomeModel model =
            fit_outcome_model(spec.spec, sample.table, split.train_rows, n_levels,
                              derive_seed(seed, streams::kLearner + r));
        NuisanceBundle bundle{&model, &prop, split.test_rows};
        EstimateReport report = full_report(sample.table, bundle);
        report.truth = out.truth;
        regs[spec.name] = report.to_json(sample.level_values);
        out.regressors[r].report = std::move(report);
      } catch (const std::exception& e) {
        out.regressors[r].error = e.what();
        regs[spec.name] = {{"error", e.what()}};
      }
    }
    out.record["regressors"] = std::move(regs);
  } catch (const std::exception& e) {
    out.error = e.what();
    out.record["error"] = e.what();
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

}  // namespace

// ---------------------------------------------------------------- config

std::vector<RegressorSpec> default_regressors() {
  std::vector<RegressorSpec> out;
  for (Family f : {Family::kOls, Family::kLasso, Family::kRidge, Family::kRandomForest,
                   Family::kMlp}) {
    RegressorSpec r;
    r.name = family_name(f);
    r.spec.family = f;
    if (f == Family::kLasso || f == Family::kRidge) r.spec.lambda_reg = 1.0;
    out.push_back(r);
  }
  return out;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kConfigError, what); };
  if (run_id.empty() || run_id.find("..") != std::string::npos) fail("run_id must be a plain name");
  if (n < 100) fail("n must be >= 100");
  if (m < 1) fail("m must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("train_fraction must lie in (0, 1)");
  if (regressors.empty()) fail("at least one regressor is required");
  std::set<std::string> names;
  for (const auto& r : regressors) {
    if (r.name.empty() || !names.insert(r.name).second) fail("regressor names must be unique");
    r.spec.validate();
  }
  if (families.empty()) fail("at least one estimator family is required");
  if (!(propensity.clip > 0.0 && propensity.clip < 0.5)) fail("propensity clip must lie in (0, 0.5)");
  if (!(propensity.l2_penalty >= 0.0) || propensity.max_iter < 1 || !(propensity.tol > 0.0)) {
    fail("invalid propensity settings");
  }
  if (scores.n_mc < 2 || scores.truth_rows < 2 ||
      scores.calibration_rows < static_cast<std::size_t>(dgp.n_levels)) {
    fail("invalid score-check sizes");
  }
  if (!std::is_sorted(ladder.begin(), ladder.end()) ||
      std::adjacent_find(ladder.begin(), ladder.end()) != ladder.end()) {
    fail("ladder must be strictly ascending");
  }
  for (std::size_t v : ladder) {
    if (v < 100) fail("ladder sizes must be >= 100");
  }
  dgp.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json regs = nlohmann::json::array();
  for (const auto& r : regressors) regs.push_back(regressor_to_json(r));
  nlohmann::json fams = nlohmann::json::array();
  for (auto f : families) fams.push_back(estimator_family_name(f));
  nlohmann::json j = {
      {"schema_version", kConfigSchemaVersion},
      {"run_id", run_id},
      {"mode", mode_name(mode)},
      {"dgp", dgp.to_json()},
      {"n", n},
      {"m", m},
      {"seed", seed},
      {"train_fraction", train_fraction},
      {"regressors", regs},
      {"propensity",
       {{"l2_penalty", propensity.l2_penalty},
        {"max_iter", propensity.max_iter},
        {"tol", propensity.tol},
        {"clip", propensity.clip},
        {"penalize_intercept", propensity.penalize_intercept},
        {"separation_bound", propensity.separation_bound}}},
      {"families", fams},
      {"outdir", outdir.string()},
      {"threads", threads},
      {"write_reports", write_reports},
      {"scores",
       {{"n_mc", scores.n_mc},
        {"calibration_rows", scores.calibration_rows},
        {"truth_rows", scores.truth_rows}}},
      {"ladder", ladder}};
  j["features_csv"] = features_csv ? nlohmann::json(features_csv->string()) : nlohmann::json(nullptr);
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "schema_version", "run_id", "mode", "dgp", "features_csv", "n", "m", "seed",
      "train_fraction", "regressors", "propensity", "families", "outdir", "threads",
      "write_reports", "scores", "ladder"};
  try {
    if (!j.is_object()) throw Error(ErrorKind::kConfigError, "config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (!known.count(key)) throw Error(ErrorKind::kConfigError, "unknown config key '" + key + "'");
    }
    if (!j.contains("schema_version") || j["schema_version"].get<int>() != kConfigSchemaVersion) {
      throw Error(ErrorKind::kConfigError,
                  "schema_version must be " + std::to_string(kConfigSchemaVersion));
    }
    ExperimentConfig c;
    read_field(j, "run_id", c.run_id);
    if (j.contains("mode")) {
      const auto m = j["mode"].get<std::string>();
      if (m == "simulated") {
        c.mode = DataMode::kSimulated;
      } else if (m == "semi_synthetic") {
        c.mode = DataMode::kSemiSynthetic;
      } else {
        throw Error(ErrorKind::kConfigError, "unknown mode '" + m + "'");
      }
    }
    nlohmann::json dgp = j.value("dgp", nlohmann::json::object());
    if (!dgp.contains("preset")) dgp["preset"] = mode_name(c.mode);
    c.dgp = DgpConfig::from_json(dgp);
    if (j.contains("features_csv") && !j["features_csv"].is_null()) {
      c.features_csv = j["features_csv"].get<std::string>();
    }
    read_field(j, "n", c.n);
    read_field(j, "m", c.m);
    read_field(j, "seed", c.seed);
    read_field(j, "train_fraction", c.train_fraction);
    if (j.contains("regressors")) {
      for (const auto& r : j["regressors"]) c.regressors.push_back(regressor_from_json(r));
    } else {
      c.regressors = default_regressors();
    }
    if (j.contains("propensity")) {
      const auto& p = j["propensity"];
      read_field(p, "l2_penalty", c.propensity.l2_penalty);
      read_field(p, "max_iter", c.propensity.max_iter);
      read_field(p, "tol", c.propensity.tol);
      read_field(p, "clip", c.propensity.clip);
      read_field(p, "penalize_intercept", c.propensity.penalize_intercept);
      read_field(p, "separation_bound", c.propensity.separation_bound);
    }
    if (j.contains("families")) {
      c.families.clear();
      for (const auto& f : j["families"]) c.families.push_back(parse_estimator_family(f.get<std::string>()));
    }
    if (j.contains("outdir")) c.outdir = j["outdir"].get<std::string>();
    read_field(j, "threads", c.threads);
    read_field(j, "write_reports", c.write_reports);
    if (j.contains("scores")) {
      read_field(j["scores"], "n_mc", c.scores.n_mc);
      read_field(j["scores"], "calibration_rows", c.scores.calibration_rows);
      read_field(j["scores"], "truth_rows", c.scores.truth_rows);
    }
    read_field(j, "ladder", c.ladder);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfigError, e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfigError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

std::uint64_t repetition_seed(std::uint64_t seed, int m) {
  return derive_seed(seed, static_cast<std::uint64_t>(m));
}

SyntheticSample repetition_sample(const ExperimentConfig& config, std::size_t n,
                                  std::uint64_t rep_seed) {
  return Dgp(config.dgp).generate(n, rep_seed);
}

// ---------------------------------------------------------------- metrics

std::vector<MetricRow> compute_metrics(const std::vector<RegressorSeries>& series,
                                       const std::vector<EstimatorFamily>& families) {
  std::vector<MetricRow> rows;
  for (const auto& s : series) {
    if (s.reports.empty()) continue;
    std::optional<WeightedError> ioc_ate, ioc_atte;
    for (EstimatorFamily f : families) {
      const std::string fname = estimator_family_name(f);
      std::vector<EffectEstimates> est;
      for (const auto& r : s.reports) est.push_back(r.family(f));
      auto emit = [&](const std::string& metric, double value) {
        rows.push_back({s.name, fname, metric, value});
      };
      emit("repetitions", static_cast<double>(est.size()));
      std::optional<WeightedError> ate, atte;
      try {
        ate = weighted_rel_err_ate(est, s.truth);
        emit("wre_ate", ate->value);
      } catch (const Error&) {
      }
      try {
        atte = weighted_rel_err_atte(est, s.truth);
        emit("wre_atte", atte->value);
      } catch (const Error&) {
      }
      if (f == EstimatorFamily::kIoc) {
        ioc_ate = ate;
        ioc_atte = atte;
      }
      auto guarded = [&](const std::string& metric, auto fn) {
        try {
          emit(metric, fn(est, s.truth));
        } catch (const Error&) {
        }
      };
      guarded("consistency_mean", [](auto& e, auto& t) { return consistency_mean(e, t); });
      guarded("consistency_std", [](auto& e, auto& t) { return consistency_std(e, t); });
      guarded("consistency_mean_conditional",
              [](auto& e, auto& t) { return consistency_mean_conditional(e, t); });
      guarded("consistency_std_conditional",
              [](auto& e, auto& t) { return consistency_std_conditional(e, t); });
    }
    // Reductions against IoC need the IoC row, whichever order families ran in.
    for (EstimatorFamily f : families) {
      if (f == EstimatorFamily::kIoc) continue;
      std::vector<EffectEstimates> est;
      for (const auto& r : s.reports) est.push_back(r.family(f));
      const std::string fname = estimator_family_name(f);
      try {
        if (!ioc_ate) {
          std::vector<EffectEstimates> ioc;
          for (const auto& r : s.reports) ioc.push_back(r.ioc);
          ioc_ate = weighted_rel_err_ate(ioc, s.truth);
        }
        rows.push_back({s.name, fname, "error_reduction_ate",
                        error_reduction(ioc_ate->value, weighted_rel_err_ate(est, s.truth).value)});
      } catch (const Error&) {
      }
      try {
        if (!ioc_atte) {
          std::vector<EffectEstimates> ioc;
          for (const auto& r : s.reports) ioc.push_back(r.ioc);
          ioc_atte = weighted_rel_err_atte(ioc, s.truth);
        }
        rows.push_back({s.name, fname, "error_reduction_atte",
                        error_reduction(ioc_atte->value, weighted_rel_err_atte(est, s.truth).value)});
      } catch (const Error&) {
      }
    }
  }
  return rows;
}

void write_metrics_csv(const std::filesystem::path& path, const ExperimentConfig& config,
                       const std::vector<MetricRow>& rows) {
  std::string text = "alpha,beta,tail,regressor,family,metric,value\n";
  const std::string prefix = format_double(config.dgp.alpha) + "," +
                             format_double(config.dgp.beta) + "," +
                             (config.dgp.tail == Tail::kLight ? "light" : "heavy") + ",";
  for (const auto& r : rows) {
    text += prefix + csv_field(r.regressor) + "," + csv_field(r.family) + "," +
            csv_field(r.metric) + "," + format_double(r.value) + "\n";
  }
  write_text(path, text);
}

// ---------------------------------------------------------------- experiment

ExperimentResult run_experiment(const ExperimentConfig& config, bool persist) {
  config.validate();
  std::optional<Features> pool;
  if (config.mode == DataMode::kSemiSynthetic && config.features_csv) {
    pool = read_features_csv(*config.features_csv, config.dgp.p_u, config.dgp.p_x,
                             config.dgp.p_z);
  }
  const auto dir = config.run_dir();
  if (persist) write_json(dir / "config.json", config.to_json());

  const auto reps = static_cast<std::size_t>(config.m);
  std::vector<RepetitionOutcome> outcomes(reps);
  std::mutex log_mutex;
  parallel_for(reps, config.threads, [&](std::size_t k) {
    const int m = static_cast<int>(k) + 1;
    outcomes[k] = run_repetition(config, pool ? &*pool : nullptr, m);
    if (persist && config.write_reports) {
      write_json(dir / "reports" / ("m_" + std::to_string(m) + ".json"), outcomes[k].record);
    }
    std::lock_guard lock(log_mutex);
    std::cerr << "repetition " << m << "/" << config.m
              << (outcomes[k].error.empty() ? " done" : " failed: " + outcomes[k].error) << "\n";
    outcomes[k].record = nullptr;  // persisted; release the memory
  });

  ExperimentResult result;
  nlohmann::json max_weight = nlohmann::json::object();
  for (const auto& r : config.regressors) result.series.push_back({r.name, {}, {}, {}});
  for (std::size_t k = 0; k < reps; ++k) {
    const int m = static_cast<int>(k) + 1;
    const auto& o = outcomes[k];
    if (!o.error.empty()) {
      result.failures.push_back({m, "", o.error});
      continue;
    }
    for (std::size_t r = 0; r < config.regressors.size(); ++r) {
      const auto& ro = o.regressors[r];
      if (!ro.report) {
        result.failures.push_back({m, config.regressors[r].name, ro.error});
        continue;
      }
      auto& s = result.series[r];
      s.repetitions.push_back(m);
      s.reports.push_back(*ro.report);
      s.truth.push_back(o.truth);
      const double w = ro.report->max_ipw_weight;
      max_weight[s.name] = std::max(max_weight.value(s.name, 0.0), w);
    }
  }
  result.metrics = compute_metrics(result.series, config.families);

  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : result.failures) {
    failures.push_back({{"repetition", f.repetition}, {"regressor", f.regressor}, {"error", f.error}});
  }
  nlohmann::json completed = nlohmann::json::object();
  for (const auto& s : result.series) completed[s.name] = s.reports.size();
  result.diagnostics = {{"schema", "iwc.checks/1"},
                        {"kind", "experiment"},
                        {"repetitions", config.m},
                        {"completed", completed},
                        {"failures", failures},
                        {"max_ipw_weight", max_weight}};
  if (persist) {
    write_metrics_csv(dir / "metrics.csv", config, result.metrics);
    write_json(dir / "checks.json", result.diagnostics);
  }
  return result;
}

LadderResult run_consistency_ladder(const ExperimentConfig& config,
                                    const std::vector<std::size_t>& n_list, bool persist) {
  config.validate();
  if (n_list.empty() || !std::is_sorted(n_list.begin(), n_list.end())) {
    throw Error(ErrorKind::kConfigError, "ladder sizes must be non-empty and ascending");
  }
  const auto dir = config.run_dir();
  if (persist) write_json(dir / "config.json", config.to_json());
  LadderResult out;
  std::vector<MetricRow> metric_rows;
  for (std::size_t n : n_list) {
    ExperimentConfig step = config;
    step.n = n;
    const ExperimentResult r = run_experiment(step, false);
    for (const auto& f : r.failures) out.failures.push_back(f);
    for (const auto& s : r.series) {
      if (s.reports.empty()) continue;
      for (EstimatorFamily f : config.families) {
        std::vector<EffectEstimates> est;
        for (const auto& rep : s.reports) est.push_back(rep.family(f));
        LadderPoint p;
        p.n = n;
        p.regressor = s.name;
        p.family = estimator_family_name(f);
        p.repetitions = est.size();
        auto safe = [&](auto fn) {
          try {
            return fn(est, s.truth);
          } catch (const Error&) {
            return std::nan("");
          }
        };
        p.consistency_mean = safe([](auto& e, auto& t) { return consistency_mean(e, t); });
        p.consistency_std = safe([](auto& e, auto& t) { return consistency_std(e, t); });
        p.consistency_mean_conditional =
            safe([](auto& e, auto& t) { return consistency_mean_conditional(e, t); });
        p.consistency_std_conditional =
            safe([](auto& e, auto& t) { return consistency_std_conditional(e, t); });
        out.points.push_back(p);
        const std::string suffix = "_n" + std::to_string(n);
        for (const auto& [name, v] :
             {std::pair{"consistency_mean", p.consistency_mean},
              std::pair{"consistency_std", p.consistency_std},
              std::pair{"consistency_mean_conditional", p.consistency_mean_conditional},
              std::pair{"consistency_std_conditional", p.consistency_std_conditional}}) {
          if (std::isfinite(v)) metric_rows.push_back({p.regressor, p.family, name + suffix, v});
        }
      }
    }
  }
  if (persist) {
    std::string text =
        "n,regressor,family,repetitions,consistency_mean,consistency_std,"
        "consistency_mean_conditional,consistency_std_conditional\n";
    for (const auto& p : out.points) {
      text += std::to_string(p.n) + "," + csv_field(p.regressor) + "," + p.family + "," +
              std::to_string(p.repetitions) + "," + format_double(p.consistency_mean) + "," +
              format_double(p.consistency_std) + "," +
              format_double(p.consistency_mean_conditional) + "," +
              format_double(p.consistency_std_conditional) + "\n";
    }
    write_text(dir / "ladder.csv", text);
    write_metrics_csv(dir / "metrics.csv", config, metric_rows);
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : out.failures) {
      failures.push_back({{"repetition", f.repetition}, {"regressor", f.regressor}, {"error", f.error}});
    }
    write_json(dir / "checks.json",
               {{"schema", "iwc.checks/1"}, {"kind", "ladder"}, {"n", n_list}, {"failures", failures}});
  }
  return out;
}

nlohmann::json run_score_checks(const ExperimentConfig& config, bool persist) {
  config.validate();
  const DgpSampler sampler(config.dgp, derive_seed(config.seed, streams::kDirections),
                           config.scores.calibration_rows, config.scores.truth_rows);
  const int n = config.dgp.n_levels;
  const int i = n / 2;
  const int j = i - 1;
  const auto direction = default_direction(static_cast<std::size_t>(n), sampler.true_marginals());
  nlohmann::json rows = nlohmann::json::array();
  std::uint64_t check = 0;
  for (EstimatorFamily f : config.families) {
    for (int cond : {-1, j}) {
      const ScoreKind kind{f, i, cond};
      const TrueValue truth = sampler.true_theta(i, cond);
      const std::uint64_t seed = derive_seed(config.seed, ++check);
      const MomentResult moment = moment_check(kind, sampler, config.scores.n_mc, seed);
      const auto slopes =
          gateaux_check(kind, sampler, direction, kDefaultRGrid, config.scores.n_mc, seed);
      nlohmann::json g = nlohmann::json::array();
      for (const auto& s : slopes) g.push_back(to_json(s));
      rows.push_back({{"kind", kind.name()},
                      {"family", estimator_family_name(f)},
                      {"i", i},
                      {"j", cond < 0 ? nlohmann::json(nullptr) : nlohmann::json(cond)},
                      {"truth", {{"value", truth.value}, {"stderr", truth.stderr_}}},
                      {"moment", to_json(moment)},
                      {"gateaux", g}});
    }
  }
  nlohmann::json out = {{"schema", "iwc.checks/1"},
                        {"kind", "scores"},
                        {"n_mc", config.scores.n_mc},
                        {"marginals", sampler.true_marginals()},
                        {"checks", rows}};
  if (persist) {
    const auto dir = config.run_dir();
    write_json(dir / "config.json", config.to_json());
    write_json(dir / "checks.json", out);
  }
  return out;
}

// ---------------------------------------------------------------- features CSV

Features read_features_csv(const std::filesystem::path& path, std::size_t p_u, std::size_t p_x,
                           std::size_t p_z) {
  const CsvFrame frame = read_csv(path);
  auto columns = [&](const std::string& prefix, std::size_t p) {
    std::vector<int> idx;
    for (std::size_t k = 1; k <= p; ++k) {
      const int c = frame.column(prefix + std::to_string(k));
      if (c < 0) {
        throw Error(ErrorKind::kShapeMismatch,
                    "feature file lacks column " + prefix + std::to_string(k));
      }
      idx.push_back(c);
    }
    return idx;
  };
  const auto cu = columns("u_", p_u);
  const auto cx = columns("x_", p_x);
  const auto cz = columns("z_", p_z);
  const auto rows = static_cast<Eigen::Index>(frame.rows.size());
  if (rows == 0) throw Error(ErrorKind::kShapeMismatch, "feature file has no rows");
  Features f;
  f.u.resize(rows, static_cast<Eigen::Index>(p_u));
  f.x.resize(rows, static_cast<Eigen::Index>(p_x));
  f.z.resize(rows, static_cast<Eigen::Index>(p_z));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = frame.rows[static_cast<std::size_t>(r)];
    for (std::size_t k = 0; k < p_u; ++k) f.u(r, static_cast<Eigen::Index>(k)) = row[static_cast<std::size_t>(cu[k])];
    for (std::size_t k = 0; k < p_x; ++k) f.x(r, static_cast<Eigen::Index>(k)) = row[static_cast<std::size_t>(cx[k])];
    for (std::size_t k = 0; k < p_z; ++k) f.z(r, static_cast<Eigen::Index>(k)) = row[static_cast<std::size_t>(cz[k])];
  }
  if (!f.u.allFinite() || !f.x.allFinite() || !f.z.allFinite()) {
    throw Error(ErrorKind::kNonFiniteValue, "feature file has non-finite values");
  }
  return f;
}

void write_features_csv(const std::filesystem::path& path, const Features& features) {
  CsvFrame frame;
  for (Eigen::Index k = 1; k <= features.u.cols(); ++k) frame.header.push_back("u_" + std::to_string(k));
  for (Eigen::Index k = 1; k <= features.x.cols(); ++k) frame.header.push_back("x_" + std::to_string(k));
  for (Eigen::Index k = 1; k <= features.z.cols(); ++k) frame.header.push_back("z_" + std::to_string(k));
  for (Eigen::Index r = 0; r < features.x.rows(); ++r) {
    std::vector<double> row;
    for (Eigen::Index k = 0; k < features.u.cols(); ++k) row.push_back(features.u(r, k));
    for (Eigen::Index k = 0; k < features.x.cols(); ++k) row.push_back(features.x(r, k));
    for (Eigen::Index k = 0; k < features.z.cols(); ++k) row.push_back(features.z(r, k));
    frame.rows.push_back(std::move(row));
  }
  write_csv(path, frame);
}

}  // namespace iwc
