// Command-line front end: simulate, estimate, bench, ladder, check-scores,
// semi-synth. Exit codes: 0 success, 1 partial or runtime failure, 2 invalid
// configuration.
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iwc/bench.hpp"
#include "iwc/dgp.hpp"
#include "iwc/estimators.hpp"
#include "iwc/kernels.hpp"
#include "iwc/learners.hpp"
#include "json.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitConfig = 2;

// Flags mirror ExperimentConfig fields; unset flags leave keys absent.
struct Flags {
  std::string config_path;
  std::optional<std::string> run_id, outdir, mode, tail, features;
  std::optional<std::size_t> n, n_mc, truth_rows;
  std::optional<int> m, threads;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, beta, train_fraction;
  std::vector<std::string> regressors, families;
  std::vector<std::size_t> ladder;
};

void add_experiment_flags(CLI::App* app, Flags& f) {
  app->add_option("-c,--config", f.config_path, "JSON config; its keys override flags");
  app->add_option("--run-id", f.run_id, "Run directory name under the output directory");
  app->add_option("-o,--outdir", f.outdir, "Output directory");
  app->add_option("--mode", f.mode, "simulated or semi_synthetic");
  app->add_option("--features", f.features, "Feature CSV for semi-synthetic runs");
  app->add_option("-n,--n", f.n, "Rows per repetition");
  app->add_option("-m,--m", f.m, "Repetitions");
  app->add_option("--seed", f.seed, "Master seed");
  app->add_option("--alpha", f.alpha, "Causal share alpha in f(D)");
  app->add_option("--beta", f.beta, "Linear share beta in f(D)");
  app->add_option("--tail", f.tail, "light or heavy");
  app->add_option("--train-fraction", f.train_fraction, "Training share of each sample");
  app->add_option("--regressors", f.regressors, "Outcome families, e.g. OLS RIDGE RF");
  app->add_option("--families", f.families, "Estimator families: IoC IwC DRE");
  app->add_option("--threads", f.threads, "Worker threads (0 = all cores)");
  app->add_option("--n-mc", f.n_mc, "Monte-Carlo rows per score check");
  app->add_option("--truth-rows", f.truth_rows, "Rows behind the score-check truth");
  app->add_option("--ladder", f.ladder, "Sample sizes for the consistency ladder");
}

json flags_to_json(const Flags& f) {
  json j = {{"schema_version", iwc::kConfigSchemaVersion}};
  auto set = [&](const char* key, const auto& opt) {
    if (opt) j[key] = *opt;
  };
  set("run_id", f.run_id);
  set("outdir", f.outdir);
  set("mode", f.mode);
  set("features_csv", f.features);
  set("n", f.n);
  set("m", f.m);
  set("seed", f.seed);
  set("train_fraction", f.train_fraction);
  set("threads", f.threads);
  json dgp = json::object();
  if (f.alpha) dgp["alpha"] = *f.alpha;
  if (f.beta) dgp["beta"] = *f.beta;
  if (f.tail) dgp["tail"] = *f.tail;
  if (!dgp.empty()) j["dgp"] = dgp;
  if (!f.regressors.empty()) j["regressors"] = f.regressors;
  if (!f.families.empty()) j["families"] = f.families;
  if (!f.ladder.empty()) j["ladder"] = f.ladder;
  if (f.n_mc || f.truth_rows) {
    j["scores"] = json::object();
    if (f.n_mc) j["scores"]["n_mc"] = *f.n_mc;
    if (f.truth_rows) j["scores"]["truth_rows"] = *f.truth_rows;
  }
  return j;
}

iwc::ExperimentConfig resolve_config(const Flags& f) {
  json j = flags_to_json(f);
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw iwc::Error(iwc::ErrorKind::kConfigError, "cannot open " + f.config_path);
    json file;
    try {
      in >> file;
    } catch (const json::exception& e) {
      throw iwc::Error(iwc::ErrorKind::kConfigError, std::string("invalid JSON: ") + e.what());
    }
    if (!file.is_object()) throw iwc::Error(iwc::ErrorKind::kConfigError, "config must be an object");
    j.merge_patch(file);
  }
  return iwc::ExperimentConfig::from_json(j);
}

void write_levels(const std::filesystem::path& path, const std::vector<double>& levels) {
  std::ofstream out(path);
  out << json{{"levels", levels}}.dump(2) << "\n";
  if (!out) throw iwc::Error(iwc::ErrorKind::kIoError, "cannot write " + path.string());
}

std::vector<double> read_levels(const std::string& spec) {
  std::ifstream in(spec);
  if (in) {
    json j;
    try {
      in >> j;
      return j.at("levels").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw iwc::Error(iwc::ErrorKind::kConfigError, std::string("levels file: ") + e.what());
    }
  }
  std::vector<double> out;
  std::stringstream ss(spec);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw iwc::Error(iwc::ErrorKind::kConfigError, "bad level value '" + tok + "'");
    }
  }
  return out;
}

// Writes data.csv, hidden.csv, levels.json and config.json for one sample.
void persist_sample(const iwc::ExperimentConfig& config, const iwc::SyntheticSample& s) {
  const auto dir = config.run_dir();
  std::filesystem::create_directories(dir);
  iwc::write_table_csv(dir / "data.csv", s.table, s.coding());
  iwc::write_hidden_csv(dir / "hidden.csv", s);
  write_levels(dir / "levels.json", s.level_values);
  std::ofstream(dir / "config.json") << config.to_json().dump(2) << "\n";
  std::cout << dir.string() << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"Counterfactual estimation benchmark (IoC / IwC / DRE)"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "iwc 0.1.0");
  app.add_flag_callback("--isa", [] {
    std::cout << iwc::kernels::isa_name(iwc::kernels::active_isa()) << "\n";
    throw CLI::Success();
  }, "Print the active kernel instruction set and exit");

  Flags flags;
  auto* simulate = app.add_subcommand("simulate", "Generate one simulated sample");
  auto* semi = app.add_subcommand("semi-synth", "Regenerate treatments and outcomes on features");
  auto* bench = app.add_subcommand("bench", "Run repeated out-of-sample experiments");
  auto* ladder = app.add_subcommand("ladder", "Consistency statistics over sample sizes");
  auto* scores = app.add_subcommand("check-scores", "Moment and orthogonality checks");
  for (auto* sub : {simulate, semi, bench, ladder, scores}) add_experiment_flags(sub, flags);
  bool write_features = false;
  semi->add_flag("--write-features", write_features,
                 "Also write the features used (stand-in features when --features is absent)");

  auto* estimate = app.add_subcommand("estimate", "Estimate effects on a CSV dataset");
  std::string data_path, levels_spec, out_path, regressor = "RANDOM_FOREST";
  double train_fraction = 0.7;
  std::uint64_t est_seed = 1;
  estimate->add_option("--data", data_path, "Dataset CSV (y, d, u_k, x_k, z_k)")->required();
  estimate->add_option("--levels", levels_spec, "levels.json or comma-separated treatment values")
      ->required();
  estimate->add_option("--regressor", regressor, "Outcome family");
  estimate->add_option("--train-fraction", train_fraction, "Training share");
  estimate->add_option("--seed", est_seed, "Split and learner seed");
  estimate->add_option("-o,--out", out_path, "Report path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*simulate) {
      auto config = resolve_config(flags);
      config.mode = iwc::DataMode::kSimulated;
      persist_sample(config, iwc::gen_dataset(config.dgp, config.n, config.seed));
      return kExitOk;
    }
    if (*semi) {
      flags.mode = "semi_synthetic";
      const auto config = resolve_config(flags);
      const iwc::Features features =
          config.features_csv
              ? iwc::read_features_csv(*config.features_csv, config.dgp.p_u, config.dgp.p_x,
                                       config.dgp.p_z)
              : iwc::sample_features(config.dgp, config.n, config.seed);
      persist_sample(config, iwc::gen_semi_synthetic(features, config.dgp, config.seed));
      if (write_features) iwc::write_features_csv(config.run_dir() / "features.csv", features);
      return kExitOk;
    }
    if (*bench) {
      const auto result = iwc::run_experiment(resolve_config(flags));
      for (const auto& f : result.failures) {
        std::cerr << "failure: repetition " << f.repetition
                  << (f.regressor.empty() ? "" : " " + f.regressor) << ": " << f.error << "\n";
      }
      return result.partial() ? kExitPartial : kExitOk;
    }
    if (*ladder) {
      const auto config = resolve_config(flags);
      const auto result = iwc::run_consistency_ladder(config, config.ladder);
      return result.partial() ? kExitPartial : kExitOk;
    }
    if (*scores) {
      const auto out = iwc::run_score_checks(resolve_config(flags));
      std::cout << out.dump(2) << "\n";
      return kExitOk;
    }
    if (*estimate) {
      const iwc::TreatmentCoding coding(read_levels(levels_spec));
      const iwc::ObservationTable table = iwc::read_table_csv(data_path, coding);
      iwc::validate_table(table, coding);
      const std::size_t n = coding.size();
      const auto split = iwc::split_train_test(table, train_fraction, est_seed);
      const auto missing = iwc::levels_missing_from(table, split.train_rows, n);
      if (!missing.empty()) {
        throw iwc::Error(iwc::ErrorKind::kLevelMissingInTrain,
                         "level " + std::to_string(missing.front()) + " absent from training rows");
      }
      iwc::OutcomeModelSpec spec;
      spec.family = iwc::parse_family(regressor);
      if (spec.family == iwc::Family::kRidge || spec.family == iwc::Family::kLasso) {
        spec.lambda_reg = 1.0;
      }
      const auto prop = iwc::fit_propensity(table, split.train_rows, n, {});
      const auto model = iwc::fit_outcome_model(spec, table, split.train_rows, n, est_seed);
      const iwc::NuisanceBundle bundle{&model, &prop, split.test_rows};
      const json report = iwc::full_report(table, bundle).to_json(coding.levels());
      if (out_path.empty()) {
        std::cout << report.dump(2) << "\n";
      } else {
        std::ofstream(out_path) << report.dump(2) << "\n";
      }
      return kExitOk;
    }
  } catch (const iwc::TableValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& v : e.violations()) std::cerr << "  " << v.message << "\n";
    return kExitConfig;
  } catch (const iwc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == iwc::ErrorKind::kConfigError || e.kind() == iwc::ErrorKind::kParseError
               ? kExitConfig
               : kExitPartial;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPartial;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
