#include <algorithm>
#include <cctype>

#include "iwc/kernels.hpp"
#include "iwc/learners.hpp"
#include "iwc/rng.hpp"

namespace iwc {

Eigen::VectorXd predict_mlp(const MlpFit& fit, const Matrix& x);

const char* family_name(Family family) {
  switch (family) {
    case Family::kOls: return "OLS";
    case Family::kRidge: return "RIDGE";
    case Family::kLasso: return "LASSO";
    case Family::kRandomForest: return "RANDOM_FOREST";
    case Family::kMlp: return "MLP";
  }
  return "UNKNOWN";
}

Family parse_family(const std::string& name) {
  std::string upper = name;
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (upper == "OLS") return Family::kOls;
  if (upper == "RIDGE") return Family::kRidge;
  if (upper == "LASSO") return Family::kLasso;
  if (upper == "RANDOM_FOREST" || upper == "RF") return Family::kRandomForest;
  if (upper == "MLP") return Family::kMlp;
  throw Error(ErrorKind::kConfigError, "unknown regressor family '" + name + "'");
}

bool OutcomeModelSpec::resolved_per_level() const {
  if (per_level) return *per_level;
  return family == Family::kOls || family == Family::kRidge ||
         family == Family::kLasso;
}

void OutcomeModelSpec::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorKind::kConfigError, what);
  };
  if (!(lambda_reg >= 0.0)) fail("lambda_reg must be >= 0");
  if (!(lasso_tol > 0.0) || lasso_max_iter < 1) fail("lasso tolerance/iterations invalid");
  if (forest.n_trees < 1 || forest.max_depth < 1 || forest.min_leaf < 1) {
    fail("forest n_trees, max_depth and min_leaf must be >= 1");
  }
  if (forest.feature_subsample < 0) fail("forest feature_subsample must be >= 0");
  if (!(forest.bootstrap_fraction > 0.0)) fail("forest bootstrap_fraction must be > 0");
  if (mlp.widths.empty()) fail("mlp needs at least one hidden layer");
  for (int w : mlp.widths) {
    if (w < 1) fail("mlp widths must be >= 1");
  }
  if (!(mlp.learning_rate > 0.0) || mlp.epochs < 1 || mlp.batch_size < 1) {
    fail("mlp learning_rate, epochs and batch_size must be positive");
  }
}

namespace {

// Dense [u, z (, level)] design over the listed rows.
Matrix design(const ObservationTable& table, std::span<const std::size_t> rows,
              int level_column) {
  const auto pu = table.u.cols();
  const auto pz = table.z.cols();
  Matrix out(static_cast<Eigen::Index>(rows.size()), pu + pz + (level_column >= 0 ? 1 : 0));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(rows[k]);
    const auto i = static_cast<Eigen::Index>(k);
    out.row(i).head(pu) = table.u.row(r);
    out.row(i).segment(pu, pz) = table.z.row(r);
  }
  if (level_column >= 0) out.col(pu + pz).setConstant(level_column);
  return out;
}

RegressorFit fit_one(const OutcomeModelSpec& spec, const Matrix& x,
                     std::span<const double> y, std::uint64_t seed) {
  switch (spec.family) {
    case Family::kOls: return fit_ols(x, y);
    case Family::kRidge: return fit_ridge(x, y, spec.lambda_reg);
    case Family::kLasso:
      return fit_lasso(x, y, spec.lambda_reg, spec.lasso_tol, spec.lasso_max_iter);
    case Family::kRandomForest: return fit_forest(x, y, spec.forest, seed);
    case Family::kMlp: return fit_mlp(x, y, spec.mlp, seed);
  }
  throw Error(ErrorKind::kConfigError, "unknown family");
}

}  // namespace

FittedOutcomeModel fit_outcome_model(const OutcomeModelSpec& spec,
                                     const ObservationTable& table,
                                     std::span<const std::size_t> train_rows,
                                     std::size_t n_levels, std::uint64_t seed) {
  spec.validate();
  if (train_rows.empty()) {
    throw Error(ErrorKind::kDegenerateSplit, "no training rows");
  }
  FittedOutcomeModel model;
  model.family = spec.family;
  model.per_level = spec.resolved_per_level();
  model.p_u = table.p_u();
  model.p_z = table.p_z();
  model.n_levels = n_levels;
  if (model.per_level) {
    const auto missing = levels_missing_from(table, train_rows, n_levels);
    if (!missing.empty()) {
      throw Error(ErrorKind::kLevelMissingInTrain,
                  "level " + std::to_string(missing.front()) +
                      " has no training rows");
    }
    for (std::size_t j = 0; j < n_levels; ++j) {
      const RowIndex rows = subpopulation(table, train_rows, static_cast<int>(j));
      std::vector<double> y;
      y.reserve(rows.size());
      for (std::size_t r : rows) y.push_back(table.y[r]);
      model.regressors.push_back(
          fit_one(spec, design(table, rows, -1), y, derive_seed(seed, j)));
    }
  } else {
    Matrix x = design(table, train_rows, 0);
    const auto last = x.cols() - 1;
    std::vector<double> y;
    y.reserve(train_rows.size());
    for (std::size_t k = 0; k < train_rows.size(); ++k) {
      x(static_cast<Eigen::Index>(k), last) = table.d[train_rows[k]];
      y.push_back(table.y[train_rows[k]]);
    }
    model.regressors.push_back(fit_one(spec, x, y, derive_seed(seed, 0)));
  }
  return model;
}

double predict_regressor(const RegressorFit& fit, std::span<const double> input) {
  return std::visit(
      [&](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, LinearFit>) {
          if (f.beta.size() != input.size()) {
            throw Error(ErrorKind::kDimensionMismatch, "linear model input width");
          }
          return f.intercept + kernels::dot(f.beta, input);
        } else if constexpr (std::is_same_v<T, ForestFit>) {
          double s = 0.0;
          for (const auto& tree : f.trees) s += tree.predict(input);
          return s / static_cast<double>(f.trees.size());
        } else {
          if (static_cast<std::size_t>(f.in_mean.size()) != input.size()) {
            throw Error(ErrorKind::kDimensionMismatch, "MLP input width");
          }
          Matrix row(1, static_cast<Eigen::Index>(input.size()));
          std::copy(input.begin(), input.end(), row.data());
          return predict_mlp(f, row)[0];
        }
      },
      fit);
}

Eigen::VectorXd predict_regressor(const RegressorFit& fit, const Matrix& x) {
  const auto n = x.rows();
  Eigen::VectorXd out(n);
  if (const auto* lin = std::get_if<LinearFit>(&fit)) {
    if (static_cast<Eigen::Index>(lin->beta.size()) != x.cols()) {
      throw Error(ErrorKind::kDimensionMismatch, "linear model input width");
    }
    kernels::gemv({x.data(), static_cast<std::size_t>(x.size())},
                  static_cast<std::size_t>(n), static_cast<std::size_t>(x.cols()),
                  lin->beta, lin->intercept, {out.data(), static_cast<std::size_t>(n)});
    return out;
  }
  if (const auto* mlp = std::get_if<MlpFit>(&fit)) {
    if (mlp->in_mean.size() != x.cols()) {
      throw Error(ErrorKind::kDimensionMismatch, "MLP input width");
    }
    return predict_mlp(*mlp, x);
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    out[r] = predict_regressor(fit, row_span(x, static_cast<std::size_t>(r)));
  }
  return out;
}

double FittedOutcomeModel::predict(int level, std::span<const double> u,
                                   std::span<const double> z) const {
  if (u.size() != p_u || z.size() != p_z) {
    throw Error(ErrorKind::kDimensionMismatch, "feature widths differ from training");
  }
  if (level < 0 || static_cast<std::size_t>(level) >= n_levels) {
    throw Error(ErrorKind::kUnknownTreatmentLabel, "level " + std::to_string(level));
  }
  std::vector<double> input(u.begin(), u.end());
  input.insert(input.end(), z.begin(), z.end());
  if (per_level) return predict_regressor(regressors[static_cast<std::size_t>(level)], input);
  input.push_back(level);
  return predict_regressor(regressors.front(), input);
}

Eigen::MatrixXd FittedOutcomeModel::predict_all(
    const ObservationTable& table, std::span<const std::size_t> rows) const {
  if (table.p_u() != p_u || table.p_z() != p_z) {
    throw Error(ErrorKind::kDimensionMismatch, "feature widths differ from training");
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(n_levels));
  Matrix x = design(table, rows, per_level ? -1 : 0);
  for (std::size_t j = 0; j < n_levels; ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    if (per_level) {
      out.col(col) = predict_regressor(regressors[j], x);
    } else {
      x.col(x.cols() - 1).setConstant(static_cast<double>(j));
      out.col(col) = predict_regressor(regressors.front(), x);
    }
  }
  return out;
}

// ---------------------------------------------------------------- JSON

namespace {

using nlohmann::json;

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols) {
      throw Error(ErrorKind::kParseError, "ragged matrix");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

Eigen::VectorXd vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json regressor_json(const RegressorFit& fit) {
  return std::visit(
      [](const auto& f) -> json {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, LinearFit>) {
          return {{"kind", "linear"}, {"beta", f.beta}, {"intercept", f.intercept}};
        } else if constexpr (std::is_same_v<T, ForestFit>) {
          json trees = json::array();
          for (const auto& t : f.trees) {
            trees.push_back({{"feature", t.feature},
                             {"threshold", t.threshold},
                             {"left", t.left},
                             {"right", t.right},
                             {"value", t.value}});
          }
          return {{"kind", "forest"}, {"trees", std::move(trees)}};
        } else {
          json layers = json::array();
          for (const auto& l : f.layers) {
            layers.push_back({{"weight", matrix_json(l.weight)},
                              {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
          }
          return {{"kind", "mlp"},
                  {"layers", std::move(layers)},
                  {"in_mean", std::vector<double>(f.in_mean.data(), f.in_mean.data() + f.in_mean.size())},
                  {"in_scale", std::vector<double>(f.in_scale.data(), f.in_scale.data() + f.in_scale.size())},
                  {"out_mean", f.out_mean},
                  {"out_scale", f.out_scale}};
        }
      },
      fit);
}

RegressorFit regressor_from(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") {
    LinearFit f;
    f.beta = j.at("beta").get<std::vector<double>>();
    f.intercept = j.at("intercept").get<double>();
    return f;
  }
  if (kind == "forest") {
    ForestFit f;
    for (const auto& t : j.at("trees")) {
      TreeFit tree;
      tree.feature = t.at("feature").get<std::vector<int>>();
      tree.threshold = t.at("threshold").get<std::vector<double>>();
      tree.left = t.at("left").get<std::vector<int>>();
      tree.right = t.at("right").get<std::vector<int>>();
      tree.value = t.at("value").get<std::vector<double>>();
      f.trees.push_back(std::move(tree));
    }
    return f;
  }
  if (kind == "mlp") {
    MlpFit f;
    for (const auto& l : j.at("layers")) {
      f.layers.push_back({matrix_from(l.at("weight")), vector_from(l.at("bias"))});
    }
    f.in_mean = vector_from(j.at("in_mean"));
    f.in_scale = vector_from(j.at("in_scale"));
    f.out_mean = j.at("out_mean").get<double>();
    f.out_scale = j.at("out_scale").get<double>();
    return f;
  }
  throw Error(ErrorKind::kParseError, "unknown regressor kind '" + kind + "'");
}

}  // namespace

nlohmann::json to_json(const FittedOutcomeModel& model) {
  json regs = json::array();
  for (const auto& r : model.regressors) regs.push_back(regressor_json(r));
  return {{"schema", "iwc.outcome_model/1"},
          {"family", family_name(model.family)},
          {"per_level", model.per_level},
          {"p_u", model.p_u},
          {"p_z", model.p_z},
          {"n_levels", model.n_levels},
          {"regressors", std::move(regs)}};
}

FittedOutcomeModel outcome_model_from_json(const nlohmann::json& j) {
  try {
    FittedOutcomeModel m;
    m.family = parse_family(j.at("family").get<std::string>());
    m.per_level = j.at("per_level").get<bool>();
    m.p_u = j.at("p_u").get<std::size_t>();
    m.p_z = j.at("p_z").get<std::size_t>();
    m.n_levels = j.at("n_levels").get<std::size_t>();
    for (const auto& r : j.at("regressors")) m.regressors.push_back(regressor_from(r));
    if (m.regressors.size() != (m.per_level ? m.n_levels : 1)) {
      throw Error(ErrorKind::kParseError, "regressor count does not match levels");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParseError, e.what());
  }
}

// Propensity serialization lives here too so all model JSON shares helpers.
nlohmann::json to_json(const FittedPropensityModel& model) {
  return {{"schema", "iwc.propensity_model/1"},
          {"weights", matrix_json(model.weights)},
          {"clip", model.clip},
          {"p_x", model.p_x},
          {"p_z", model.p_z},
          {"iterations", model.iterations},
          {"converged", model.converged},
          {"separation_warning", model.separation_warning},
          {"final_gradient", model.final_gradient}};
}

FittedPropensityModel propensity_model_from_json(const nlohmann::json& j) {
  try {
    FittedPropensityModel m;
    m.weights = matrix_from(j.at("weights"));
    m.clip = j.at("clip").get<double>();
    m.p_x = j.at("p_x").get<std::size_t>();
    m.p_z = j.at("p_z").get<std::size_t>();
    m.iterations = j.value("iterations", 0);
    m.converged = j.value("converged", false);
    m.separation_warning = j.value("separation_warning", false);
    m.final_gradient = j.value("final_gradient", 0.0);
    if (static_cast<std::size_t>(m.weights.cols()) != m.p_x + m.p_z + 1) {
      throw Error(ErrorKind::kParseError, "propensity weight width mismatch");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParseError, e.what());
  }
}

}  // namespace iwc
