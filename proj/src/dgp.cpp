#include "iwc/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>

#include "iwc/kernels.hpp"
#include "iwc/rng.hpp"

namespace iwc {
namespace {

const std::vector<double> kA1 = {
    0.0797029, -1.76102223, -0.91346963, 0.68418344, 0.64784692,
    0.67517954, 1.46044727, -0.77882898, -0.2116248, 1.01021167};

const std::vector<double> kA2 = {
    1.15372801, 1.22690352, 0.684614, 1.47078252, -0.42191908,
    -0.11914525, -0.24666433, 0.01059945, -0.7072146, -0.47233888,
    0.41497956, 0.94239603, 2.25119595, -0.1074173, 0.41419469,
    -0.46030413, 1.52607699, 0.56253337, -0.82265637, -0.99873261};

const std::vector<double> kA0Simulated = {0.15, 0.15, 0.15, 0, 0.15, 0, 0, 0, 0, 0,
                                          0,    0,    0,    0, 0,    0, 0, 0, 0, 0};

const std::vector<double> kC1Z = {
    -0.09656428735342949, 0.9734025822882408,   -0.8582891237280186,
    -0.30860415187183593, -0.28146793638372014, -2.1733362770260594,
    1.07992405679886,     -0.48654644176178413, 0.9186030042716846,
    -0.3898601365276411,  0.5508196301315733,   1.214349568204593,
    0.5911358538192414,   -0.039596488856784254, -0.2689273104251347,
    -0.49321543083682934, 0.20597029681886586,  -0.4562984857686687,
    1.0593842547558803,   -0.2403438672537869};

const std::vector<double> kC1U = {0.40284599, -1.72689173, -1.06178813, -1.34073716,
                                  1.48927656, -1.10148294, -0.31908929, -1.93599287,
                                  0.23803084, -0.00819786};

constexpr std::size_t kBlockRows = 4096;

std::size_t binomial(std::size_t p, std::size_t r) {
  if (r > p) return 0;
  std::size_t out = 1;
  for (std::size_t k = 1; k <= r; ++k) out = out * (p - r + k) / k;
  return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

double dot(std::span<const double> a, std::span<const double> b) {
  return kernels::dot(a, b);
}

KCoefficients draw_coefficients(std::vector<double> c1, std::size_t p, KMode mode,
                                Engine& engine) {
  std::normal_distribution<double> normal;
  KCoefficients k;
  if (c1.empty()) {
    c1.resize(p);
    for (double& v : c1) v = normal(engine);
  }
  k.c[0] = std::move(c1);
  if (mode == KMode::kSimulated) {
    for (std::size_t r = 2; r <= 4; ++r) {
      k.c[r - 1].resize(binomial(p, r));
      for (double& v : k.c[r - 1]) v = normal(engine);
    }
  }
  return k;
}

}  // namespace

// ---------------------------------------------------------------- config

DgpConfig DgpConfig::simulated() {
  DgpConfig c;
  c.a0 = kA0Simulated;
  c.a1 = kA1;
  c.a2 = kA2;
  return c;
}

DgpConfig DgpConfig::semi_synthetic() {
  DgpConfig c;
  c.k_mode = KMode::kLinear;
  c.e1 = 1.0;
  c.e2 = 1.0;
  c.tau = 1.5;
  c.r_exp = 0.5;
  c.lambda = 0.0507;
  c.gamma = 0.5896;
  c.b1 = 0.0;
  c.b2 = 0.0;
  c.a0 = kC1Z;
  c.a1 = kA1;
  c.a2 = kA2;
  c.c1z = kC1Z;
  c.c1u = kC1U;
  return c;
}

void DgpConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kConfigError, what); };
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) fail("beta must lie in [0, 1]");
  if (!(power_m > 0.0) || !(power_n > 0.0)) fail("powers m and n must be positive");
  if (!(r_exp > 0.0) || !(tau > 0.0)) fail("tau and r must be positive");
  if (!(gamma > 0.0)) fail("gamma must be positive");
  if (n_levels < 2) fail("n_levels must be >= 2");
  if (p_u == 0 || p_x == 0 || p_z == 0) fail("feature blocks must be non-empty");
  if (a0.size() != p_z) fail("a0 must have p_z entries");
  if (a1.size() != p_x) fail("a1 must have p_x entries");
  if (a2.size() != p_z) fail("a2 must have p_z entries");
  if (!c1z.empty() && c1z.size() != p_z) fail("c1z must have p_z entries");
  if (!c1u.empty() && c1u.size() != p_u) fail("c1u must have p_u entries");
  if (k_mode == KMode::kLinear && (c1z.empty() || c1u.empty())) {
    fail("linear k mode needs c1z and c1u");
  }
  if ((b1 != 0.0 || b2 != 0.0) && p_x < 10) fail("ratio terms need p_x >= 10");
  for (const auto* c : {&corr_u, &corr_x, &corr_z}) {
    if (!(c->a >= 0.0 && c->a <= 1.0) || !(c->b > 0.0)) {
      fail("correlation parameters need a in [0, 1] and b > 0");
    }
  }
  if (tail == Tail::kHeavy && !(dof_u > 2.0 && dof_x > 2.0 && dof_z > 2.0)) {
    fail("heavy-tail degrees of freedom must exceed 2");
  }
  if (!(xi_relative >= 0.0) || (xi_sd_override && !(*xi_sd_override >= 0.0))) {
    fail("xi scale must be >= 0");
  }
  if (!(nu_sd > 0.0)) fail("nu_sd must be positive");
  if (n_nu < 1) fail("n_nu must be >= 1");
}

nlohmann::json DgpConfig::to_json() const {
  nlohmann::json j = {
      {"schema", "iwc.dgp_config/1"},
      {"alpha", alpha},
      {"beta", beta},
      {"power_m", power_m},
      {"power_n", power_n},
      {"a0", a0},
      {"e1", e1},
      {"e2", e2},
      {"tau", tau},
      {"r_exp", r_exp},
      {"a1", a1},
      {"a2", a2},
      {"lambda", lambda},
      {"gamma", gamma},
      {"b1", b1},
      {"b2", b2},
      {"k_mode", k_mode == KMode::kSimulated ? "simulated" : "linear"},
      {"c1z", c1z},
      {"c1u", c1u},
      {"interaction_seed", interaction_seed},
      {"tail", tail == Tail::kLight ? "light" : "heavy"},
      {"corr_u", {corr_u.a, corr_u.b}},
      {"corr_x", {corr_x.a, corr_x.b}},
      {"corr_z", {corr_z.a, corr_z.b}},
      {"dof", {dof_u, dof_x, dof_z}},
      {"xi_relative", xi_relative},
      {"nu_sd", nu_sd},
      {"nu_relative", nu_relative},
      {"standardize_latent", standardize_latent},
      {"true_propensity", true_propensity == TruePropensity::kAnalytic ? "analytic" : "monte_carlo"},
      {"n_nu", n_nu},
      {"n_levels", n_levels},
      {"p_u", p_u},
      {"p_x", p_x},
      {"p_z", p_z}};
  j["xi_sd"] = xi_sd_override ? nlohmann::json(*xi_sd_override) : nlohmann::json(nullptr);
  return j;
}

DgpConfig DgpConfig::from_json(const nlohmann::json& j) {
  try {
    // Unspecified fields fall back to the preset named by "preset".
    const std::string preset = j.value("preset", std::string("simulated"));
    DgpConfig c;
    if (preset == "simulated") {
      c = simulated();
    } else if (preset == "semi_synthetic") {
      c = semi_synthetic();
    } else {
      throw Error(ErrorKind::kConfigError, "unknown preset '" + preset + "'");
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key) && !j[key].is_null()) {
        field = j[key].get<std::decay_t<decltype(field)>>();
      }
    };
    get("alpha", c.alpha);
    get("beta", c.beta);
    get("power_m", c.power_m);
    get("power_n", c.power_n);
    get("a0", c.a0);
    get("e1", c.e1);
    get("e2", c.e2);
    get("tau", c.tau);
    get("r_exp", c.r_exp);
    get("a1", c.a1);
    get("a2", c.a2);
    get("lambda", c.lambda);
    get("gamma", c.gamma);
    get("b1", c.b1);
    get("b2", c.b2);
    get("c1z", c.c1z);
    get("c1u", c.c1u);
    get("interaction_seed", c.interaction_seed);
    get("xi_relative", c.xi_relative);
    get("nu_sd", c.nu_sd);
    get("nu_relative", c.nu_relative);
    get("standardize_latent", c.standardize_latent);
    get("n_nu", c.n_nu);
    get("n_levels", c.n_levels);
    get("p_u", c.p_u);
    get("p_x", c.p_x);
    get("p_z", c.p_z);
    if (j.contains("k_mode")) {
      const auto m = j["k_mode"].get<std::string>();
      if (m != "simulated" && m != "linear") throw Error(ErrorKind::kConfigError, "k_mode");
      c.k_mode = m == "simulated" ? KMode::kSimulated : KMode::kLinear;
    }
    if (j.contains("tail")) {
      const auto t = j["tail"].get<std::string>();
      if (t != "light" && t != "heavy") throw Error(ErrorKind::kConfigError, "tail");
      c.tail = t == "light" ? Tail::kLight : Tail::kHeavy;
      if (c.tail == Tail::kHeavy && !j.contains("corr_x")) c.corr_x = {0.5, 0.5};
    }
    auto corr = [&](const char* key, BlockCorrelation& field) {
      if (j.contains(key)) {
        const auto v = j[key].get<std::vector<double>>();
        if (v.size() != 2) throw Error(ErrorKind::kConfigError, std::string(key) + " needs [a, b]");
        field = {v[0], v[1]};
      }
    };
    corr("corr_u", c.corr_u);
    corr("corr_x", c.corr_x);
    corr("corr_z", c.corr_z);
    if (j.contains("dof")) {
      const auto v = j["dof"].get<std::vector<double>>();
      if (v.size() != 3) throw Error(ErrorKind::kConfigError, "dof needs [u, x, z]");
      c.dof_u = v[0];
      c.dof_x = v[1];
      c.dof_z = v[2];
    }
    if (j.contains("xi_sd") && !j["xi_sd"].is_null()) c.xi_sd_override = j["xi_sd"].get<double>();
    if (j.contains("true_propensity")) {
      const auto t = j["true_propensity"].get<std::string>();
      if (t != "analytic" && t != "monte_carlo") {
        throw Error(ErrorKind::kConfigError, "true_propensity");
      }
      c.true_propensity = t == "analytic" ? TruePropensity::kAnalytic : TruePropensity::kMonteCarlo;
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfigError, e.what());
  }
}

// ---------------------------------------------------------------- features

Eigen::MatrixXd correlation_matrix(std::size_t p, const BlockCorrelation& c) {
  const auto n = static_cast<Eigen::Index>(p);
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      m(i, j) = c.a + (1.0 - c.a) * std::exp(-c.b * static_cast<double>(std::abs(i - j)));
    }
  }
  return m;
}

namespace {

// Square-root factor S with S S^T = C, valid for semi-definite C.
Eigen::MatrixXd factor(const Eigen::MatrixXd& c) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(c);
  if (ldlt.info() != Eigen::Success) {
    throw Error(ErrorKind::kFactorizationFailure, "correlation matrix factorization failed");
  }
  Eigen::VectorXd d = ldlt.vectorD();
  const double tol = 1e-10 * std::max(1.0, d.cwiseAbs().maxCoeff());
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    if (d[k] < -tol) {
      throw Error(ErrorKind::kFactorizationFailure, "correlation matrix is not PSD");
    }
    d[k] = std::sqrt(std::max(0.0, d[k]));
  }
  const Eigen::MatrixXd l = ldlt.matrixL();
  Eigen::MatrixXd s = ldlt.transpositionsP().transpose() * (l * d.asDiagonal());
  return s;
}

void fill_block(Matrix& out, const Eigen::MatrixXd& s, bool heavy, double dof,
                std::size_t begin, std::size_t end, Engine& engine) {
  std::normal_distribution<double> normal;
  std::chi_squared_distribution<double> chi2(heavy ? dof : 1.0);
  const Eigen::Index p = s.rows();
  Eigen::VectorXd g(p);
  // A multivariate t with dof degrees has covariance dof/(dof-2) times its
  // shape; the sqrt((dof-2)/dof) factor makes the covariance equal C.
  const double t_scale = heavy ? std::sqrt((dof - 2.0) / dof) : 1.0;
  for (std::size_t r = begin; r < end; ++r) {
    for (Eigen::Index k = 0; k < p; ++k) g[k] = normal(engine);
    double mult = 1.0;
    if (heavy) mult = t_scale / std::sqrt(chi2(engine) / dof);
    out.row(static_cast<Eigen::Index>(r)) = (s * g).transpose() * mult;
  }
}

}  // namespace

Features sample_features(const DgpConfig& config, std::size_t n, std::uint64_t seed) {
  config.validate();
  const Eigen::MatrixXd su = factor(correlation_matrix(config.p_u, config.corr_u));
  const Eigen::MatrixXd sx = factor(correlation_matrix(config.p_x, config.corr_x));
  const Eigen::MatrixXd sz = factor(correlation_matrix(config.p_z, config.corr_z));
  Features f;
  const auto rows = static_cast<Eigen::Index>(n);
  f.u.resize(rows, static_cast<Eigen::Index>(config.p_u));
  f.x.resize(rows, static_cast<Eigen::Index>(config.p_x));
  f.z.resize(rows, static_cast<Eigen::Index>(config.p_z));
  const bool heavy = config.tail == Tail::kHeavy;
  const std::uint64_t base = derive_seed(seed, streams::kFeatures);
  // Each block of rows owns a substream, so output does not depend on how
  // blocks are scheduled.
  for (std::size_t b = 0; b * kBlockRows < n; ++b) {
    const std::size_t begin = b * kBlockRows;
    const std::size_t end = std::min(n, begin + kBlockRows);
    Engine engine(derive_seed(base, b));
    fill_block(f.u, su, heavy, config.dof_u, begin, end, engine);
    fill_block(f.x, sx, heavy, config.dof_x, begin, end, engine);
    fill_block(f.z, sz, heavy, config.dof_z, begin, end, engine);
  }
  return f;
}

// ---------------------------------------------------------------- k and q

std::vector<double> interaction_vector(std::span<const double> v, int r) {
  if (r < 2 || r > 4) throw Error(ErrorKind::kConfigError, "interaction order must be 2..4");
  const std::size_t p = v.size();
  std::vector<double> out;
  out.reserve(binomial(p, static_cast<std::size_t>(r)));
  std::vector<std::size_t> idx(static_cast<std::size_t>(r));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (static_cast<std::size_t>(r) > p) return out;
  while (true) {
    double prod = 1.0;
    for (std::size_t k : idx) prod *= v[k];
    out.push_back(prod);
    // Advance to the next combination in lexicographic order.
    int pos = r - 1;
    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] ==
                           p - static_cast<std::size_t>(r) + static_cast<std::size_t>(pos)) {
      --pos;
    }
    if (pos < 0) break;
    ++idx[static_cast<std::size_t>(pos)];
    for (auto k = static_cast<std::size_t>(pos) + 1; k < idx.size(); ++k) idx[k] = idx[k - 1] + 1;
  }
  return out;
}

KEvaluator::KEvaluator(KCoefficients coefficients, KMode mode)
    : coef_(std::move(coefficients)), mode_(mode) {
  const std::size_t p = coef_.c[0].size();
  if (mode_ == KMode::kLinear) return;
  for (std::size_t r = 2; r <= 4; ++r) {
    if (coef_.c[r - 1].size() != binomial(p, r)) {
      throw Error(ErrorKind::kDimensionMismatch,
                  "order-" + std::to_string(r) + " coefficients have the wrong length");
    }
  }
  // log|v_S| = sum_{k in S} log|v_k|, so each coefficient of an order-r
  // product adds to the weight of every component in its index set.
  log_weight_ = coef_.c[0];
  std::size_t i2 = 0, i3 = 0, i4 = 0;
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = a + 1; b < p; ++b) {
      const double w2 = coef_.c[1][i2++];
      log_weight_[a] += w2;
      log_weight_[b] += w2;
      for (std::size_t c = b + 1; c < p; ++c) {
        const double w3 = coef_.c[2][i3++];
        log_weight_[a] += w3;
        log_weight_[b] += w3;
        log_weight_[c] += w3;
        for (std::size_t e = c + 1; e < p; ++e) {
          const double w4 = coef_.c[3][i4++];
          log_weight_[a] += w4;
          log_weight_[b] += w4;
          log_weight_[c] += w4;
          log_weight_[e] += w4;
        }
      }
    }
  }
}

double KEvaluator::operator()(std::span<const double> v) const {
  const std::size_t p = coef_.c[0].size();
  if (v.size() != p) throw Error(ErrorKind::kDimensionMismatch, "k(v) width");
  if (mode_ == KMode::kLinear) return dot(coef_.c[0], v);

  double poly = dot(coef_.c[0], v);
  const double* c2 = coef_.c[1].data();
  const double* c3 = coef_.c[2].data();
  const double* c4 = coef_.c[3].data();
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = a + 1; b < p; ++b) {
      const double p2 = v[a] * v[b];
      poly += *c2++ * p2;
      for (std::size_t c = b + 1; c < p; ++c) {
        const double p3 = p2 * v[c];
        poly += *c3++ * p3;
        // The order-4 coefficients for fixed (a, b, c) are contiguous.
        const std::size_t tail = p - c - 1;
        if (tail > 0) {
          poly += p3 * dot({c4, tail}, v.subspan(c + 1, tail));
          c4 += tail;
        }
      }
    }
  }
  double logs = std::log(std::max(std::fabs(poly), kLogFloor));
  for (std::size_t k = 0; k < p; ++k) {
    logs += log_weight_[k] * std::log(std::max(std::fabs(v[k]), kLogFloor));
  }
  return logs;
}

double k_of(std::span<const double> v, const KCoefficients& c, KMode mode) {
  return KEvaluator(c, mode)(v);
}

double f_of_d(double d, const DgpConfig& config) {
  const double dn = std::pow(d, config.power_n);
  const double dm = std::pow(d, config.power_m);
  if (!std::isfinite(dn) || !std::isfinite(dm) || dn > 700.0) {
    throw Error(ErrorKind::kConfigError,
                "f(D) is undefined or overflows at D = " + format_double(d));
  }
  return config.alpha +
         (1.0 - config.alpha) * (config.beta * dm + (1.0 - config.beta) * std::exp(dn));
}

// ---------------------------------------------------------------- treatment

double latent_index(std::span<const double> x, std::span<const double> z,
                    const DgpConfig& config) {
  double s = dot(config.a1, x) + std::pow(std::fabs(dot(config.a2, z)), config.gamma);
  if (config.b1 != 0.0) s += config.b1 * x[8] / (1.0 + std::fabs(x[2]));
  if (config.b2 != 0.0) s += config.b2 * x[9] / (1.0 + std::fabs(x[5]));
  return config.lambda * s;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Scaled latent -> calibration (thresholds, level values) by rank.
Calibration calibrate_assignment(const std::vector<double>& scaled, int n_levels) {
  const std::size_t n = scaled.size();
  const auto k = static_cast<std::size_t>(n_levels);
  if (n < k) {
    throw Error(ErrorKind::kDegenerateScores, "fewer rows than treatment levels");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scaled[a] < scaled[b]; });
  // A value repeated in more than one category's worth of rows makes the
  // quantiles ill-defined.
  std::size_t run = 1;
  for (std::size_t r = 1; r < n; ++r) {
    run = scaled[order[r]] == scaled[order[r - 1]] ? run + 1 : 1;
    if (run * k > n) {
      throw Error(ErrorKind::kDegenerateScores,
                  "more than 1/" + std::to_string(k) + " of latent scores are identical");
    }
  }
  Calibration cal;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t begin = c * n / k;
    const std::size_t end = (c + 1) * n / k;
    std::vector<double> vals;
    for (std::size_t r = begin; r < end; ++r) vals.push_back(scaled[order[r]]);
    cal.level_values.push_back(median_of(vals));
    if (c + 1 < k) {
      const double lo = scaled[order[end - 1]];
      const double hi = scaled[order[end]];
      if (!(lo < hi)) {
        throw Error(ErrorKind::kDegenerateScores, "tied latent scores straddle a quantile");
      }
      cal.thresholds.push_back(lo + 0.5 * (hi - lo));
    }
  }
  for (std::size_t c = 1; c < k; ++c) {
    if (!(cal.level_values[c] > cal.level_values[c - 1])) {
      throw Error(ErrorKind::kDegenerateScores, "level values are not increasing");
    }
  }
  return cal;
}

int category_of(double scaled, const std::vector<double>& thresholds) {
  // Category c holds values in (t_{c-1}, t_c].
  return static_cast<int>(std::lower_bound(thresholds.begin(), thresholds.end(), scaled) -
                          thresholds.begin());
}

double sample_sd(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = kernels::sum(v) / n;
  double ss = 0.0;
  for (double e : v) ss += (e - mean) * (e - mean);
  return v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

std::vector<double> draw_normals(std::size_t n, double sd, std::uint64_t seed,
                                 std::uint64_t stream) {
  std::vector<double> out(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::uint64_t base = derive_seed(seed, stream);
  for (std::size_t b = 0; b * kBlockRows < n; ++b) {
    Engine engine(derive_seed(base, b));
    for (std::size_t r = b * kBlockRows; r < std::min(n, (b + 1) * kBlockRows); ++r) {
      out[r] = sd * normal(engine);
    }
  }
  return out;
}

}  // namespace

Assignment assign_treatment(const Matrix& x, const Matrix& z, std::span<const double> nu,
                            const DgpConfig& config) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (static_cast<std::size_t>(z.rows()) != n || nu.size() != n) {
    throw Error(ErrorKind::kShapeMismatch, "x, z and nu lengths differ");
  }
  std::vector<double> raw(n);
  for (std::size_t r = 0; r < n; ++r) {
    raw[r] = latent_index(row_span(x, r), row_span(z, r), config) + nu[r];
  }
  Assignment out;
  const double sd = sample_sd(raw);
  out.latent_scale = config.standardize_latent && sd > 0.0 ? sd : 1.0;
  out.latent.resize(n);
  for (std::size_t r = 0; r < n; ++r) out.latent[r] = raw[r] / out.latent_scale;
  const Calibration cal = calibrate_assignment(out.latent, config.n_levels);
  out.thresholds = cal.thresholds;
  out.level_values = cal.level_values;
  out.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) out.labels[r] = category_of(out.latent[r], out.thresholds);
  return out;
}

// ---------------------------------------------------------------- Dgp

Dgp::Dgp(DgpConfig config) : config_(std::move(config)) {
  config_.validate();
  Engine engine = make_engine(config_.interaction_seed, streams::kInteraction);
  k_z_ = KEvaluator(draw_coefficients(config_.c1z, config_.p_z, config_.k_mode, engine),
                    config_.k_mode);
  k_u_ = KEvaluator(draw_coefficients(config_.c1u, config_.p_u, config_.k_mode, engine),
                    config_.k_mode);
}

double Dgp::q(std::span<const double> u, std::span<const double> z) const {
  const double kz = k_z_(z);
  const double ku = k_u_(u);
  const double inner = std::max(config_.e2 + kz * kz + std::pow(std::fabs(ku), config_.tau),
                                kLogFloor);
  const double base = std::max(std::exp(std::fabs(dot(config_.a0, z))) +
                                   config_.e1 * std::log(inner),
                               kLogFloor);
  return std::pow(base, config_.r_exp);
}

Eigen::VectorXd Dgp::true_propensity(double index, const Calibration& cal,
                                     std::uint64_t row_seed) const {
  const auto k = static_cast<Eigen::Index>(config_.n_levels);
  Eigen::VectorXd p(k);
  if (config_.true_propensity == TruePropensity::kAnalytic) {
    // Level c <=> t_{c-1} < (index + nu) / scale <= t_c with nu ~ N(0, nu_sd).
    auto z_of = [&](double t) { return (t * cal.latent_scale - index) / cal.nu_sd; };
    for (Eigen::Index c = 0; c < k; ++c) {
      const double lo = c == 0 ? -HUGE_VAL : z_of(cal.thresholds[static_cast<std::size_t>(c - 1)]);
      const double hi = c == k - 1 ? HUGE_VAL : z_of(cal.thresholds[static_cast<std::size_t>(c)]);
      // Difference on the side of the tail where it does not cancel.
      p[c] = lo > 0.0 ? normal_sf(lo) - normal_sf(hi) : normal_cdf(hi) - normal_cdf(lo);
    }
  } else {
    Engine engine(row_seed);
    std::normal_distribution<double> normal(0.0, cal.nu_sd);
    p.setZero();
    for (int t = 0; t < config_.n_nu; ++t) {
      const double scaled = (index + normal(engine)) / cal.latent_scale;
      p[category_of(scaled, cal.thresholds)] += 1.0;
    }
    p /= static_cast<double>(config_.n_nu);
    p = p.cwiseMax(0.5 / static_cast<double>(config_.n_nu));
  }
  // Keep true propensities strictly inside (0, 1) so scores stay defined.
  constexpr double kTiny = 1e-300;
  constexpr double kBelowOne = 1.0 - 0x1p-53;
  p = p.cwiseMax(kTiny);
  p /= p.sum();
  return p.cwiseMin(kBelowOne);
}

SyntheticSample Dgp::synthesize(const Features& features, std::uint64_t seed,
                                const std::optional<Calibration>& calibration) const {
  const auto n = static_cast<std::size_t>(features.x.rows());
  if (features.u.rows() != features.x.rows() || features.z.rows() != features.x.rows()) {
    throw Error(ErrorKind::kShapeMismatch, "feature blocks differ in row count");
  }
  if (static_cast<std::size_t>(features.u.cols()) != config_.p_u ||
      static_cast<std::size_t>(features.x.cols()) != config_.p_x ||
      static_cast<std::size_t>(features.z.cols()) != config_.p_z) {
    throw Error(ErrorKind::kDimensionMismatch, "feature widths differ from the configuration");
  }
  SyntheticSample s;
  std::vector<double> index(n);
  for (std::size_t r = 0; r < n; ++r) {
    index[r] = latent_index(row_span(features.x, r), row_span(features.z, r), config_);
  }
  double nu_sd = config_.nu_sd;
  if (calibration) {
    nu_sd = calibration->nu_sd;
  } else if (config_.nu_relative) {
    const double sd = sample_sd(index);
    if (sd > 0.0) nu_sd *= sd;
  }
  const std::vector<double> nu = draw_normals(n, nu_sd, seed, streams::kTreatmentNoise);
  std::vector<int> labels(n);
  if (calibration) {
    s.calibration = *calibration;
    s.latent.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      s.latent[r] = (index[r] + nu[r]) / s.calibration.latent_scale;
      labels[r] = category_of(s.latent[r], s.calibration.thresholds);
    }
  } else {
    const Assignment a = assign_treatment(features.x, features.z, nu, config_);
    s.calibration.nu_sd = nu_sd;
    s.calibration.latent_scale = a.latent_scale;
    s.calibration.thresholds = a.thresholds;
    s.calibration.level_values = a.level_values;
    s.latent = a.latent;
    labels = a.labels;
  }
  s.level_values = s.calibration.level_values;
  const auto k = static_cast<std::size_t>(config_.n_levels);
  for (double d : s.level_values) s.f_levels.push_back(f_of_d(d, config_));

  s.q.resize(n);
  for (std::size_t r = 0; r < n; ++r) s.q[r] = q(row_span(features.u, r), row_span(features.z, r));

  if (!calibration) {
    if (config_.xi_sd_override) {
      s.calibration.xi_sd = *config_.xi_sd_override;
    } else {
      std::vector<double> signal(n);
      for (std::size_t r = 0; r < n; ++r) {
        signal[r] = s.f_levels[static_cast<std::size_t>(labels[r])] * s.q[r];
      }
      s.calibration.xi_sd = config_.xi_relative * sample_sd(signal);
    }
  }
  s.xi = draw_normals(n, s.calibration.xi_sd, seed, streams::kOutcomeNoise);

  const auto rows = static_cast<Eigen::Index>(n);
  s.g.resize(rows, static_cast<Eigen::Index>(k));
  s.propensity.resize(rows, static_cast<Eigen::Index>(k));
  const std::uint64_t p_base = derive_seed(seed, streams::kPropensityResample);
  s.table.y.resize(n);
  s.table.d = labels;
  for (std::size_t r = 0; r < n; ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    for (std::size_t i = 0; i < k; ++i) {
      s.g(ri, static_cast<Eigen::Index>(i)) = s.f_levels[i] * s.q[r];
    }
    s.table.y[r] = s.g(ri, labels[r]) + s.xi[r];
    s.propensity.row(ri) =
        true_propensity(index[r], s.calibration, derive_seed(p_base, r)).transpose();
  }
  s.table.u = features.u;
  s.table.x = features.x;
  s.table.z = features.z;
  return s;
}

SyntheticSample Dgp::generate(std::size_t n, std::uint64_t seed,
                              const std::optional<Calibration>& calibration) const {
  return synthesize(sample_features(config_, n, seed), seed, calibration);
}

SyntheticSample gen_dataset(const DgpConfig& config, std::size_t n, std::uint64_t seed) {
  return Dgp(config).generate(n, seed);
}

SyntheticSample gen_semi_synthetic(const Features& features, const DgpConfig& config,
                                   std::uint64_t seed) {
  return Dgp(config).synthesize(features, seed);
}

EffectEstimates ground_truth(const SyntheticSample& sample, std::span<const std::size_t> rows) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(rows.size()), sample.g.cols());
  std::vector<int> d;
  d.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    g.row(static_cast<Eigen::Index>(k)) = sample.g.row(static_cast<Eigen::Index>(rows[k]));
    d.push_back(sample.table.d[rows[k]]);
  }
  return counterfactual_truth(g, d);
}

void write_hidden_csv(const std::filesystem::path& path, const SyntheticSample& sample) {
  CsvFrame frame;
  frame.header = {"q", "latent", "xi"};
  const auto k = sample.g.cols();
  for (Eigen::Index i = 1; i <= k; ++i) frame.header.push_back("g_" + std::to_string(i));
  for (Eigen::Index i = 1; i <= k; ++i) frame.header.push_back("p_" + std::to_string(i));
  for (std::size_t r = 0; r < sample.q.size(); ++r) {
    std::vector<double> row{sample.q[r], sample.latent[r], sample.xi[r]};
    const auto ri = static_cast<Eigen::Index>(r);
    for (Eigen::Index i = 0; i < k; ++i) row.push_back(sample.g(ri, i));
    for (Eigen::Index i = 0; i < k; ++i) row.push_back(sample.propensity(ri, i));
    frame.rows.push_back(std::move(row));
  }
  write_csv(path, frame);
}

// ---------------------------------------------------------------- sampler

DgpSampler::DgpSampler(DgpConfig config, std::uint64_t seed, std::size_t calibration_rows,
                       std::size_t truth_rows)
    : dgp_(std::move(config)) {
  calibration_ = dgp_.generate(calibration_rows, derive_seed(seed, 1)).calibration;
  const SyntheticSample truth = dgp_.generate(truth_rows, derive_seed(seed, 2), calibration_);
  const auto k = truth.g.cols();
  const auto n = static_cast<double>(truth_rows);
  auto mean_sd = [&](const Eigen::VectorXd& v) {
    const double mean = v.mean();
    const double sd = std::sqrt((v.array() - mean).square().sum() / (n - 1.0));
    return std::pair{mean, sd};
  };
  theta_.resize(k);
  theta_se_.resize(k);
  theta_given_.resize(k, k);
  theta_given_se_.resize(k, k);
  Eigen::VectorXd m_se(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto [m, sd] = mean_sd(truth.propensity.col(j));
    marginals_.push_back(m);
    m_se[j] = sd / std::sqrt(n);
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto [mean, sd] = mean_sd(truth.g.col(i));
    theta_[i] = mean;
    theta_se_[i] = sd / std::sqrt(n);
    for (Eigen::Index j = 0; j < k; ++j) {
      // theta^{i|j} = E[g_i P_j] / E[P_j]
      const Eigen::VectorXd num = truth.g.col(i).cwiseProduct(truth.propensity.col(j));
      const auto [nm, nsd] = mean_sd(num);
      const double m = marginals_[static_cast<std::size_t>(j)];
      theta_given_(i, j) = nm / m;
      theta_given_se_(i, j) = std::hypot(nsd / std::sqrt(n), theta_given_(i, j) * m_se[j]) / m;
    }
  }
}

std::size_t DgpSampler::n_levels() const {
  return static_cast<std::size_t>(dgp_.config().n_levels);
}

TruthSample DgpSampler::draw(std::size_t n, std::uint64_t seed) const {
  SyntheticSample s = dgp_.generate(n, seed, calibration_);
  TruthSample t;
  t.table = std::move(s.table);
  t.g = std::move(s.g);
  t.p = std::move(s.propensity);
  t.m = marginals_;
  return t;
}

TrueValue DgpSampler::true_theta(int i, int j) const {
  if (j < 0) return {theta_[i], theta_se_[i]};
  return {theta_given_(i, j), theta_given_se_(i, j)};
}

}  // namespace iwc
