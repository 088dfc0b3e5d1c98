#include "iwc/scores.hpp"

#include <cmath>

#include "iwc/kernels.hpp"
#include "iwc/rng.hpp"

namespace iwc {

std::string ScoreKind::name() const {
  std::string s = std::string(estimator_family_name(family)) + "(" + std::to_string(i);
  if (conditional()) s += "|" + std::to_string(j);
  return s + ")";
}

void ScoreKind::validate(std::size_t n_levels) const {
  const auto n = static_cast<int>(n_levels);
  if (i < 0 || i >= n || j >= n) {
    throw Error(ErrorKind::kConfigError, "score levels out of range: " + name());
  }
  if (conditional() && i == j) {
    throw Error(ErrorKind::kConfigError, "conditional score needs i != j: " + name());
  }
}

ScoreTerms score_terms(const ScoreKind& kind, double y, int d, const NuisanceValues& nv) {
  const double in_i = d == kind.i ? 1.0 : 0.0;
  const bool uses_a = kind.family != EstimatorFamily::kIoc;
  if (uses_a && !(nv.a_i > 0.0)) throw Error(ErrorKind::kDomainError, "a_i <= 0");
  if (!kind.conditional()) {
    if (kind.family == EstimatorFamily::kIoc) return {1.0, -nv.g_i};
    // The doubly-robust score for theta^i is the IwC score.
    return {1.0, -nv.g_i - in_i * (y - nv.g_i) / nv.a_i};
  }
  if (!(nv.m_j > 0.0)) throw Error(ErrorKind::kDomainError, "m_j <= 0");
  const double in_j = d == kind.j ? 1.0 : 0.0;
  switch (kind.family) {
    case EstimatorFamily::kIoc:
      return {in_j / nv.m_j, -in_j * nv.g_i / nv.m_j};
    case EstimatorFamily::kIwc:
      return {in_j / nv.m_j,
              -(in_j * nv.g_i + in_i * (nv.a_j / nv.a_i) * (y - nv.g_i)) / nv.m_j};
    case EstimatorFamily::kDre:
      return {1.0, -in_j * nv.g_i / nv.m_j -
                       in_i * nv.a_j / (nv.m_j * nv.a_i) * (y - nv.g_i)};
  }
  return {};
}

double eval_score(const ScoreKind& kind, double y, int d, double vartheta,
                  const NuisanceValues& nv) {
  const ScoreTerms t = score_terms(kind, y, d, nv);
  return t.slope * vartheta + t.offset;
}

namespace {

NuisanceValues values_at(const ScoreKind& kind, const ObservationTable& table,
                         std::size_t row, const NuisancePoint& point) {
  NuisanceValues nv;
  const auto u = row_span(table.u, row);
  const auto z = row_span(table.z, row);
  nv.g_i = point.g(kind.i, u, z);
  if (kind.family != EstimatorFamily::kIoc || kind.conditional()) {
    const Eigen::VectorXd a = point.a(row_span(table.x, row), z);
    nv.a_i = a[kind.i];
    if (kind.conditional()) nv.a_j = a[kind.j];
  }
  if (kind.conditional()) nv.m_j = point.m.at(static_cast<std::size_t>(kind.j));
  return nv;
}

double root(double slope_sum, double offset_sum, double n) {
  if (!(std::fabs(slope_sum) > 1e-300 * n)) {
    throw Error(ErrorKind::kDegenerateSlope, "empirical score does not depend on theta");
  }
  return -offset_sum / slope_sum;
}

}  // namespace

double eval_score(const ScoreKind& kind, const ObservationTable& table, std::size_t row,
                  double vartheta, const NuisancePoint& point) {
  return eval_score(kind, table.y[row], table.d[row], vartheta,
                    values_at(kind, table, row, point));
}

double solve_theta(const ScoreKind& kind, const EvaluationSet& es,
                   std::span<const double> m) {
  kind.validate(es.n_levels());
  std::vector<double> slopes(es.rows());
  std::vector<double> offsets(es.rows());
  for (std::size_t r = 0; r < es.rows(); ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    NuisanceValues nv;
    nv.g_i = es.g_hat(ri, kind.i);
    nv.a_i = es.p_hat(ri, kind.i);
    if (kind.conditional()) {
      nv.a_j = es.p_hat(ri, kind.j);
      nv.m_j = m[static_cast<std::size_t>(kind.j)];
    }
    const ScoreTerms t = score_terms(kind, es.y[r], es.d[r], nv);
    slopes[r] = t.slope;
    offsets[r] = t.offset;
  }
  return root(kernels::sum(slopes), kernels::sum(offsets), static_cast<double>(es.rows()));
}

double solve_theta(const ScoreKind& kind, const ObservationTable& table,
                   const NuisancePoint& point) {
  std::vector<double> slopes(table.rows());
  std::vector<double> offsets(table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const ScoreTerms t =
        score_terms(kind, table.y[r], table.d[r], values_at(kind, table, r, point));
    slopes[r] = t.slope;
    offsets[r] = t.offset;
  }
  return root(kernels::sum(slopes), kernels::sum(offsets), static_cast<double>(table.rows()));
}

// ---------------------------------------------------------------- checks

namespace {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  const auto n = static_cast<double>(v.size());
  const double mean = kernels::sum(v) / n;
  std::vector<double> sq(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) sq[k] = (v[k] - mean) * (v[k] - mean);
  const double var = v.size() > 1 ? kernels::sum(sq) / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

NuisanceValues truth_at(const ScoreKind& kind, const TruthSample& s, std::size_t row) {
  const auto r = static_cast<Eigen::Index>(row);
  NuisanceValues nv;
  nv.g_i = s.g(r, kind.i);
  nv.a_i = s.p(r, kind.i);
  if (kind.conditional()) {
    nv.a_j = s.p(r, kind.j);
    nv.m_j = s.m[static_cast<std::size_t>(kind.j)];
  }
  return nv;
}

bool is_probability(double v) { return v > 0.0 && v < 1.0; }

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }
double logit(double a) { return std::log(a / (1.0 - a)); }

}  // namespace

MomentResult moment_check(const ScoreKind& kind, const ScoreSampler& sampler,
                          std::size_t n_mc, std::uint64_t seed, double theta_offset) {
  kind.validate(sampler.n_levels());
  const TrueValue truth = sampler.true_theta(kind.i, kind.j);
  const double theta = truth.value + theta_offset;
  const TruthSample s = sampler.draw(n_mc, seed);
  std::vector<double> psi(s.table.rows());
  std::vector<double> slope(s.table.rows());
  for (std::size_t r = 0; r < s.table.rows(); ++r) {
    const ScoreTerms t = score_terms(kind, s.table.y[r], s.table.d[r], truth_at(kind, s, r));
    psi[r] = t.slope * theta + t.offset;
    slope[r] = t.slope;
  }
  const MeanSe ms = mean_se(psi);
  const double mean_slope = kernels::sum(slope) / static_cast<double>(slope.size());
  MomentResult out;
  out.mean = ms.mean;
  out.stderr_ = std::hypot(ms.se, mean_slope * truth.stderr_);
  out.pass = std::fabs(out.mean) < 3.0 * out.stderr_;
  return out;
}

const char* slot_name(Slot slot) {
  switch (slot) {
    case Slot::kG: return "g";
    case Slot::kAi: return "a_i";
    case Slot::kAj: return "a_j";
    case Slot::kMj: return "m_j";
  }
  return "?";
}

std::vector<Slot> slots_for(const ScoreKind& kind) {
  if (!kind.conditional()) {
    if (kind.family == EstimatorFamily::kIoc) return {Slot::kG};
    return {Slot::kG, Slot::kAi};
  }
  if (kind.family == EstimatorFamily::kIoc) return {Slot::kG, Slot::kMj};
  return {Slot::kG, Slot::kAi, Slot::kAj, Slot::kMj};
}

PerturbationDirection default_direction(std::size_t n_levels, const std::vector<double>& m) {
  PerturbationDirection dir;
  dir.delta_g = [](int, std::span<const double>, std::span<const double>) { return 1.0; };
  dir.delta_a = [](int, double a, std::span<const double>, std::span<const double>) {
    return sigmoid(logit(a) + 0.5) - a;
  };
  dir.delta_m.resize(n_levels);
  for (std::size_t k = 0; k < n_levels; ++k) dir.delta_m[k] = 0.1 * m.at(k);
  return dir;
}

PerturbationDirection random_direction(std::size_t n_levels, std::size_t p_u,
                                       std::size_t p_x, std::size_t p_z,
                                       const std::vector<double>& m, std::uint64_t seed) {
  Engine engine = make_engine(seed, streams::kDirections);
  std::normal_distribution<double> normal;
  auto draw_vec = [&](std::size_t len) {
    std::vector<double> v(len);
    for (double& e : v) e = normal(engine);
    return v;
  };
  struct Linear {
    std::vector<double> w1, w2;
    double c;
  };
  std::vector<Linear> g_dirs;
  std::vector<Linear> a_dirs;
  for (std::size_t k = 0; k < n_levels; ++k) {
    g_dirs.push_back({draw_vec(p_u), draw_vec(p_z), normal(engine)});
    a_dirs.push_back({draw_vec(p_x), draw_vec(p_z), normal(engine)});
  }
  auto eval = [](const Linear& l, std::span<const double> v1, std::span<const double> v2) {
    double s = l.c;
    for (std::size_t k = 0; k < v1.size(); ++k) s += l.w1[k] * v1[k];
    for (std::size_t k = 0; k < v2.size(); ++k) s += l.w2[k] * v2[k];
    const double width = std::sqrt(static_cast<double>(v1.size() + v2.size() + 1));
    return std::tanh(s / width);
  };
  PerturbationDirection dir;
  dir.delta_g = [g_dirs, eval](int level, std::span<const double> u, std::span<const double> z) {
    return eval(g_dirs[static_cast<std::size_t>(level)], u, z);
  };
  dir.delta_a = [a_dirs, eval](int level, double a, std::span<const double> x,
                               std::span<const double> z) {
    const double shift = 0.5 * eval(a_dirs[static_cast<std::size_t>(level)], x, z);
    return sigmoid(logit(a) + shift) - a;
  };
  std::bernoulli_distribution sign;
  dir.delta_m.resize(n_levels);
  for (std::size_t k = 0; k < n_levels; ++k) {
    dir.delta_m[k] = (sign(engine) ? 0.1 : -0.1) * m.at(k);
  }
  return dir;
}

std::vector<GateauxResult> gateaux_check(const ScoreKind& kind,
                                         const ScoreSampler& sampler,
                                         const PerturbationDirection& direction,
                                         std::span<const double> r_grid,
                                         std::size_t n_mc, std::uint64_t seed) {
  kind.validate(sampler.n_levels());
  if (r_grid.size() < 2) throw Error(ErrorKind::kConfigError, "r grid needs two points");
  double r_mean = 0.0;
  for (double r : r_grid) r_mean += r;
  r_mean /= static_cast<double>(r_grid.size());
  double r_ss = 0.0;
  for (double r : r_grid) r_ss += (r - r_mean) * (r - r_mean);

  const double theta = sampler.true_theta(kind.i, kind.j).value;
  const TruthSample s = sampler.draw(n_mc, seed);
  std::vector<GateauxResult> results;
  std::vector<double> per_row(s.table.rows());
  for (Slot slot : slots_for(kind)) {
    for (std::size_t row = 0; row < s.table.rows(); ++row) {
      const NuisanceValues base = truth_at(kind, s, row);
      const auto u = row_span(s.table.u, row);
      const auto x = row_span(s.table.x, row);
      const auto z = row_span(s.table.z, row);
      double delta = 0.0;
      switch (slot) {
        case Slot::kG: delta = direction.delta_g(kind.i, u, z); break;
        case Slot::kAi: delta = direction.delta_a(kind.i, base.a_i, x, z); break;
        case Slot::kAj: delta = direction.delta_a(kind.j, base.a_j, x, z); break;
        case Slot::kMj: delta = direction.delta_m.at(static_cast<std::size_t>(kind.j)); break;
      }
      double acc = 0.0;
      for (double r : r_grid) {
        NuisanceValues nv = base;
        switch (slot) {
          case Slot::kG: nv.g_i += r * delta; break;
          case Slot::kAi: nv.a_i += r * delta; break;
          case Slot::kAj: nv.a_j += r * delta; break;
          case Slot::kMj: nv.m_j += r * delta; break;
        }
        if (!is_probability(nv.a_i) || (kind.conditional() && (!is_probability(nv.a_j) ||
                                                               !is_probability(nv.m_j)))) {
          throw Error(ErrorKind::kInvalidPath,
                      std::string("slot ") + slot_name(slot) + " leaves (0, 1) at r = " +
                          format_double(r));
        }
        acc += (r - r_mean) *
               eval_score(kind, s.table.y[row], s.table.d[row], theta, nv);
      }
      per_row[row] = acc / r_ss;
    }
    const MeanSe ms = mean_se(per_row);
    GateauxResult res;
    res.slot = slot;
    res.slope = ms.mean;
    res.stderr_ = ms.se;
    res.orthogonal = std::fabs(res.slope) < 3.0 * res.stderr_ || res.slope == 0.0;
    results.push_back(res);
  }
  return results;
}

nlohmann::json to_json(const MomentResult& r) {
  return {{"mean", r.mean}, {"stderr", r.stderr_}, {"pass", r.pass}};
}

nlohmann::json to_json(const GateauxResult& r) {
  return {{"slot", slot_name(r.slot)},
          {"slope", r.slope},
          {"stderr", r.stderr_},
          {"verdict", r.orthogonal ? "orthogonal" : "not_orthogonal"}};
}

}  // namespace iwc
