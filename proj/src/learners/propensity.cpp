// Penalized multinomial logit fitted by full-batch gradient ascent.
//
// The optimizer works on standardized features so step sizes are comparable
// across columns, but the L2 penalty is applied to the raw-scale weights via
// the chain rule; the maximizer is therefore the raw-scale penalized MLE and
// does not depend on the standardization. Step sizes follow Barzilai-Borwein
// with Armijo backtracking.

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "iwc/learners.hpp"

namespace iwc {
namespace {

// Softmax over [0, eta_1, ..., eta_{n-1}], row by row.
void softmax_rows(const Eigen::MatrixXd& eta, Eigen::MatrixXd& probs,
                  Eigen::VectorXd& log_norm) {
  const Eigen::Index n = eta.rows();
  const Eigen::Index k = eta.cols() + 1;
  probs.resize(n, k);
  log_norm.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mx = std::max(0.0, eta.row(r).maxCoeff());
    double s = std::exp(-mx);
    probs(r, 0) = s;
    for (Eigen::Index c = 1; c < k; ++c) {
      const double e = std::exp(eta(r, c - 1) - mx);
      probs(r, c) = e;
      s += e;
    }
    probs.row(r) /= s;
    log_norm[r] = mx + std::log(s);
  }
}

struct Problem {
  Eigen::MatrixXd xs;  // N x (p + 1), standardized, trailing column of ones
  std::vector<int> labels;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  double lambda;
  bool penalize_intercept;
  Eigen::Index p;

  // Raw intercepts for the non-baseline classes.
  Eigen::VectorXd raw_intercept(const Eigen::MatrixXd& phi) const {
    Eigen::VectorXd b = phi.col(p);
    for (Eigen::Index k = 0; k < p; ++k) b -= phi.col(k) * (mean[k] / scale[k]);
    return b;
  }

  // Per-row penalized log-likelihood and its gradient in phi.
  double value(const Eigen::MatrixXd& phi, Eigen::MatrixXd* grad) const {
    const auto n = static_cast<double>(xs.rows());
    const Eigen::MatrixXd eta = xs * phi.transpose();
    Eigen::MatrixXd probs;
    Eigen::VectorXd log_norm;
    softmax_rows(eta, probs, log_norm);
    double loglik = 0.0;
    for (Eigen::Index r = 0; r < xs.rows(); ++r) {
      const int d = labels[static_cast<std::size_t>(r)];
      loglik += (d > 0 ? eta(r, d - 1) : 0.0) - log_norm[r];
    }
    const Eigen::VectorXd b = raw_intercept(phi);
    double penalty = 0.0;
    for (Eigen::Index c = 0; c < phi.rows(); ++c) {
      for (Eigen::Index k = 0; k < p; ++k) {
        const double w = phi(c, k) / scale[k];
        penalty += w * w;
      }
      if (penalize_intercept) penalty += b[c] * b[c];
    }
    if (grad) {
      Eigen::MatrixXd resid = -probs.rightCols(phi.rows());
      for (Eigen::Index r = 0; r < xs.rows(); ++r) {
        const int d = labels[static_cast<std::size_t>(r)];
        if (d > 0) resid(r, d - 1) += 1.0;
      }
      *grad = resid.transpose() * xs;
      for (Eigen::Index c = 0; c < phi.rows(); ++c) {
        for (Eigen::Index k = 0; k < p; ++k) {
          double g = lambda * phi(c, k) / (scale[k] * scale[k]);
          if (penalize_intercept) g -= lambda * b[c] * mean[k] / scale[k];
          (*grad)(c, k) -= g;
        }
        if (penalize_intercept) (*grad)(c, p) -= lambda * b[c];
      }
      *grad /= n;
    }
    return (loglik - 0.5 * lambda * penalty) / n;
  }
};

}  // namespace

Eigen::VectorXd clip_simplex(const Eigen::VectorXd& p, double eps) {
  const Eigen::Index n = p.size();
  if (!(eps >= 0.0) || eps * static_cast<double>(n) > 1.0) {
    throw Error(ErrorKind::kConfigError, "clip bound must satisfy 0 <= eps <= 1/n");
  }
  std::vector<bool> fixed(static_cast<std::size_t>(n), false);
  Eigen::VectorXd q(n);
  while (true) {
    double free_mass = 0.0;
    Eigen::Index n_fixed = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (fixed[static_cast<std::size_t>(i)]) {
        ++n_fixed;
      } else {
        free_mass += p[i];
      }
    }
    const double budget = 1.0 - static_cast<double>(n_fixed) * eps;
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (fixed[static_cast<std::size_t>(i)]) {
        q[i] = eps;
        continue;
      }
      q[i] = free_mass > 0.0 ? p[i] * budget / free_mass
                             : budget / static_cast<double>(n - n_fixed);
      if (q[i] < eps) {
        fixed[static_cast<std::size_t>(i)] = true;
        changed = true;
      }
    }
    if (!changed) return q;
  }
}

Eigen::VectorXd FittedPropensityModel::predict_raw(std::span<const double> x,
                                                   std::span<const double> z) const {
  if (x.size() != p_x || z.size() != p_z) {
    throw Error(ErrorKind::kDimensionMismatch, "feature widths differ from training");
  }
  const Eigen::Index k = weights.rows();
  Eigen::VectorXd eta(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    double s = weights(c, weights.cols() - 1);
    for (std::size_t i = 0; i < p_x; ++i) s += weights(c, static_cast<Eigen::Index>(i)) * x[i];
    for (std::size_t i = 0; i < p_z; ++i) {
      s += weights(c, static_cast<Eigen::Index>(p_x + i)) * z[i];
    }
    eta[c] = s;
  }
  const double mx = eta.maxCoeff();
  Eigen::VectorXd p = (eta.array() - mx).exp();
  return p / p.sum();
}

Eigen::VectorXd FittedPropensityModel::predict(std::span<const double> x,
                                               std::span<const double> z) const {
  return clip_simplex(predict_raw(x, z), clip);
}

Eigen::MatrixXd FittedPropensityModel::predict_all(
    const ObservationTable& table, std::span<const std::size_t> rows) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), weights.rows());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) =
        predict(row_span(table.x, rows[k]), row_span(table.z, rows[k])).transpose();
  }
  return out;
}

FittedPropensityModel fit_propensity(const ObservationTable& table,
                                     std::span<const std::size_t> train_rows,
                                     std::size_t n_levels,
                                     const PropensitySettings& settings) {
  if (!(settings.l2_penalty >= 0.0) || settings.max_iter < 1 || !(settings.tol > 0.0)) {
    throw Error(ErrorKind::kConfigError, "invalid propensity settings");
  }
  if (n_levels < 2) throw Error(ErrorKind::kConfigError, "need at least two levels");
  {
    std::size_t distinct = 0;
    std::vector<bool> seen(n_levels, false);
    for (std::size_t r : train_rows) {
      const auto d = static_cast<std::size_t>(table.d[r]);
      if (!seen[d]) {
        seen[d] = true;
        ++distinct;
      }
    }
    if (distinct < 2) {
      throw Error(ErrorKind::kDegenerateSplit,
                  "propensity fit needs at least two distinct levels in training");
    }
  }
  const auto px = static_cast<Eigen::Index>(table.p_x());
  const auto pz = static_cast<Eigen::Index>(table.p_z());
  const Eigen::Index p = px + pz;
  const auto n = static_cast<Eigen::Index>(train_rows.size());

  Problem prob;
  prob.p = p;
  prob.lambda = settings.l2_penalty;
  prob.penalize_intercept = settings.penalize_intercept;
  prob.xs.resize(n, p + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(train_rows[static_cast<std::size_t>(i)]);
    prob.xs.row(i).head(px) = table.x.row(r);
    prob.xs.row(i).segment(px, pz) = table.z.row(r);
    prob.labels.push_back(table.d[static_cast<std::size_t>(r)]);
  }
  prob.mean = prob.xs.leftCols(p).colwise().mean().transpose();
  prob.scale.resize(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    const double sd =
        std::sqrt((prob.xs.col(k).array() - prob.mean[k]).square().mean());
    prob.scale[k] = sd > 0.0 ? sd : 1.0;
    prob.xs.col(k) = (prob.xs.col(k).array() - prob.mean[k]) / prob.scale[k];
  }
  prob.xs.col(p).setOnes();

  const auto k = static_cast<Eigen::Index>(n_levels) - 1;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(k, p + 1);
  Eigen::MatrixXd grad;
  double f = prob.value(phi, &grad);
  double step = 1.0;

  FittedPropensityModel model;
  model.clip = settings.clip;
  model.p_x = table.p_x();
  model.p_z = table.p_z();
  int iter = 0;
  for (; iter < settings.max_iter; ++iter) {
    if (grad.cwiseAbs().maxCoeff() < settings.tol) {
      model.converged = true;
      break;
    }
    const double g2 = grad.squaredNorm();
    Eigen::MatrixXd next;
    Eigen::MatrixXd next_grad;
    double f_next = 0.0;
    int halvings = 0;
    while (true) {
      next = phi + step * grad;
      f_next = prob.value(next, &next_grad);
      if (std::isfinite(f_next) && f_next >= f + 1e-4 * step * g2) break;
      step *= 0.5;
      if (++halvings > 60) break;
    }
    if (halvings > 60) break;  // no ascent possible at machine precision
    const Eigen::MatrixXd s = next - phi;
    const Eigen::MatrixXd y = next_grad - grad;
    const double sy = -(s.array() * y.array()).sum();
    step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-10, 1e10) : 1.0;
    phi = std::move(next);
    grad = std::move(next_grad);
    f = f_next;
  }
  model.iterations = iter;
  model.final_gradient = grad.cwiseAbs().maxCoeff();
  if (!model.converged && model.final_gradient < settings.tol) model.converged = true;

  model.weights = Eigen::MatrixXd::Zero(k + 1, p + 1);
  const Eigen::VectorXd b = prob.raw_intercept(phi);
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index j = 0; j < p; ++j) model.weights(c + 1, j) = phi(c, j) / prob.scale[j];
    model.weights(c + 1, p) = b[c];
  }
  model.separation_warning = model.weights.cwiseAbs().maxCoeff() > settings.separation_bound;
  return model;
}

}  // namespace iwc
