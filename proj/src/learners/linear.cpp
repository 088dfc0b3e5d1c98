// OLS, ridge and lasso. All three fit on column-centred data and recover the
// intercept as mean(y) - beta . mean(x), so the intercept is never penalized.

#include <cmath>

#include <Eigen/Dense>

#include "iwc/kernels.hpp"
#include "iwc/learners.hpp"

namespace iwc {
namespace {

struct Centred {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd x_mean;
  double y_mean = 0.0;
};

Centred centre(const Matrix& x, std::span<const double> y) {
  if (static_cast<std::size_t>(x.rows()) != y.size() || y.empty()) {
    throw Error(ErrorKind::kShapeMismatch, "design and outcome lengths differ");
  }
  if (!x.allFinite()) {
    throw Error(ErrorKind::kSingularDesign, "design has non-finite entries");
  }
  Centred c;
  c.x = x;
  c.x_mean = c.x.colwise().mean().transpose();
  c.x.rowwise() -= c.x_mean.transpose();
  c.y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  c.y_mean = c.y.mean();
  c.y.array() -= c.y_mean;
  if (!std::isfinite(c.y_mean)) {
    throw Error(ErrorKind::kSingularDesign, "outcome has non-finite entries");
  }
  return c;
}

LinearFit finish(const Centred& c, const Eigen::VectorXd& beta) {
  LinearFit fit;
  fit.beta.assign(beta.data(), beta.data() + beta.size());
  fit.intercept = c.y_mean - beta.dot(c.x_mean);
  return fit;
}

double soft_threshold(double v, double lambda) {
  if (v > lambda) return v - lambda;
  if (v < -lambda) return v + lambda;
  return 0.0;
}

}  // namespace

LinearFit fit_ols(const Matrix& x, std::span<const double> y) {
  const Centred c = centre(x, y);
  if (c.x.cols() == 0) return finish(c, Eigen::VectorXd());
  // Minimum-norm least squares; equals the pseudo-inverse solution on
  // rank-deficient designs.
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(c.x);
  const Eigen::VectorXd beta = cod.solve(c.y);
  if (!beta.allFinite()) {
    throw Error(ErrorKind::kSingularDesign, "least-squares solve failed");
  }
  return finish(c, beta);
}

LinearFit fit_ridge(const Matrix& x, std::span<const double> y, double lambda) {
  if (lambda < 0.0) throw Error(ErrorKind::kConfigError, "ridge penalty < 0");
  if (lambda == 0.0) return fit_ols(x, y);
  const Centred c = centre(x, y);
  Eigen::MatrixXd gram = c.x.transpose() * c.x;
  gram.diagonal().array() += lambda;
  const Eigen::VectorXd beta = gram.ldlt().solve(c.x.transpose() * c.y);
  if (!beta.allFinite()) {
    throw Error(ErrorKind::kSingularDesign, "ridge normal equations failed");
  }
  return finish(c, beta);
}

LinearFit fit_lasso(const Matrix& x, std::span<const double> y, double lambda,
                    double tol, int max_iter) {
  if (lambda < 0.0) throw Error(ErrorKind::kConfigError, "lasso penalty < 0");
  const Centred c = centre(x, y);
  const Eigen::Index p = c.x.cols();
  const Eigen::Index n = c.x.rows();
  // Eigen's default column-major layout keeps each coordinate contiguous.
  const Eigen::MatrixXd& xc = c.x;
  Eigen::VectorXd col_sq(p);
  for (Eigen::Index k = 0; k < p; ++k) col_sq[k] = xc.col(k).squaredNorm();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd resid = c.y;
  const double scale = std::max(1.0, c.y.cwiseAbs().maxCoeff());
  std::span<double> resid_span(resid.data(), static_cast<std::size_t>(n));
  for (int sweep = 0; sweep < max_iter; ++sweep) {
    double max_step = 0.0;
    for (Eigen::Index k = 0; k < p; ++k) {
      if (col_sq[k] == 0.0) continue;
      std::span<const double> col(xc.col(k).data(), static_cast<std::size_t>(n));
      const double rho = kernels::dot(col, resid_span) +
                         col_sq[k] * beta[k];
      const double next = soft_threshold(rho, lambda) / col_sq[k];
      const double delta = next - beta[k];
      if (delta != 0.0) {
        kernels::axpy(-delta, col, resid_span);
        beta[k] = next;
        max_step = std::max(max_step, std::fabs(delta) * std::sqrt(col_sq[k]));
      }
    }
    if (max_step <= tol * scale) break;
  }
  return finish(c, beta);
}

}  // namespace iwc
