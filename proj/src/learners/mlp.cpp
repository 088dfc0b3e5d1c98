// Fully connected tanh network with a linear output, trained on squared error
// by mini-batch Adam. Inputs and the outcome are standardized on the training
// rows; the stored model carries the scaling so predictions are on raw scale.

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "iwc/learners.hpp"
#include "iwc/rng.hpp"

namespace iwc {
namespace {

struct AdamState {
  Eigen::MatrixXd m_w, v_w;
  Eigen::VectorXd m_b, v_b;
};

Eigen::MatrixXd standardize(const MlpFit& fit, const Matrix& x) {
  Eigen::MatrixXd s = x;
  s.rowwise() -= fit.in_mean.transpose();
  s.array().rowwise() /= fit.in_scale.transpose().array();
  return s;
}

// Column-per-sample forward pass; returns the activations of every layer.
void forward(const MlpFit& fit, const Eigen::MatrixXd& input_cols,
             std::vector<Eigen::MatrixXd>& acts) {
  acts.resize(fit.layers.size() + 1);
  acts[0] = input_cols;
  for (std::size_t l = 0; l < fit.layers.size(); ++l) {
    const auto& layer = fit.layers[l];
    acts[l + 1].noalias() = layer.weight * acts[l];
    acts[l + 1].colwise() += layer.bias;
    if (l + 1 < fit.layers.size()) acts[l + 1] = acts[l + 1].array().tanh();
  }
}

}  // namespace

MlpFit fit_mlp(const Matrix& x, std::span<const double> y,
               const MlpSettings& settings, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (x.rows() != n || n == 0) {
    throw Error(ErrorKind::kShapeMismatch, "design and outcome lengths differ");
  }
  const Eigen::Index p = x.cols();
  MlpFit fit;
  fit.in_mean = x.colwise().mean().transpose();
  fit.in_scale.resize(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    const double sd = std::sqrt((x.col(k).array() - fit.in_mean[k]).square().mean());
    fit.in_scale[k] = sd > 0.0 ? sd : 1.0;
  }
  const Eigen::Map<const Eigen::VectorXd> y_raw(y.data(), n);
  fit.out_mean = y_raw.mean();
  const double y_sd = std::sqrt((y_raw.array() - fit.out_mean).square().mean());
  fit.out_scale = y_sd > 0.0 ? y_sd : 1.0;

  Engine engine = make_engine(seed, streams::kLearner);
  std::vector<Eigen::Index> widths{p};
  for (int w : settings.widths) widths.push_back(w);
  widths.push_back(1);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(widths[l] + widths[l + 1]));
    std::uniform_real_distribution<double> glorot(-limit, limit);
    MlpLayer layer;
    layer.weight.resize(widths[l + 1], widths[l]);
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = glorot(engine);
      }
    }
    layer.bias = Eigen::VectorXd::Zero(widths[l + 1]);
    fit.layers.push_back(std::move(layer));
  }

  const Eigen::MatrixXd xs = standardize(fit, x).transpose();  // p x n
  const Eigen::VectorXd ys = (y_raw.array() - fit.out_mean) / fit.out_scale;

  std::vector<AdamState> adam(fit.layers.size());
  for (std::size_t l = 0; l < fit.layers.size(); ++l) {
    adam[l].m_w = Eigen::MatrixXd::Zero(fit.layers[l].weight.rows(), fit.layers[l].weight.cols());
    adam[l].v_w = adam[l].m_w;
    adam[l].m_b = Eigen::VectorXd::Zero(fit.layers[l].bias.size());
    adam[l].v_b = adam[l].m_b;
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  double beta1_t = 1.0;
  double beta2_t = 1.0;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index batch = std::max(1, settings.batch_size);
  std::vector<Eigen::MatrixXd> acts;
  Eigen::MatrixXd input_cols;
  Eigen::RowVectorXd target;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), engine);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index b = std::min(batch, n - start);
      input_cols.resize(p, b);
      target.resize(b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const Eigen::Index r = order[static_cast<std::size_t>(start + k)];
        input_cols.col(k) = xs.col(r);
        target[k] = ys[r];
      }
      forward(fit, input_cols, acts);
      // d(mean squared error)/d(output), with the 1/2 folded in.
      Eigen::MatrixXd delta = (acts.back() - target) / static_cast<double>(b);
      beta1_t *= kBeta1;
      beta2_t *= kBeta2;
      for (std::size_t l = fit.layers.size(); l-- > 0;) {
        auto& layer = fit.layers[l];
        const Eigen::MatrixXd grad_w = delta * acts[l].transpose();
        const Eigen::VectorXd grad_b = delta.rowwise().sum();
        if (l > 0) {
          delta = (layer.weight.transpose() * delta).array() *
                  (1.0 - acts[l].array().square());
        }
        auto& s = adam[l];
        s.m_w = kBeta1 * s.m_w + (1.0 - kBeta1) * grad_w;
        s.v_w = kBeta2 * s.v_w + (1.0 - kBeta2) * grad_w.cwiseAbs2();
        s.m_b = kBeta1 * s.m_b + (1.0 - kBeta1) * grad_b;
        s.v_b = kBeta2 * s.v_b + (1.0 - kBeta2) * grad_b.cwiseAbs2();
        const double step = settings.learning_rate * std::sqrt(1.0 - beta2_t) / (1.0 - beta1_t);
        layer.weight.array() -= step * s.m_w.array() / (s.v_w.array().sqrt() + kEps);
        layer.bias.array() -= step * s.m_b.array() / (s.v_b.array().sqrt() + kEps);
      }
    }
  }
  for (const auto& layer : fit.layers) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw Error(ErrorKind::kNonFiniteValue, "MLP training diverged");
    }
  }
  return fit;
}

Eigen::VectorXd predict_mlp(const MlpFit& fit, const Matrix& x) {
  std::vector<Eigen::MatrixXd> acts;
  forward(fit, standardize(fit, x).transpose(), acts);
  return (acts.back().row(0).transpose().array() * fit.out_scale + fit.out_mean).matrix();
}

}  // namespace iwc
