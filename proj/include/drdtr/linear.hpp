#ifndef DRDTR_LINEAR_HPP_
#define DRDTR_LINEAR_HPP_

#include "drdtr/core.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace drdtr {

namespace linear_detail {

// [1, x] design.
inline Eigen::MatrixXd with_intercept(const Matrix& x) {
  Eigen::MatrixXd d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

}  // namespace linear_detail

/// Ordinary least squares with an intercept, solved through the normal
/// equations with a small ridge on the diagonal. A few rounds of iterative
/// refinement remove the ridge bias on well-conditioned designs while keeping
/// collinear ones solvable.
class LinearModel {
 public:
  static constexpr double kRidge = 1e-8;

  static LinearModel fit(const Matrix& x, std::span<const double> y) {
    if (static_cast<std::size_t>(x.rows()) != y.size()) throw Error("linear: row count mismatch");
    if (x.rows() < 1) throw Error("linear: no training rows");
    const Eigen::MatrixXd d = linear_detail::with_intercept(x);
    const Eigen::Map<const Vector> yv(y.data(), static_cast<Eigen::Index>(y.size()));
    const Eigen::MatrixXd gram = d.transpose() * d;
    const Vector rhs = d.transpose() * yv;
    Eigen::MatrixXd reg = gram;
    reg.diagonal().array() += kRidge;
    const Eigen::LDLT<Eigen::MatrixXd> solver(reg);
    Vector beta = solver.solve(rhs);
    for (int it = 0; it < 3; ++it) beta += solver.solve(rhs - gram * beta);
    LinearModel m;
    m.coef_ = beta;
    return m;
  }

  double predict(std::span<const double> x) const {
    double v = coef_(0);
    for (std::size_t j = 0; j < x.size(); ++j) v += coef_(static_cast<Eigen::Index>(j + 1)) * x[j];
    return v;
  }

  const Vector& coefficients() const { return coef_; }

 private:
  Vector coef_;
};

/// Multinomial logistic regression (softmax, first observed class as the
/// reference) fitted by damped Newton steps with a light ridge penalty.
/// Classes absent from the training labels get probability zero.
class LogisticModel {
 public:
  static constexpr double kRidge = 1e-6;

  static LogisticModel fit(const Matrix& x, std::span<const int> labels, int num_classes) {
    if (static_cast<std::size_t>(x.rows()) != labels.size()) throw Error("logistic: row count mismatch");
    LogisticModel m;
    m.num_classes_ = num_classes;
    std::vector<char> seen(static_cast<std::size_t>(num_classes), 0);
    for (int a : labels) seen[static_cast<std::size_t>(a)] = 1;
    for (int c = 0; c < num_classes; ++c)
      if (seen[static_cast<std::size_t>(c)]) m.present_.push_back(c);
    const auto k = static_cast<Eigen::Index>(m.present_.size());
    const Eigen::MatrixXd d = linear_detail::with_intercept(x);
    const Eigen::Index q = d.cols();
    m.coef_ = Eigen::MatrixXd::Zero(std::max<Eigen::Index>(k - 1, 0), q);
    if (k <= 1) return m;

    std::vector<Eigen::Index> slot(static_cast<std::size_t>(num_classes), -1);
    for (Eigen::Index c = 0; c < k; ++c) slot[static_cast<std::size_t>(m.present_[static_cast<std::size_t>(c)])] = c;
    const Eigen::Index dim = (k - 1) * q;
    const auto n = d.rows();

    auto objective = [&](const Eigen::MatrixXd& beta) {
      double ll = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vector eta = beta * d.row(i).transpose();
        const double mx = std::max(0.0, eta.size() ? eta.maxCoeff() : 0.0);
        double z = std::exp(-mx);
        for (Eigen::Index c = 0; c < eta.size(); ++c) z += std::exp(eta(c) - mx);
        const Eigen::Index s = slot[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        ll += (s == 0 ? 0.0 : eta(s - 1)) - mx - std::log(z);
      }
      return ll - 0.5 * kRidge * beta.squaredNorm();
    };

    double current = objective(m.coef_);
    for (int iter = 0; iter < 100; ++iter) {
      Vector grad = Vector::Zero(dim);
      Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vector xi = d.row(i).transpose();
        const Vector prob = m.probabilities_present(xi);
        const Eigen::Index s = slot[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        const Eigen::MatrixXd xx = xi * xi.transpose();
        for (Eigen::Index a = 1; a < k; ++a) {
          const double r = (s == a ? 1.0 : 0.0) - prob(a);
          grad.segment((a - 1) * q, q) += r * xi;
          for (Eigen::Index b = 1; b < k; ++b) {
            const double w = (a == b ? prob(a) : 0.0) - prob(a) * prob(b);
            hess.block((a - 1) * q, (b - 1) * q, q, q) += w * xx;
          }
        }
      }
      Vector beta_rows(dim);
      for (Eigen::Index a = 0; a < k - 1; ++a) beta_rows.segment(a * q, q) = m.coef_.row(a).transpose();
      grad -= kRidge * beta_rows;
      hess.diagonal().array() += kRidge;
      const Vector step = hess.ldlt().solve(grad);
      double scale = 1.0;
      Eigen::MatrixXd trial = m.coef_;
      double value = current;
      for (int half = 0; half < 30; ++half) {
        for (Eigen::Index a = 0; a < k - 1; ++a)
          trial.row(a) = m.coef_.row(a) + scale * step.segment(a * q, q).transpose();
        value = objective(trial);
        if (value >= current - 1e-12) break;
        scale *= 0.5;
      }
      const double moved = scale * step.cwiseAbs().maxCoeff();
      m.coef_ = trial;
      const double gain = value - current;
      current = value;
      if (moved < 1e-10 || std::abs(gain) < 1e-12 * (1.0 + std::abs(current))) break;
    }
    return m;
  }

  int num_classes() const { return num_classes_; }

  /// Probability of every class (absent classes get 0); writes num_classes values.
  void predict_proba(std::span<const double> x, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    if (present_.empty()) return;
    Vector xi(static_cast<Eigen::Index>(x.size() + 1));
    xi(0) = 1.0;
    for (std::size_t j = 0; j < x.size(); ++j) xi(static_cast<Eigen::Index>(j + 1)) = x[j];
    const Vector prob = probabilities_present(xi);
    for (std::size_t c = 0; c < present_.size(); ++c)
      out[static_cast<std::size_t>(present_[c])] = prob(static_cast<Eigen::Index>(c));
  }

 private:
  Vector probabilities_present(const Vector& xi) const {
    const auto k = static_cast<Eigen::Index>(present_.size());
    Vector eta(k);
    eta(0) = 0.0;
    for (Eigen::Index a = 1; a < k; ++a) eta(a) = coef_.row(a - 1).dot(xi);
    const double mx = eta.maxCoeff();
    Vector e = (eta.array() - mx).exp();
    return e / e.sum();
  }

  int num_classes_ = 0;
  std::vector<int> present_;
  Eigen::MatrixXd coef_;
};

}  // namespace drdtr

#endif  // DRDTR_LINEAR_HPP_
