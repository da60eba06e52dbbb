#include "lrlgf/dense_oracle.hpp"

#include <cmath>
#include <limits>

namespace lrlgf::oracle {

namespace {

void check_dense_dim(Eigen::Index d, const char* what) {
  if (d > kDenseBound) throw contract_violation(std::string(what) + ": beyond dense bound");
}

MatrixXd invert_dense_spd(const MatrixXd& m, const char* what) {
  Eigen::LDLT<MatrixXd> ldlt(0.5 * (m + m.transpose().eval()));
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw numerical_error(std::string(what) + ": matrix not positive definite");
  }
  return ldlt.solve(MatrixXd::Identity(m.rows(), m.cols()));
}

}  // namespace

DenseGaussian dense_predict(const DenseGaussian& g, const ProcessNoise& q) {
  if (q.dim() != g.dim()) throw contract_violation("dense_predict: dimension mismatch");
  check_dense_dim(g.dim(), "dense_predict");
  DenseGaussian out;
  out.mean = g.mean;
  out.cov = g.cov + MatrixXd(q.q().asDiagonal());
  return out;
}

DenseGaussian dense_laplace_update(const DenseGaussian& prior, const MatrixXd& hessian,
                                   const VectorXd& mode) {
  check_dense_dim(prior.dim(), "dense_laplace_update");
  if (hessian.rows() != prior.dim() || mode.size() != prior.dim()) {
    throw contract_violation("dense_laplace_update: dimension mismatch");
  }
  DenseGaussian out;
  out.mean = mode;
  MatrixXd prior_precision = invert_dense_spd(prior.cov, "dense_laplace_update(prior)");
  out.cov = invert_dense_spd(hessian + prior_precision, "dense_laplace_update(sum)");
  return out;
}

DenseGaussian dense_smoother_step(const DenseGaussian& filt, const DenseGaussian& next_smoothed,
                                  const DenseGaussian& next_pred) {
  check_dense_dim(filt.dim(), "dense_smoother_step");
  if (next_smoothed.dim() != filt.dim() || next_pred.dim() != filt.dim()) {
    throw contract_violation("dense_smoother_step: dimension mismatch");
  }
  MatrixXd pred_inv = invert_dense_spd(next_pred.cov, "dense_smoother_step(pred)");
  MatrixXd gain = filt.cov * pred_inv;
  DenseGaussian out;
  out.mean = filt.mean + gain * (next_smoothed.mean - next_pred.mean);
  out.cov = filt.cov + gain * (next_smoothed.cov - next_pred.cov) * gain.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose().eval());
  return out;
}

namespace {

double default_step(const VectorXd& theta) {
  double eps = std::numeric_limits<double>::epsilon();
  double scale = theta.size() > 0 ? theta.cwiseAbs().maxCoeff() : 0.0;
  return std::cbrt(eps) * (1.0 + scale);
}

}  // namespace

MatrixXd dense_hessian_fd(const std::function<double(const VectorXd&)>& loss,
                          const VectorXd& theta, double h) {
  check_dense_dim(theta.size(), "dense_hessian_fd");
  if (h <= 0.0) h = default_step(theta);
  const Eigen::Index d = theta.size();
  MatrixXd hess(d, d);
  VectorXd x = theta;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      x = theta;
      x[i] += h;
      x[j] += h;
      double fpp = loss(x);
      x = theta;
      x[i] += h;
      x[j] -= h;
      double fpm = loss(x);
      x = theta;
      x[i] -= h;
      x[j] += h;
      double fmp = loss(x);
      x = theta;
      x[i] -= h;
      x[j] -= h;
      double fmm = loss(x);
      double v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return 0.5 * (hess + hess.transpose().eval());
}

VectorXd dense_gradient_fd(const std::function<double(const VectorXd&)>& loss,
                           const VectorXd& theta, double h) {
  if (h <= 0.0) h = default_step(theta);
  VectorXd g(theta.size());
  VectorXd x = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    x = theta;
    x[i] += h;
    double fp = loss(x);
    x = theta;
    x[i] -= h;
    double fm = loss(x);
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

MatrixXd dense_ggn(const std::vector<MatrixXd>& jacobians,
                   const std::vector<MatrixXd>& out_hessians) {
  if (jacobians.size() != out_hessians.size()) {
    throw contract_violation("dense_ggn: list length mismatch");
  }
  if (jacobians.empty()) return MatrixXd::Zero(0, 0);
  const Eigen::Index d = jacobians.front().rows();
  check_dense_dim(d, "dense_ggn");
  MatrixXd ggn = MatrixXd::Zero(d, d);
  for (size_t b = 0; b < jacobians.size(); ++b) {
    const MatrixXd& j = jacobians[b];
    const MatrixXd& h = out_hessians[b];
    if (j.rows() != d || j.cols() != h.rows() || h.rows() != h.cols()) {
      throw contract_violation("dense_ggn: block dimension mismatch");
    }
    ggn.noalias() += j * h * j.transpose();
  }
  return ggn;
}

}  // namespace lrlgf::oracle
