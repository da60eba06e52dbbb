#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "lrlgf/dplr.hpp"

namespace lrlgf::oracle {

// Dense-matrix reference implementations of the filter, smoother and
// curvature formulas. Test support only: everything here is O(D^2) or worse
// and capped at kDenseBound.

struct DenseGaussian {
  VectorXd mean;
  MatrixXd cov;

  Eigen::Index dim() const { return mean.size(); }
};

// Kalman predict in covariance form: mean unchanged, cov + diag(q).
DenseGaussian dense_predict(const DenseGaussian& g, const ProcessNoise& q);

// Laplace update: mean = mode, cov = (hessian + prior_cov^-1)^-1.
DenseGaussian dense_laplace_update(const DenseGaussian& prior, const MatrixXd& hessian,
                                   const VectorXd& mode);

// One backward Rauch-Tung-Striebel step:
//   G = C_f C_pred^-1,
//   m = m_f + G (m_s_next - m_pred),
//   C = C_f + G (C_s_next - C_pred) G^T.
DenseGaussian dense_smoother_step(const DenseGaussian& filt, const DenseGaussian& next_smoothed,
                                  const DenseGaussian& next_pred);

// Central-difference Hessian, symmetrized. h <= 0 selects the default step
// cbrt(machine epsilon) * (1 + ||theta||_inf).
MatrixXd dense_hessian_fd(const std::function<double(const VectorXd&)>& loss,
                          const VectorXd& theta, double h = 0.0);

// Central-difference gradient with the same default step rule.
VectorXd dense_gradient_fd(const std::function<double(const VectorXd&)>& loss,
                           const VectorXd& theta, double h = 0.0);

// sum_b J_b H_b J_b^T formed densely.
MatrixXd dense_ggn(const std::vector<MatrixXd>& jacobians,
                   const std::vector<MatrixXd>& out_hessians);

}  // namespace lrlgf::oracle
