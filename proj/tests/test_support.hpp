#pragma once

#include <Eigen/Dense>

#include "lrlgf/dplr.hpp"
#include "lrlgf/rng.hpp"

namespace lrlgf::testing {

inline VectorXd random_vector(SplitMix64& g, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g.next_uniform(lo, hi);
  return v;
}

inline MatrixXd random_matrix(SplitMix64& g, Eigen::Index rows, Eigen::Index cols) {
  MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = g.next_normal();
  }
  return m;
}

// Positive definite DPLR matrix: positive diagonal plus a PSD low-rank term.
inline DplrSym random_pd_dplr(SplitMix64& g, Eigen::Index d, Eigen::Index k) {
  DplrSym a;
  a.diag = random_vector(g, d, 0.5, 2.0);
  a.factor = random_matrix(g, d, k) / std::sqrt(static_cast<double>(d));
  MatrixXd b = random_matrix(g, k, k);
  a.core = b * b.transpose() + 0.1 * MatrixXd::Identity(k, k);
  return a;
}

// Symmetric DPLR matrix with an indefinite core; not necessarily PD overall.
inline DplrSym random_sym_dplr(SplitMix64& g, Eigen::Index d, Eigen::Index k) {
  DplrSym a;
  a.diag = random_vector(g, d, 0.5, 2.0);
  a.factor = random_matrix(g, d, k) / std::sqrt(static_cast<double>(d));
  MatrixXd b = random_matrix(g, k, k);
  a.core = 0.5 * (b + b.transpose());
  return a;
}

inline double rel_err(const MatrixXd& got, const MatrixXd& want) {
  double scale = want.norm();
  if (scale == 0.0) return got.norm();
  return (got - want).norm() / scale;
}

inline double rel_err(const VectorXd& got, const VectorXd& want) {
  double scale = want.norm();
  if (scale == 0.0) return got.norm();
  return (got - want).norm() / scale;
}

}  // namespace lrlgf::testing
