#pragma once

#include <Eigen/Dense>
#include <iosfwd>

#include "lrlgf/errors.hpp"

namespace lrlgf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Largest dimension for which dense realizations are allowed. to_dense on
// anything bigger throws, which keeps accidental O(D^2) blowups out of the
// production path.
inline constexpr Eigen::Index kDenseBound = 256;

// Diagonal transition-noise covariance Q; all entries >= 0.
class ProcessNoise {
 public:
  ProcessNoise() = default;
  explicit ProcessNoise(VectorXd q);

  static ProcessNoise zero(Eigen::Index dim);
  static ProcessNoise isotropic(Eigen::Index dim, double value);

  const VectorXd& q() const { return q_; }
  Eigen::Index dim() const { return q_.size(); }
  bool is_zero() const { return is_zero_; }

 private:
  VectorXd q_;
  bool is_zero_ = true;
};

// Symmetric diagonal plus low-rank matrix
//
//     A = diag(d) + U S U^T,     U: D x k,   S: k x k symmetric.
//
// S may be indefinite: Woodbury inversion of a positive definite input
// produces a negative definite core, so definiteness is a property of the
// whole matrix, never of the core. k = 0 (pure diagonal) is legal everywhere.
struct DplrSym {
  VectorXd diag;
  MatrixXd factor;
  MatrixXd core;

  Eigen::Index dim() const { return diag.size(); }
  Eigen::Index rank() const { return factor.cols(); }

  static DplrSym diagonal(VectorXd d);
  static DplrSym scaled_identity(Eigen::Index dim, double scale);
};

// Nonsymmetric diagonal plus low-rank matrix diag(d) + L C R^T; the shape of
// the smoother gain. A default-constructed rank-0 instance with unit diagonal
// is the identity.
struct DplrGain {
  VectorXd diag;
  MatrixXd left;
  MatrixXd core;
  MatrixXd right;

  Eigen::Index dim() const { return diag.size(); }
  Eigen::Index rank() const { return left.cols(); }

  static DplrGain identity(Eigen::Index dim);
};

// y = A x in O(Dk).
VectorXd matvec(const DplrSym& a, const VectorXd& x);
VectorXd matvec(const DplrGain& a, const VectorXd& x);

// A + diag(l); the low-rank part is untouched.
DplrSym add_diag(const DplrSym& a, const VectorXd& l);

// A^-1 via the Woodbury identity:
//
//   (diag(d) + U S U^T)^-1 = diag(1/d) + (diag(1/d) U) S' (diag(1/d) U)^T,
//   S' = -(S^-1 + U^T diag(1/d) U)^-1.
//
// The result has the same rank; its core is indefinite in general.
DplrSym invert(const DplrSym& a);

// Exact sum: diagonals add, factors concatenate, cores stack block-diagonally.
// Result rank is rank(a) + rank(b).
DplrSym add_lowrank_exact(const DplrSym& a, const DplrSym& b);

// Square root R of a small symmetric PSD matrix with R R^T = S, computed by
// eigendecomposition. Eigenvalues in [-eps, 0) with eps = 1e-10 * ||S|| are
// clamped to zero; anything below -eps is a contract violation.
MatrixXd sqrt_core(const MatrixXd& s);

struct CompressResult {
  MatrixXd basis;            // D x k', orthonormal columns
  VectorXd singular_values;  // k', descending
};

// Truncated SVD of a tall matrix W (D x r, r << D) through the r x r Gram
// matrix W^T W; never touches a D x D object. Singular values below
// 1e-12 * s_max are dropped, so the result can have fewer than k columns.
// basis * diag(singular_values^2) * basis^T is the best rank-k PSD
// approximation of W W^T.
CompressResult compress(const MatrixXd& w, Eigen::Index k);

// Information-form Kalman predict: (P^-1 + Q)^-1, kept diagonal plus low-rank:
//
//   d^- = 1 / (q + 1/d),
//   U^- = diag(d^-) diag(1/d) U,
//   S^- = (S^-1 + U^T diag(1/d) U - U^T diag(1/d) diag(d^-) diag(1/d) U)^-1.
//
// Q = 0 returns the input unchanged. Rank is preserved.
DplrSym predict_precision(const DplrSym& p, const ProcessNoise& q);

// Dense realization, only legal for dim <= bound.
MatrixXd to_dense(const DplrSym& a, Eigen::Index bound = kDenseBound);
MatrixXd to_dense(const DplrGain& a, Eigen::Index bound = kDenseBound);

// Symmetric k x k inverse through an eigendecomposition, with a single jitter
// retry (add 1e-10 * trace / k to the diagonal) before giving up with a
// condition estimate. `what` names the call site in the error message.
MatrixXd invert_small_sym(const MatrixXd& m, const char* what);

// (core^-1 + shift)^-1 for symmetric k x k inputs, computed in the
// push-through form core (I + shift core)^-1 so tiny or exactly-zero core
// eigenvalues pass through instead of being inverted. Every core update in
// this module (inversion, predict, smoother gain) goes through here. One
// jitter retry before a numerical_error.
MatrixXd core_shift_inverse(const MatrixXd& core, const MatrixXd& shift, const char* what);

// Binary container: magic "DPLR", version u32, D u64, k u64, then diag,
// factor (column-major) and core (row-major) as little-endian f64.
void save_dplr(std::ostream& out, const DplrSym& a);
DplrSym load_dplr(std::istream& in);

}  // namespace lrlgf
