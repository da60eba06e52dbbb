#include "lrlgf/dplr.hpp"

#include <algorithm>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <vector>

namespace lrlgf {

namespace {

void check_symmetric(const MatrixXd& s, const char* what) {
  if (s.rows() != s.cols()) throw contract_violation(std::string(what) + ": core not square");
  if (s.size() == 0) return;
  double scale = s.cwiseAbs().maxCoeff();
  double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(1.0, scale)) {
    throw contract_violation(std::string(what) + ": core not symmetric (asymmetry " +
                             std::to_string(asym) + ")");
  }
}

}  // namespace

ProcessNoise::ProcessNoise(VectorXd q) : q_(std::move(q)) {
  if ((q_.array() < 0.0).any()) throw contract_violation("ProcessNoise: negative entry");
  is_zero_ = (q_.array() == 0.0).all();
}

ProcessNoise ProcessNoise::zero(Eigen::Index dim) { return ProcessNoise(VectorXd::Zero(dim)); }

ProcessNoise ProcessNoise::isotropic(Eigen::Index dim, double value) {
  return ProcessNoise(VectorXd::Constant(dim, value));
}

DplrSym DplrSym::diagonal(VectorXd d) {
  DplrSym a;
  a.diag = std::move(d);
  a.factor = MatrixXd(a.diag.size(), 0);
  a.core = MatrixXd(0, 0);
  return a;
}

DplrSym DplrSym::scaled_identity(Eigen::Index dim, double scale) {
  return diagonal(VectorXd::Constant(dim, scale));
}

DplrGain DplrGain::identity(Eigen::Index dim) {
  DplrGain g;
  g.diag = VectorXd::Ones(dim);
  g.left = MatrixXd(dim, 0);
  g.core = MatrixXd(0, 0);
  g.right = MatrixXd(dim, 0);
  return g;
}

VectorXd matvec(const DplrSym& a, const VectorXd& x) {
  if (x.size() != a.dim()) throw contract_violation("matvec: dimension mismatch");
  VectorXd y = a.diag.cwiseProduct(x);
  if (a.rank() > 0) y.noalias() += a.factor * (a.core * (a.factor.transpose() * x));
  return y;
}

VectorXd matvec(const DplrGain& a, const VectorXd& x) {
  if (x.size() != a.dim()) throw contract_violation("matvec: dimension mismatch");
  VectorXd y = a.diag.cwiseProduct(x);
  if (a.rank() > 0) y.noalias() += a.left * (a.core * (a.right.transpose() * x));
  return y;
}

DplrSym add_diag(const DplrSym& a, const VectorXd& l) {
  if (l.size() != a.dim()) throw contract_violation("add_diag: dimension mismatch");
  DplrSym out = a;
  out.diag += l;
  return out;
}

MatrixXd invert_small_sym(const MatrixXd& m, const char* what) {
  check_symmetric(m, what);
  const Eigen::Index k = m.rows();
  if (k == 0) return MatrixXd(0, 0);

  auto try_invert = [&](const MatrixXd& s) -> std::pair<bool, MatrixXd> {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(s);
    const VectorXd& lam = eig.eigenvalues();
    double lmax = lam.cwiseAbs().maxCoeff();
    double lmin = lam.cwiseAbs().minCoeff();
    if (lmax == 0.0 || lmin <= 1e-14 * lmax) return {false, MatrixXd()};
    MatrixXd inv = eig.eigenvectors() * lam.cwiseInverse().asDiagonal() *
                   eig.eigenvectors().transpose();
    return {true, std::move(inv)};
  };

  auto [ok, inv] = try_invert(m);
  if (ok) return inv;

  double jitter = 1e-10 * m.trace() / static_cast<double>(k);
  MatrixXd jittered = m + jitter * MatrixXd::Identity(k, k);
  auto [ok2, inv2] = try_invert(jittered);
  if (ok2) return inv2;

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(m);
  double lmax = eig.eigenvalues().cwiseAbs().maxCoeff();
  double lmin = eig.eigenvalues().cwiseAbs().minCoeff();
  std::ostringstream msg;
  msg << what << ": singular " << k << "x" << k << " matrix, condition estimate "
      << (lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity());
  throw numerical_error(msg.str());
}

MatrixXd core_shift_inverse(const MatrixXd& core, const MatrixXd& shift, const char* what) {
  const Eigen::Index k = core.rows();
  if (k == 0) return MatrixXd(0, 0);
  MatrixXd inner = MatrixXd::Identity(k, k) + shift * core;

  auto solve = [&](const MatrixXd& m) -> std::pair<bool, MatrixXd> {
    Eigen::PartialPivLU<MatrixXd> lu(m);
    double rcond = lu.rcond();
    if (!(rcond > 1e-14)) return {false, MatrixXd()};
    MatrixXd x = core * lu.inverse();
    return {true, 0.5 * (x + x.transpose().eval())};
  };

  auto [ok, result] = solve(inner);
  if (ok) return result;
  double jitter = 1e-10 * inner.trace() / static_cast<double>(k);
  auto [ok2, result2] = solve(inner + jitter * MatrixXd::Identity(k, k));
  if (ok2) return result2;
  Eigen::PartialPivLU<MatrixXd> lu(inner);
  std::ostringstream msg;
  msg << what << ": singular " << k << "x" << k << " system, rcond estimate " << lu.rcond();
  throw numerical_error(msg.str());
}

DplrSym invert(const DplrSym& a) {
  check_symmetric(a.core, "invert");
  if ((a.diag.array() == 0.0).any()) throw contract_violation("invert: zero diagonal entry");

  DplrSym out;
  out.diag = a.diag.cwiseInverse();
  if (a.rank() == 0) {
    out.factor = MatrixXd(a.dim(), 0);
    out.core = MatrixXd(0, 0);
    return out;
  }
  MatrixXd shift = a.factor.transpose() * out.diag.asDiagonal() * a.factor;
  out.core = -core_shift_inverse(a.core, shift, "invert");
  out.factor = out.diag.asDiagonal() * a.factor;
  return out;
}

DplrSym add_lowrank_exact(const DplrSym& a, const DplrSym& b) {
  if (a.dim() != b.dim()) throw contract_violation("add_lowrank_exact: dimension mismatch");
  DplrSym out;
  out.diag = a.diag + b.diag;
  const Eigen::Index ka = a.rank(), kb = b.rank();
  out.factor.resize(a.dim(), ka + kb);
  out.factor.leftCols(ka) = a.factor;
  out.factor.rightCols(kb) = b.factor;
  out.core = MatrixXd::Zero(ka + kb, ka + kb);
  out.core.topLeftCorner(ka, ka) = a.core;
  out.core.bottomRightCorner(kb, kb) = b.core;
  return out;
}

MatrixXd sqrt_core(const MatrixXd& s) {
  check_symmetric(s, "sqrt_core");
  if (s.size() == 0) return MatrixXd(0, 0);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (s + s.transpose().eval()));
  VectorXd lam = eig.eigenvalues();
  double eps = 1e-10 * lam.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < -eps) {
      throw contract_violation("sqrt_core: input not PSD (eigenvalue " + std::to_string(lam[i]) +
                               ")");
    }
    if (lam[i] < 0.0) lam[i] = 0.0;
  }
  return eig.eigenvectors() * lam.cwiseSqrt().asDiagonal();
}

CompressResult compress(const MatrixXd& w, Eigen::Index k) {
  const Eigen::Index d = w.rows(), r = w.cols();
  if (r < 1) throw contract_violation("compress: W must have at least one column");
  if (k > std::min(d, r)) throw contract_violation("compress: k > min(D, r)");

  // Eigendecomposition of the small Gram matrix; left singular vectors are
  // recovered as W v / s.
  MatrixXd gram = w.transpose() * w;
  gram = 0.5 * (gram + gram.transpose().eval());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
  const VectorXd& lam = eig.eigenvalues();  // ascending

  std::vector<Eigen::Index> order(r);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return lam[i] > lam[j]; });

  double smax = lam[order[0]] > 0.0 ? std::sqrt(lam[order[0]]) : 0.0;
  Eigen::Index kept = 0;
  while (kept < k && kept < r) {
    double l = lam[order[kept]];
    if (l <= 0.0 || std::sqrt(l) < 1e-12 * smax) break;
    ++kept;
  }

  CompressResult res;
  res.singular_values.resize(kept);
  MatrixXd v(r, kept);
  for (Eigen::Index i = 0; i < kept; ++i) {
    res.singular_values[i] = std::sqrt(lam[order[i]]);
    v.col(i) = eig.eigenvectors().col(order[i]) / res.singular_values[i];
  }
  res.basis.noalias() = w * v;
  return res;
}

DplrSym predict_precision(const DplrSym& p, const ProcessNoise& q) {
  if (q.dim() != p.dim()) throw contract_violation("predict_precision: dimension mismatch");
  check_symmetric(p.core, "predict_precision");
  if (q.is_zero()) return p;
  if ((p.diag.array() <= 0.0).any()) {
    throw contract_violation("predict_precision: precision diagonal must be positive");
  }

  const VectorXd dinv = p.diag.cwiseInverse();
  DplrSym out;
  out.diag = (q.q() + dinv).cwiseInverse();
  if (p.rank() == 0) {
    out.factor = MatrixXd(p.dim(), 0);
    out.core = MatrixXd(0, 0);
    return out;
  }
  out.factor = (out.diag.cwiseProduct(dinv)).asDiagonal() * p.factor;

  // The two correction terms of the core update combine elementwise into
  // diag(q/d (q + 1/d)^-1 / d), which avoids their cancellation when q is
  // small against 1/d.
  VectorXd weight = dinv.cwiseProduct(q.q()).cwiseProduct(out.diag);
  MatrixXd shift = p.factor.transpose() * weight.asDiagonal() * p.factor;
  out.core = core_shift_inverse(p.core, shift, "predict_precision");
  return out;
}

MatrixXd to_dense(const DplrSym& a, Eigen::Index bound) {
  if (a.dim() > bound) throw contract_violation("to_dense: dimension exceeds dense bound");
  MatrixXd m = MatrixXd(a.diag.asDiagonal());
  if (a.rank() > 0) m.noalias() += a.factor * a.core * a.factor.transpose();
  return m;
}

MatrixXd to_dense(const DplrGain& a, Eigen::Index bound) {
  if (a.dim() > bound) throw contract_violation("to_dense: dimension exceeds dense bound");
  MatrixXd m = MatrixXd(a.diag.asDiagonal());
  if (a.rank() > 0) m.noalias() += a.left * a.core * a.right.transpose();
  return m;
}

namespace {

void write_raw(std::ostream& out, const void* p, size_t n) {
  if (n == 0) return;
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_raw(std::istream& in, void* p, size_t n) {
  if (n == 0) return;
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw parse_error("dplr container: truncated payload");
}

}  // namespace

void save_dplr(std::ostream& out, const DplrSym& a) {
  write_raw(out, "DPLR", 4);
  uint32_t version = 1;
  uint64_t d = static_cast<uint64_t>(a.dim());
  uint64_t k = static_cast<uint64_t>(a.rank());
  write_raw(out, &version, sizeof version);
  write_raw(out, &d, sizeof d);
  write_raw(out, &k, sizeof k);
  write_raw(out, a.diag.data(), sizeof(double) * d);
  write_raw(out, a.factor.data(), sizeof(double) * d * k);  // column-major
  // core row-major
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> core_rm = a.core;
  write_raw(out, core_rm.data(), sizeof(double) * k * k);
}

DplrSym load_dplr(std::istream& in) {
  char magic[4];
  read_raw(in, magic, 4);
  if (std::memcmp(magic, "DPLR", 4) != 0) {
    throw parse_error("dplr container: bad magic '" + std::string(magic, 4) + "'");
  }
  uint32_t version = 0;
  read_raw(in, &version, sizeof version);
  if (version != 1) throw parse_error("dplr container: unsupported version");
  uint64_t d = 0, k = 0;
  read_raw(in, &d, sizeof d);
  read_raw(in, &k, sizeof k);
  DplrSym a;
  a.diag.resize(static_cast<Eigen::Index>(d));
  a.factor.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
  read_raw(in, a.diag.data(), sizeof(double) * d);
  read_raw(in, a.factor.data(), sizeof(double) * d * k);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> core_rm(
      static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  read_raw(in, core_rm.data(), sizeof(double) * k * k);
  a.core = core_rm;
  return a;
}

}  // namespace lrlgf
