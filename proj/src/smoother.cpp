#include "lrlgf/smoother.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

namespace lrlgf {

DplrGain smoother_gain(const DplrSym& p, const ProcessNoise& q) {
  if (q.dim() != p.dim()) throw contract_violation("smoother_gain: dimension mismatch");
  if (q.is_zero()) return DplrGain::identity(p.dim());

  const VectorXd dprime = VectorXd::Ones(p.dim()) + q.q().cwiseProduct(p.diag);
  DplrGain g;
  g.diag = dprime.cwiseInverse();
  if (p.rank() == 0) {
    g.left = MatrixXd(p.dim(), 0);
    g.core = MatrixXd(0, 0);
    g.right = MatrixXd(p.dim(), 0);
    return g;
  }
  const VectorXd q_over = q.q().cwiseProduct(g.diag);  // q / (1 + q d)
  g.left = q_over.asDiagonal() * p.factor;
  g.right = g.diag.asDiagonal() * p.factor;
  MatrixXd shift = p.factor.transpose() * q_over.asDiagonal() * p.factor;
  g.core = -core_shift_inverse(p.core, shift, "smoother_gain");
  return g;
}

VectorXd smooth_mean_step(const VectorXd& m_t, const VectorXd& m_next_smoothed,
                          const DplrGain& gain) {
  if (m_t.size() != m_next_smoothed.size() || m_t.size() != gain.dim()) {
    throw contract_violation("smooth_mean_step: dimension mismatch");
  }
  return m_t + matvec(gain, m_next_smoothed - m_t);
}

namespace {

// diag(delta) + F M F^T with small symmetric M.
struct SymLowRank {
  VectorXd delta;
  MatrixXd f;
  MatrixXd m;
};

// Exact expansion of B C B^T where B = diag(b) + Ub Sb Vb^T (Sb symmetric)
// and C = diag(c) + Uc Sc Uc^T. The result uses the column blocks
//   X1 = Ub,  X2 = diag(b) Uc,  X3 = diag(b c) Vb,
// whose spans jointly contain every non-diagonal term of the product.
SymLowRank sandwich(const VectorXd& b, const MatrixXd& ub, const MatrixXd& sb, const MatrixXd& vb,
                    const VectorXd& c, const MatrixXd& uc, const MatrixXd& sc) {
  const Eigen::Index d = b.size(), kb = ub.cols(), kc = uc.cols();
  SymLowRank out;
  out.delta = b.cwiseProduct(c).cwiseProduct(b);

  const Eigen::Index r = kb + kc + kb;
  out.f.resize(d, r);
  out.m = MatrixXd::Zero(r, r);
  if (kb > 0) {
    out.f.middleCols(0, kb) = ub;
    out.f.middleCols(kb + kc, kb) = b.cwiseProduct(c).asDiagonal() * vb;
  }
  if (kc > 0) out.f.middleCols(kb, kc) = b.asDiagonal() * uc;

  if (kb > 0) {
    MatrixXd r_small = vb.transpose() * c.asDiagonal() * vb;  // kb x kb
    MatrixXd m11 = sb * r_small * sb;
    if (kc > 0) {
      MatrixXd p_small = vb.transpose() * uc;  // kb x kc
      MatrixXd sbp = sb * p_small;
      m11.noalias() += sbp * sc * sbp.transpose();
      out.m.block(0, kb, kb, kc) = sbp * sc;
      out.m.block(kb, 0, kc, kb) = out.m.block(0, kb, kb, kc).transpose();
    }
    out.m.block(0, 0, kb, kb) = 0.5 * (m11 + m11.transpose().eval());
    out.m.block(0, kb + kc, kb, kb) = sb;
    out.m.block(kb + kc, 0, kb, kb) = sb;
  }
  if (kc > 0) out.m.block(kb, kb, kc, kc) = sc;
  return out;
}

// Best rank-k approximation of F M F^T, orthonormalizing F through the
// column-equilibrated Gram matrix (GEMM-dominated, never a D x D object) and
// eigendecomposing the projected small matrix. Keeps the largest eigenvalues
// by magnitude; the core stays signed.
std::pair<MatrixXd, VectorXd> truncate_sym_lowrank(const MatrixXd& f, const MatrixXd& m,
                                                   Eigen::Index k) {
  const Eigen::Index d = f.rows(), r = f.cols();
  if (r == 0 || k <= 0) return {MatrixXd(d, 0), VectorXd(0)};

  // Equilibrate columns so the Gram matrix's conditioning reflects the
  // directions, not the scales.
  VectorXd scale(r);
  for (Eigen::Index j = 0; j < r; ++j) {
    double n = f.col(j).norm();
    scale[j] = n > 0.0 ? n : 1.0;
  }
  VectorXd inv_scale = scale.cwiseInverse();
  MatrixXd gram = inv_scale.asDiagonal() * (f.transpose() * f) * inv_scale.asDiagonal();
  gram = 0.5 * (gram + gram.transpose().eval());

  Eigen::SelfAdjointEigenSolver<MatrixXd> geig(gram);
  const VectorXd& glam = geig.eigenvalues();
  double gmax = glam.maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < r; ++i) {
    if (glam[i] > 1e-24 * gmax) keep.push_back(i);
  }
  const Eigen::Index rr = static_cast<Eigen::Index>(keep.size());
  if (rr == 0) return {MatrixXd(d, 0), VectorXd(0)};

  // Basis Q = F S^-1 V L^-1/2; then Q^T (F M F^T) Q = L^1/2 V^T M' V L^1/2
  // with the equilibrated M' = S M S.
  MatrixXd v(r, rr);
  VectorXd lam_half(rr);
  for (Eigen::Index i = 0; i < rr; ++i) {
    v.col(i) = geig.eigenvectors().col(keep[i]);
    lam_half[i] = std::sqrt(glam[keep[i]]);
  }
  MatrixXd m_eq = scale.asDiagonal() * m * scale.asDiagonal();
  MatrixXd t = lam_half.asDiagonal() * (v.transpose() * m_eq * v) * lam_half.asDiagonal();
  t = 0.5 * (t + t.transpose().eval());

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(t);
  const VectorXd& lam = eig.eigenvalues();
  std::vector<Eigen::Index> order(rr);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    return std::abs(lam[i]) > std::abs(lam[j]);
  });

  double lmax = std::abs(lam[order[0]]);
  Eigen::Index kept = 0;
  while (kept < k && kept < rr) {
    if (std::abs(lam[order[kept]]) <= 1e-12 * lmax) break;
    ++kept;
  }
  MatrixXd w(rr, kept);
  VectorXd vals(kept);
  for (Eigen::Index i = 0; i < kept; ++i) {
    w.col(i) = eig.eigenvectors().col(order[i]);
    vals[i] = lam[order[i]];
  }
  MatrixXd basis_small = v * (lam_half.cwiseInverse().asDiagonal() * w);
  return {f * (inv_scale.asDiagonal() * basis_small), std::move(vals)};
}

}  // namespace

DplrSym smooth_precision_step(const DplrSym& p_t, const DplrSym& p_next_smoothed,
                              const ProcessNoise& q, const DplrGain& gain, Eigen::Index k) {
  if (p_t.dim() != p_next_smoothed.dim() || p_t.dim() != q.dim() || p_t.dim() != gain.dim()) {
    throw contract_violation("smooth_precision_step: dimension mismatch");
  }
  // With no process noise the gain is the identity and the smoothed precision
  // propagates back unchanged.
  if (q.is_zero()) return p_next_smoothed;

  const DplrSym cov_t = invert(p_t);
  const DplrSym cov_s = invert(p_next_smoothed);

  // (C^s_{t+1} - Q) diagonal: negative entries are clamped before they
  // re-enter as variances.
  VectorXd chat = cov_s.diag - q.q();
  Eigen::Index clamped = 0;
  for (Eigen::Index i = 0; i < chat.size(); ++i) {
    if (chat[i] < 0.0) {
      chat[i] = 0.0;
      ++clamped;
    }
  }
  if (clamped * 2 > chat.size()) {
    std::cerr << "smooth_precision_step: clamped " << clamped << "/" << chat.size()
              << " covariance entries below Q\n";
  }

  // C^s_t = C_t + G (Chat - C_t) G^T with Chat = C^s_{t+1} - Q; merging the
  // two sandwich products keeps the truncation input narrow.
  const Eigen::Index k1 = cov_t.rank(), k2 = cov_s.rank();
  VectorXd mid_diag = chat - cov_t.diag;
  MatrixXd mid_factor(p_t.dim(), k2 + k1);
  mid_factor.leftCols(k2) = cov_s.factor;
  mid_factor.rightCols(k1) = cov_t.factor;
  MatrixXd mid_core = MatrixXd::Zero(k2 + k1, k2 + k1);
  mid_core.topLeftCorner(k2, k2) = cov_s.core;
  mid_core.bottomRightCorner(k1, k1) = -cov_t.core;

  SymLowRank term =
      sandwich(gain.diag, gain.left, gain.core, gain.right, mid_diag, mid_factor, mid_core);

  VectorXd delta = cov_t.diag + term.delta;
  const Eigen::Index rt = term.f.cols();
  MatrixXd f(p_t.dim(), k1 + rt);
  f.leftCols(k1) = cov_t.factor;
  f.rightCols(rt) = term.f;
  MatrixXd m = MatrixXd::Zero(f.cols(), f.cols());
  m.topLeftCorner(k1, k1) = cov_t.core;
  m.bottomRightCorner(rt, rt) = term.m;

  auto [basis, vals] = truncate_sym_lowrank(f, m, k);

  DplrSym smoothed_cov;
  smoothed_cov.diag = std::move(delta);
  smoothed_cov.factor = std::move(basis);
  smoothed_cov.core = MatrixXd(vals.asDiagonal());
  return invert(smoothed_cov);
}

std::vector<GaussianBelief> run_smoother(const FilterTrace& trace, Eigen::Index k) {
  if (trace.tasks() < 1) throw contract_violation("run_smoother: empty trace");
  const int t_count = trace.tasks();
  std::vector<GaussianBelief> smoothed(t_count);
  smoothed[t_count - 1] = trace.beliefs[t_count - 1];
  smoothed[t_count - 1].tag = BeliefTag::Smoothed;

  for (int t = t_count - 2; t >= 0; --t) {
    const GaussianBelief& filt = trace.beliefs[t];
    DplrGain gain = smoother_gain(filt.precision, trace.q);
    GaussianBelief b;
    b.mean = smooth_mean_step(filt.mean, smoothed[t + 1].mean, gain);
    b.precision =
        smooth_precision_step(filt.precision, smoothed[t + 1].precision, trace.q, gain, k);
    b.tag = BeliefTag::Smoothed;
    smoothed[t] = std::move(b);
  }
  return smoothed;
}

std::vector<GapInference> infer_between(const FilterTrace& trace, Eigen::Index k) {
  auto smoothed = run_smoother(trace, k);
  std::vector<GapInference> out;
  for (int t = 0; t < trace.tasks(); ++t) {
    if (t < static_cast<int>(trace.gap.size()) && trace.gap[t]) {
      out.push_back(GapInference{t + 1, trace.beliefs[t], smoothed[t]});
    }
  }
  return out;
}

}  // namespace lrlgf
