#include <doctest.h>

#include <Eigen/SVD>
#include <sstream>

#include "lrlgf/dplr.hpp"
#include "test_support.hpp"

using namespace lrlgf;
using namespace lrlgf::testing;

TEST_CASE("matvec identity and rank-1") {
  DplrSym id = DplrSym::scaled_identity(3, 1.0);
  VectorXd x(3);
  x << 1, 2, 3;
  CHECK(matvec(id, x) == x);

  // diag(1,1,1,1) + e1 [1] e1^T == diag(2,1,1,1)
  DplrSym a = DplrSym::scaled_identity(4, 1.0);
  a.factor = MatrixXd::Zero(4, 1);
  a.factor(0, 0) = 1.0;
  a.core = MatrixXd::Constant(1, 1, 1.0);
  VectorXd e1 = VectorXd::Unit(4, 0);
  VectorXd y = matvec(a, e1);
  CHECK(y[0] == doctest::Approx(2.0));
  CHECK(y.tail(3).norm() == 0.0);
}

TEST_CASE("matvec matches dense product") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    SplitMix64 g(seed);
    DplrSym a = random_sym_dplr(g, 16, 3);
    VectorXd x = random_vector(g, 16);
    VectorXd want = to_dense(a) * x;
    CHECK(rel_err(matvec(a, x), want) < 1e-10);
  }
}

TEST_CASE("matvec rejects dimension mismatch") {
  DplrSym a = DplrSym::scaled_identity(3, 1.0);
  CHECK_THROWS_AS(matvec(a, VectorXd::Zero(4)), contract_violation);
}

TEST_CASE("add_diag") {
  DplrSym a = DplrSym::diagonal(VectorXd::Constant(2, 1.0));
  DplrSym same = add_diag(a, VectorXd::Zero(2));
  CHECK(same.diag == a.diag);

  SplitMix64 g(7);
  DplrSym b = random_sym_dplr(g, 2, 1);
  b.diag << 1, 2;
  DplrSym shifted = add_diag(b, VectorXd::Constant(2, 3.0));
  CHECK(shifted.diag[0] == doctest::Approx(4.0));
  CHECK(shifted.diag[1] == doctest::Approx(5.0));
  CHECK(shifted.factor == b.factor);
  CHECK(shifted.core == b.core);

  for (uint64_t seed = 0; seed < 20; ++seed) {
    SplitMix64 gg(seed);
    DplrSym m = random_sym_dplr(gg, 12, 2);
    VectorXd l = random_vector(gg, 12, 0.0, 1.0);
    MatrixXd want = to_dense(m) + MatrixXd(l.asDiagonal());
    CHECK(rel_err(to_dense(add_diag(m, l)), want) < 1e-12);
  }
}

TEST_CASE("invert: diagonal case") {
  VectorXd d(2);
  d << 2, 3;
  DplrSym inv = invert(DplrSym::diagonal(d));
  CHECK(inv.diag[0] == doctest::Approx(0.5));
  CHECK(inv.diag[1] == doctest::Approx(1.0 / 3.0));
  CHECK(inv.rank() == 0);
}

TEST_CASE("invert: rank-1 hand example") {
  DplrSym a = DplrSym::scaled_identity(4, 1.0);
  a.factor = MatrixXd::Zero(4, 1);
  a.factor(0, 0) = 1.0;
  a.core = MatrixXd::Constant(1, 1, 1.0);

  DplrSym inv = invert(a);
  CHECK(inv.rank() == 1);
  CHECK(inv.core(0, 0) == doctest::Approx(-0.5));
  MatrixXd want = VectorXd{{0.5, 1.0, 1.0, 1.0}}.asDiagonal();
  CHECK(rel_err(to_dense(inv), want) < 1e-12);
}

TEST_CASE("invert matches dense inverse and is an involution") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    SplitMix64 g(seed);
    DplrSym a = random_pd_dplr(g, 16, 4);
    MatrixXd dense_inv = to_dense(a).inverse();
    CHECK(rel_err(to_dense(invert(a)), dense_inv) < 1e-8);
    CHECK(rel_err(to_dense(invert(invert(a))), to_dense(a)) < 1e-8);
  }
}

TEST_CASE("invert rejects zero diagonal") {
  VectorXd d(2);
  d << 1, 0;
  CHECK_THROWS_AS(invert(DplrSym::diagonal(d)), contract_violation);
}

TEST_CASE("add_lowrank_exact") {
  SplitMix64 g(3);
  DplrSym a = random_sym_dplr(g, 10, 2);
  DplrSym zero = DplrSym::diagonal(VectorXd::Zero(10));
  CHECK(rel_err(to_dense(add_lowrank_exact(a, zero)), to_dense(a)) == 0.0);

  DplrSym r1 = random_sym_dplr(g, 10, 1);
  DplrSym r2 = random_sym_dplr(g, 10, 1);
  DplrSym sum = add_lowrank_exact(r1, r2);
  CHECK(sum.rank() == 2);
  CHECK(sum.core(0, 1) == 0.0);
  CHECK(sum.core(1, 0) == 0.0);

  for (uint64_t seed = 0; seed < 20; ++seed) {
    SplitMix64 gg(seed + 500);
    DplrSym x = random_sym_dplr(gg, 10, 3);
    DplrSym y = random_sym_dplr(gg, 10, 2);
    CHECK(rel_err(to_dense(add_lowrank_exact(x, y)), to_dense(x) + to_dense(y)) < 1e-12);
  }
}

TEST_CASE("sqrt_core") {
  MatrixXd id = MatrixXd::Identity(3, 3);
  MatrixXd r = sqrt_core(id);
  CHECK(rel_err(r * r.transpose(), id) < 1e-12);

  MatrixXd s(2, 2);
  s << 0.25, -0.25, -0.25, 0.25;  // eigenvalues {0.5, 0}
  MatrixXd r2 = sqrt_core(s);
  CHECK(rel_err(r2 * r2.transpose(), s) < 1e-10);

  SplitMix64 g(11);
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd b = random_matrix(g, 6, 6);
    MatrixXd psd = b * b.transpose();
    MatrixXd root = sqrt_core(psd);
    CHECK(rel_err(root * root.transpose(), psd) < 1e-8);
  }

  MatrixXd neg = -id;
  CHECK_THROWS_AS(sqrt_core(neg), contract_violation);
}

TEST_CASE("compress: exact cases") {
  // Orthogonal columns, no truncation.
  MatrixXd w = MatrixXd::Zero(8, 3);
  w(0, 0) = 2.0;
  w(3, 1) = 1.0;
  w(5, 2) = 0.5;
  auto res = compress(w, 3);
  MatrixXd rebuilt =
      res.basis * res.singular_values.array().square().matrix().asDiagonal() *
      res.basis.transpose();
  CHECK(rel_err(rebuilt, w * w.transpose()) < 1e-10);

  // Duplicated column has rank one.
  SplitMix64 g(42);
  VectorXd v = random_vector(g, 12);
  MatrixXd dup(12, 2);
  dup.col(0) = v;
  dup.col(1) = v;
  auto res1 = compress(dup, 1);
  CHECK(res1.singular_values.size() == 1);
  MatrixXd rebuilt1 = res1.basis * res1.singular_values.array().square().matrix().asDiagonal() *
                      res1.basis.transpose();
  CHECK(rel_err(rebuilt1, 2.0 * v * v.transpose()) < 1e-10);
}

TEST_CASE("compress: truncation error matches the dense SVD tail") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    SplitMix64 g(seed);
    MatrixXd w = random_matrix(g, 50, 12);
    const Eigen::Index k = 5;
    auto res = compress(w, k);
    CHECK(res.basis.cols() == k);

    MatrixXd rebuilt = res.basis * res.singular_values.array().square().matrix().asDiagonal() *
                       res.basis.transpose();
    double got_err = (w * w.transpose() - rebuilt).norm();

    Eigen::JacobiSVD<MatrixXd> svd(w);
    double tail = 0.0;
    for (Eigen::Index i = k; i < svd.singularValues().size(); ++i) {
      tail += std::pow(svd.singularValues()[i], 4);
    }
    CHECK(got_err == doctest::Approx(std::sqrt(tail)).epsilon(1e-8));

    // Orthonormal basis, descending order.
    CHECK((res.basis.transpose() * res.basis - MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() <
          1e-10);
    for (Eigen::Index i = 1; i < k; ++i) {
      CHECK(res.singular_values[i] <= res.singular_values[i - 1]);
    }
  }
}

TEST_CASE("compress rejects oversized k") {
  MatrixXd w = MatrixXd::Random(10, 3);
  CHECK_THROWS_AS(compress(w, 4), contract_violation);
}

TEST_CASE("predict_precision") {
  SplitMix64 g(5);
  DplrSym p = random_pd_dplr(g, 8, 2);

  SUBCASE("zero noise is the identity map") {
    DplrSym out = predict_precision(p, ProcessNoise::zero(8));
    CHECK(out.diag == p.diag);
    CHECK(out.factor == p.factor);
    CHECK(out.core == p.core);
  }

  SUBCASE("scalar case") {
    DplrSym scalar = DplrSym::diagonal(VectorXd::Constant(1, 2.0));
    DplrSym out = predict_precision(scalar, ProcessNoise::isotropic(1, 0.5));
    CHECK(out.diag[0] == doctest::Approx(1.0));
  }

  SUBCASE("dense equality and monotone uncertainty growth") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      SplitMix64 gg(seed);
      DplrSym prec = random_pd_dplr(gg, 16, 3);
      ProcessNoise q(random_vector(gg, 16, 0.01, 1.0));
      DplrSym out = predict_precision(prec, q);
      CHECK(out.rank() == prec.rank());

      MatrixXd want =
          (to_dense(prec).inverse() + MatrixXd(q.q().asDiagonal())).inverse();
      CHECK(rel_err(to_dense(out), want) < 1e-8);

      MatrixXd diff = to_dense(prec) - to_dense(out);
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(diff);
      CHECK(eig.eigenvalues().minCoeff() > -1e-8 * to_dense(prec).norm());
    }
  }
}

TEST_CASE("to_dense") {
  VectorXd d(3);
  d << 1, 2, 3;
  CHECK(to_dense(DplrSym::diagonal(d)) == MatrixXd(d.asDiagonal()));

  DplrSym a = DplrSym::scaled_identity(4, 1.0);
  a.factor = MatrixXd::Zero(4, 1);
  a.factor(0, 0) = 1.0;
  a.core = MatrixXd::Constant(1, 1, 1.0);
  MatrixXd want = VectorXd{{2.0, 1.0, 1.0, 1.0}}.asDiagonal();
  CHECK(to_dense(a) == want);

  // Column probing with matvec.
  SplitMix64 g(9);
  DplrSym b = random_sym_dplr(g, 6, 2);
  MatrixXd dense = to_dense(b);
  for (Eigen::Index j = 0; j < 6; ++j) {
    CHECK(rel_err(VectorXd(matvec(b, VectorXd::Unit(6, j))), VectorXd(dense.col(j))) < 1e-12);
  }

  CHECK_THROWS_AS(to_dense(DplrSym::scaled_identity(kDenseBound + 1, 1.0)), contract_violation);
}

TEST_CASE("gain matvec matches dense") {
  SplitMix64 g(13);
  DplrGain gain;
  gain.diag = random_vector(g, 10, 0.1, 1.0);
  gain.left = random_matrix(g, 10, 2);
  gain.core = random_matrix(g, 2, 2);
  gain.right = random_matrix(g, 10, 2);
  VectorXd x = random_vector(g, 10);
  CHECK(rel_err(matvec(gain, x), VectorXd(to_dense(gain) * x)) < 1e-12);

  CHECK(to_dense(DplrGain::identity(5)) == MatrixXd::Identity(5, 5));
}

TEST_CASE("invert_small_sym") {
  SplitMix64 g(31);
  MatrixXd b = random_matrix(g, 5, 5);
  MatrixXd m = b * b.transpose() + MatrixXd::Identity(5, 5);
  CHECK(rel_err(invert_small_sym(m, "test"), MatrixXd(m.inverse())) < 1e-12);

  // A singular matrix with positive trace is rescued by the one jitter retry.
  MatrixXd singular = MatrixXd::Zero(3, 3);
  singular(0, 0) = 1.0;
  CHECK(invert_small_sym(singular, "test").allFinite());

  // Zero trace leaves the jitter at zero: hard numerical failure.
  CHECK_THROWS_AS(invert_small_sym(MatrixXd::Zero(2, 2), "test"), numerical_error);
}

TEST_CASE("core_shift_inverse handles singular cores") {
  // A core with an exact zero eigenvalue: the push-through form is still
  // defined and must match the pseudo-limit of (core^-1 + shift)^-1.
  MatrixXd core = MatrixXd::Zero(2, 2);
  core(0, 0) = 2.0;
  SplitMix64 g(8);
  MatrixXd b = random_matrix(g, 2, 2);
  MatrixXd shift = b * b.transpose() + MatrixXd::Identity(2, 2);
  MatrixXd got = core_shift_inverse(core, shift, "test");

  // Limit check via a tiny epsilon eigenvalue.
  MatrixXd core_eps = core;
  core_eps(1, 1) = 1e-13;
  MatrixXd want = (core_eps.inverse() + shift).inverse();
  CHECK(rel_err(got, want) < 1e-9);

  // Nonsingular case agrees with the direct formula.
  MatrixXd full = b.transpose() * b + 0.5 * MatrixXd::Identity(2, 2);
  CHECK(rel_err(core_shift_inverse(full, shift, "test"),
                MatrixXd((full.inverse() + shift).inverse())) < 1e-12);
}

TEST_CASE("serialization round trip") {
  SplitMix64 g(21);
  DplrSym a = random_sym_dplr(g, 7, 3);
  std::stringstream buf;
  save_dplr(buf, a);
  DplrSym b = load_dplr(buf);
  CHECK(a.diag == b.diag);
  CHECK(a.factor == b.factor);
  CHECK(a.core == b.core);

  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(load_dplr(bad), parse_error);

  std::stringstream truncated;
  save_dplr(truncated, a);
  std::string bytes = truncated.str();
  std::stringstream clipped(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_dplr(clipped), parse_error);
}

TEST_CASE("all ops agree with dense computation across sizes") {
  for (Eigen::Index d : {4, 8, 32}) {
    for (Eigen::Index k : {0, 1, 4}) {
      for (uint64_t seed = 0; seed < 10; ++seed) {
        SplitMix64 g(seed * 131 + d * 7 + k);
        DplrSym a = random_pd_dplr(g, d, k);
        MatrixXd da = to_dense(a);

        VectorXd l = random_vector(g, d, 0.0, 1.0);
        CHECK(rel_err(to_dense(add_diag(a, l)), MatrixXd(da + MatrixXd(l.asDiagonal()))) < 1e-10);
        CHECK(rel_err(to_dense(invert(a)), MatrixXd(da.inverse())) < 1e-8);

        ProcessNoise q(random_vector(g, d, 0.0, 0.5));
        MatrixXd want = (da.inverse() + MatrixXd(q.q().asDiagonal())).inverse();
        CHECK(rel_err(to_dense(predict_precision(a, q)), want) < 1e-8);
      }
    }
  }
}
