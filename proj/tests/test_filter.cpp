#include <doctest.h>

#include <filesystem>

#include "dense_chain.hpp"
#include "lrlgf/filter.hpp"
#include "test_support.hpp"

using namespace lrlgf;
using namespace lrlgf::testing;

namespace {

FilterConfig small_config(int rank, uint64_t seed) {
  FilterConfig cfg;
  cfg.lambda = {1.0, 0.0};
  cfg.rank = rank;
  cfg.initial_precision = 1e-2;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 16;
  cfg.train.lr_start = 0.05;
  cfg.train.lr_end = 0.01;
  cfg.train.seed = seed;
  cfg.curvature_samples = 8;
  cfg.chunk_size = 4;
  return cfg;
}

std::vector<TaskPair> blob_tasks(int count, uint64_t seed, double drift = 0.5) {
  SyntheticSpec spec;
  spec.tasks = count;
  spec.classes = 2;
  spec.train_per_class = 24;
  spec.test_per_class = 24;
  spec.separation = 5.0;
  spec.drift = drift;
  spec.seed = seed;
  return make_synthetic(spec);
}

}  // namespace

TEST_CASE("predict") {
  SplitMix64 g(1);
  GaussianBelief b{random_vector(g, 8), random_pd_dplr(g, 8, 2), BeliefTag::Filtered};

  SUBCASE("zero noise only flips the tag") {
    GaussianBelief out = predict(b, ProcessNoise::zero(8));
    CHECK(out.tag == BeliefTag::Predicted);
    CHECK(out.mean == b.mean);
    CHECK(out.precision.diag == b.precision.diag);
    CHECK(out.precision.factor == b.precision.factor);
  }

  SUBCASE("scalar chain") {
    GaussianBelief s{VectorXd::Zero(1), DplrSym::diagonal(VectorXd::Constant(1, 2.0)),
                     BeliefTag::Filtered};
    GaussianBelief out = predict(s, ProcessNoise::isotropic(1, 0.5));
    CHECK(out.precision.diag[0] == doctest::Approx(1.0));
  }

  SUBCASE("matches the dense covariance oracle") {
    SplitMix64 gg(5);
    DplrSym p = random_pd_dplr(gg, 16, 3);
    ProcessNoise q(random_vector(gg, 16, 0.01, 0.5));
    GaussianBelief belief{VectorXd::Zero(16), p, BeliefTag::Filtered};
    oracle::DenseGaussian dense{VectorXd::Zero(16), to_dense(p).inverse()};
    oracle::DenseGaussian want = oracle::dense_predict(dense, q);
    CHECK(rel_err(MatrixXd(to_dense(predict(belief, q).precision).inverse()), want.cov) < 1e-8);
  }

  SUBCASE("rejects non-filtered beliefs") {
    GaussianBelief pred = predict(b, ProcessNoise::zero(8));
    CHECK_THROWS_AS(predict(pred, ProcessNoise::zero(8)), contract_violation);
  }
}

TEST_CASE("update with a flat prior recovers the exact GGN precision") {
  auto tasks = blob_tasks(1, 31, 0.0);
  MlpArch arch{2, {6}, 2};  // D = 2*6+6 + 6*2+2 = 32
  FilterConfig cfg = small_config(/*rank=*/32, /*seed=*/4);
  cfg.initial_precision = 1e-4;
  cfg.q = ProcessNoise::zero(arch.param_count());

  FilterTrace trace = run_filter(tasks, arch, cfg);
  const GaussianBelief& belief = trace.beliefs[0];

  // Dense replay: lambda0 I plus the GGN at the trained parameters.
  DenseChain chain = dense_filter_chain(trace, tasks, arch, cfg);
  MatrixXd want = chain.filtered[0].cov.inverse();
  CHECK(rel_err(to_dense(belief.precision), want) < 1e-7);
}

TEST_CASE("degenerate update keeps the predicted belief") {
  auto tasks = blob_tasks(1, 8, 0.0);
  MlpArch arch{2, {4}, 2};
  FilterConfig cfg = small_config(16, 2);
  cfg.train.epochs = 0;
  cfg.curvature_samples = 0;

  SplitMix64 g(3);
  GaussianBelief prior{init_params(arch, 2).theta, random_pd_dplr(g, arch.param_count(), 3),
                       BeliefTag::Filtered};
  GaussianBelief pred = predict(prior, ProcessNoise::isotropic(arch.param_count(), 0.1));
  GaussianBelief out = update(pred, tasks[0].train, arch, cfg, 1);

  CHECK(out.mean == pred.mean);
  CHECK(out.precision.diag == pred.precision.diag);
  // Only the carried-over low-rank term, re-expressed through the SVD.
  CHECK(rel_err(to_dense(out.precision), to_dense(pred.precision)) < 1e-8);
}

TEST_CASE("full-rank update equals diagonal plus W W^T") {
  auto tasks = blob_tasks(1, 77, 0.0);
  MlpArch arch{2, {4}, 2};  // D = 22
  FilterConfig cfg = small_config(22, 9);
  cfg.curvature_samples = 4;

  SplitMix64 g(13);
  GaussianBelief prior{init_params(arch, 9).theta, random_pd_dplr(g, arch.param_count(), 2),
                       BeliefTag::Filtered};
  GaussianBelief pred = predict(prior, ProcessNoise::isotropic(arch.param_count(), 0.05));
  GaussianBelief out = update(pred, tasks[0].train, arch, cfg, 1);

  // Recompute W from the result's training mean and the same seeded picks.
  MlpParams p{arch, out.mean};
  uint64_t task_seed = mix_seed(cfg.train.seed, 1);
  auto factors =
      ggn_factors(p, tasks[0].train.inputs, 4, cfg.chunk_size, mix_seed(task_seed, 0x9999));
  Eigen::Index cols = pred.precision.rank();
  for (const auto& f : factors) cols += f.block.cols();
  MatrixXd w(arch.param_count(), cols);
  w.leftCols(pred.precision.rank()) = pred.precision.factor * sqrt_core(pred.precision.core);
  Eigen::Index at = pred.precision.rank();
  for (const auto& f : factors) {
    w.middleCols(at, f.block.cols()) = f.block;
    at += f.block.cols();
  }
  MatrixXd want = MatrixXd(pred.precision.diag.asDiagonal()) + w * w.transpose();
  CHECK(rel_err(to_dense(out.precision), want) < 1e-8);
}

TEST_CASE("absorbing the SVD tail keeps the represented diagonal exact") {
  auto tasks = blob_tasks(1, 15, 0.0);
  MlpArch arch{2, {4}, 2};
  FilterConfig cfg = small_config(/*rank=*/3, /*seed=*/6);  // heavy truncation
  cfg.curvature_samples = 8;
  cfg.absorb_svd_tail = true;

  GaussianBelief prior{init_params(arch, 6).theta,
                       DplrSym::scaled_identity(arch.param_count(), 1e-2), BeliefTag::Filtered};
  GaussianBelief pred = predict(prior, ProcessNoise::zero(arch.param_count()));
  GaussianBelief out = update(pred, tasks[0].train, arch, cfg, 1);

  // Recompute W and compare diagonals: diag(D^- + W W^T) must be preserved.
  MlpParams p{arch, out.mean};
  auto factors = ggn_factors(p, tasks[0].train.inputs, 8, cfg.chunk_size,
                             mix_seed(mix_seed(cfg.train.seed, 1), 0x9999));
  MatrixXd w(arch.param_count(), 8 * 2);
  Eigen::Index at = 0;
  for (const auto& f : factors) {
    w.middleCols(at, f.block.cols()) = f.block;
    at += f.block.cols();
  }
  VectorXd want_diag = pred.precision.diag + w.rowwise().squaredNorm();
  CHECK(rel_err(VectorXd(to_dense(out.precision).diagonal()), want_diag) < 1e-10);

  FilterConfig off = cfg;
  off.absorb_svd_tail = false;
  GaussianBelief plain = update(pred, tasks[0].train, arch, off, 1);
  CHECK(plain.precision.diag == pred.precision.diag);
}

TEST_CASE("run_filter basics") {
  auto tasks = blob_tasks(2, 55, 0.0);
  MlpArch arch{2, {4}, 2};
  FilterConfig cfg = small_config(12, 21);
  cfg.q = ProcessNoise::zero(arch.param_count());

  SUBCASE("needs at least one task") {
    CHECK_THROWS_AS(run_filter({}, arch, cfg), contract_violation);
  }

  SUBCASE("positive lambda is enforced") {
    FilterConfig bad = cfg;
    bad.lambda = {-1.0, 0.0};
    CHECK_THROWS_AS(run_filter(tasks, arch, bad), contract_violation);
  }

  SUBCASE("single task equals one manual predict/update") {
    std::vector<TaskPair> one{tasks[0]};
    FilterTrace trace = run_filter(one, arch, cfg);
    REQUIRE(trace.tasks() == 1);

    GaussianBelief prior{init_params(arch, cfg.train.seed).theta,
                         DplrSym::scaled_identity(arch.param_count(), cfg.initial_precision),
                         BeliefTag::Filtered};
    GaussianBelief manual = update(predict(prior, cfg.q), one[0].train, arch, cfg, 1);
    CHECK(manual.mean == trace.beliefs[0].mean);
    CHECK(rel_err(to_dense(manual.precision), to_dense(trace.beliefs[0].precision)) == 0.0);
  }

  SUBCASE("the second task anchors at the first optimum") {
    FilterTrace trace = run_filter(tasks, arch, cfg);
    // With Q = 0 the predicted mean for task 2 is the task-1 optimum, so the
    // penalty there is exactly zero.
    GaussianBelief pred2 = predict(trace.beliefs[0], cfg.q);
    CHECK(pred2.mean == trace.beliefs[0].mean);
    Regularizer reg{pred2.mean, pred2.precision, cfg.lambda(2)};
    MlpParams at_anchor{arch, pred2.mean};
    auto [reg_loss, reg_grad] =
        reg_loss_and_grad(at_anchor, tasks[1].train.inputs, tasks[1].train.labels, reg);
    auto [plain_loss, plain_grad] =
        loss_and_grad(at_anchor, tasks[1].train.inputs, tasks[1].train.labels);
    CHECK(reg_loss == doctest::Approx(plain_loss));
    CHECK((reg_grad - plain_grad).norm() == 0.0);
  }
}

TEST_CASE("three-task chain matches the dense filter step for step") {
  auto tasks = blob_tasks(3, 101);
  MlpArch arch{2, {6}, 2};  // D = 32
  const Eigen::Index d = arch.param_count();
  FilterConfig cfg = small_config(static_cast<int>(d), 3);
  cfg.curvature_samples = 6;
  cfg.q = ProcessNoise::isotropic(d, 0.2);

  FilterTrace trace = run_filter(tasks, arch, cfg);
  DenseChain chain = dense_filter_chain(trace, tasks, arch, cfg);
  for (int t = 0; t < trace.tasks(); ++t) {
    MatrixXd want = chain.filtered[t].cov.inverse();
    CHECK(rel_err(to_dense(trace.beliefs[t].precision), want) < 1e-6);
    CHECK(chain.filtered[t].mean == trace.beliefs[t].mean);
  }
}

TEST_CASE("gap slots are predict-only") {
  auto tasks = insert_gaps(blob_tasks(3, 9), {2});
  MlpArch arch{2, {4}, 2};
  FilterConfig cfg = small_config(10, 5);
  cfg.q = ProcessNoise::isotropic(arch.param_count(), 0.3);

  FilterTrace trace = run_filter(tasks, arch, cfg);
  REQUIRE(trace.tasks() == 3);
  CHECK(trace.gap == std::vector<bool>{false, true, false});
  // The gap belief is the predicted belief from task 1.
  GaussianBelief pred = predict(trace.beliefs[0], cfg.q);
  CHECK(trace.beliefs[1].mean == pred.mean);
  CHECK(rel_err(to_dense(trace.beliefs[1].precision), to_dense(pred.precision)) == 0.0);
}

TEST_CASE("trace persistence round trip") {
  auto tasks = blob_tasks(2, 3, 0.0);
  MlpArch arch{2, {4}, 2};
  FilterConfig cfg = small_config(8, 17);
  cfg.q = ProcessNoise::isotropic(arch.param_count(), 0.1);
  FilterTrace trace = run_filter(tasks, arch, cfg);

  std::string dir = (std::filesystem::temp_directory_path() / "lrlgf_trace_test").string();
  std::filesystem::remove_all(dir);
  save_trace(dir, trace);
  FilterTrace loaded = load_trace(dir);

  REQUIRE(loaded.tasks() == trace.tasks());
  CHECK(loaded.arch == trace.arch);
  CHECK(loaded.q.q() == trace.q.q());
  CHECK(loaded.gap == trace.gap);
  for (int t = 0; t < trace.tasks(); ++t) {
    CHECK(loaded.beliefs[t].mean == trace.beliefs[t].mean);
    CHECK(loaded.beliefs[t].precision.diag == trace.beliefs[t].precision.diag);
    CHECK(loaded.beliefs[t].precision.factor == trace.beliefs[t].precision.factor);
    CHECK(loaded.beliefs[t].precision.core == trace.beliefs[t].precision.core);
  }
  std::filesystem::remove_all(dir);
}
