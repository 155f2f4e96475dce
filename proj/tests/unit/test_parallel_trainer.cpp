#include <doctest.h>

#include <cmath>
#include <random>

#include "upoe/datasets.hpp"
#include "upoe/error.hpp"
#include "upoe/parallel_trainer.hpp"
#include "upoe/preprocess.hpp"

using namespace upoe;
using experts::GaussianUnit;
using experts::MixtureT;
using experts::StudentT;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected upoe::Error");
  return ErrorCode::InvalidArgument;
}

Dataset sphered_noise(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  return preprocess::fit_transform(datasets::gen_standard_normal(n, d, seed)).second;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  return Eigen::MatrixXd::NullaryExpr(r, c, [&] { return n(rng); });
}

Eigen::MatrixXd orthonormal_rows(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(c, r, rng));
  return Eigen::MatrixXd(qr.householderQ()).leftCols(r).transpose();
}

experts::Expert random_expert(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  const double pick = u(rng);
  auto t = [&] { return StudentT{u(rng) - 0.5, 0.5 + u(rng), 0.8 + 3 * u(rng)}; };
  if (pick < 0.6) return t();
  if (pick < 0.9) return MixtureT{{t(), t()}, {0.3, 0.7}};
  return GaussianUnit{};
}

// Raw-space directions and rescaled inverse scale of a model trained on
// sphered data: z = w^T A (x - m) = |f| (f_hat^T x) + c with f = A^T w.
std::pair<Eigen::VectorXd, double> raw_filter(const preprocess::PreprocessTransform& t,
                                              const Eigen::VectorXd& w) {
  Eigen::VectorXd f = t.whitening.transpose() * w;
  const double n = f.norm();
  return {f / n, n};
}

}  // namespace

TEST_CASE("grad_W vanishes at the pure-noise model on sphered data") {
  SUBCASE("one dimension") {
    Eigen::MatrixXd x(4, 1);
    x << 1, -1, 1, -1;
    const UpoeModel m(Eigen::MatrixXd::Identity(1, 1), {GaussianUnit{}});
    CHECK(std::abs(parallel::grad_W(m, x)(0, 0)) < 1e-15);
  }
  SUBCASE("orthonormal rows with gaussian experts") {
    std::mt19937_64 rng(1);
    const Dataset d = sphered_noise(300, 6, 2);
    for (int J = 1; J <= 6; ++J) {
      const UpoeModel m(orthonormal_rows(J, 6, rng), std::vector<experts::Expert>(J, GaussianUnit{}));
      CHECK(parallel::grad_W(m, d.values).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("grad_W is the exact gradient of the log-likelihood on sphered data") {
  std::mt19937_64 rng(3);
  const Dataset d = sphered_noise(400, 4, 4);
  int configs = 0;
  for (int J = 1; J <= 4; ++J) {
    for (int rep = 0; rep < 6; ++rep, ++configs) {
      Eigen::MatrixXd W = orthonormal_rows(J, 4, rng) + 0.3 * random_matrix(J, 4, rng);
      std::vector<experts::Expert> es;
      for (int j = 0; j < J; ++j) es.push_back(random_expert(rng));
      const UpoeModel m(W, es);
      const Eigen::MatrixXd g = parallel::grad_W(m, d.values);
      Eigen::MatrixXd fd(J, 4);
      const double h = 1e-6;
      for (int r = 0; r < J; ++r) {
        for (int c = 0; c < 4; ++c) {
          Eigen::MatrixXd up = W, dn = W;
          up(r, c) += h;
          dn(r, c) -= h;
          fd(r, c) = (UpoeModel(up, es).log_likelihood(d) - UpoeModel(dn, es).log_likelihood(d)) / (2 * h);
        }
      }
      CHECK((g - fd).norm() / fd.norm() < 1e-5);
    }
  }
  CHECK(configs >= 20);
}

TEST_CASE("grad_W is not exact on data that is not sphered") {
  std::mt19937_64 rng(5);
  Dataset d = sphered_noise(400, 3, 6);
  d.values.col(0) *= 2.0;
  Eigen::MatrixXd W = orthonormal_rows(1, 3, rng) + 0.3 * random_matrix(1, 3, rng);
  const std::vector<experts::Expert> es{StudentT{0, 1, 2}};
  const Eigen::MatrixXd g = parallel::grad_W(UpoeModel(W, es), d.values);
  Eigen::MatrixXd fd(1, 3);
  for (int c = 0; c < 3; ++c) {
    Eigen::MatrixXd up = W, dn = W;
    up(0, c) += 1e-6;
    dn(0, c) -= 1e-6;
    fd(0, c) = (UpoeModel(up, es).log_likelihood(d) - UpoeModel(dn, es).log_likelihood(d)) / 2e-6;
  }
  CHECK((g - fd).norm() / fd.norm() > 1e-3);
}

TEST_CASE("grad_alpha") {
  const StudentT t{0.4, 1.3, 2.2};
  Eigen::VectorXd z(5);
  z << -1, 0.2, 0.4, 3, -0.5;
  const auto a = parallel::grad_alpha(t, z);
  const auto b = experts::grad_params_loglik(t, z);
  CHECK(a.mu == b.mu);
  CHECK(a.theta == b.theta);
  CHECK(a.beta == b.beta);
  CHECK(parallel::grad_alpha(t, Eigen::VectorXd::Constant(7, 0.4)).mu == 0.0);
}

TEST_CASE("sphered objective equals the log-likelihood on sphered data") {
  std::mt19937_64 rng(7);
  const Dataset d = sphered_noise(500, 5, 8);
  const UpoeModel m(random_matrix(3, 5, rng), {StudentT{0, 1, 2}, random_expert(rng), GaussianUnit{}});
  CHECK(std::abs(parallel::sphered_objective(m, d.values) - m.log_likelihood(d)) < 1e-10);
  CHECK(std::abs(parallel::sphered_objective(UpoeModel(5), d.values) - UpoeModel(5).log_likelihood(d)) < 1e-10);
}

TEST_CASE("configuration validation") {
  parallel::TrainConfig c;
  c.eta = 0;
  CHECK(code_of([&] { parallel::validate(c); }) == ErrorCode::InvalidArgument);
  c = {};
  c.batch_size = 0;
  CHECK(code_of([&] { parallel::validate(c); }) == ErrorCode::InvalidArgument);
  c = {};
  c.tol = -1;
  CHECK(code_of([&] { parallel::validate(c); }) == ErrorCode::InvalidArgument);
  const Dataset d = sphered_noise(50, 3, 1);
  CHECK(code_of([&] { parallel::train_parallel(d, 4, std::nullopt, {}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("train_parallel") {
  SUBCASE("J = 0 returns the standard normal") {
    const Dataset d = sphered_noise(200, 3, 9);
    const auto [m, rep] = parallel::train_parallel(d, 0, std::nullopt, {});
    CHECK(m.num_experts() == 0);
    REQUIRE(rep.iterations.size() == 1);
    CHECK(std::abs(rep.iterations[0].train_ll + 1.5 * (std::log(2 * M_PI) + 1)) < 1e-10);
  }

  SUBCASE("recovers a single planted student-t expert") {
    std::mt19937_64 rng(10);
    const Eigen::MatrixXd U = orthonormal_rows(1, 5, rng);
    const StudentT truth{0.0, 1.5, 2.0};
    const auto planted = datasets::gen_planted_upoe(5, U, {truth}, 20'000, 11);
    const auto [t, white] = preprocess::fit_transform(planted.data);
    parallel::TrainConfig cfg;
    cfg.seed = 12;
    cfg.max_iters = 300;
    const auto [m, rep] = parallel::train_parallel(white, 1, std::nullopt, cfg);
    const auto [f, scale] = raw_filter(t, m.directions().row(0).transpose());
    const StudentT fit = std::get<StudentT>(m.experts()[0]);
    CHECK(std::abs(f.dot(U.row(0).transpose())) > 0.99);
    CHECK(std::abs(fit.theta * scale / truth.theta - 1) < 0.1);
    CHECK(std::abs(fit.beta / truth.beta - 1) < 0.1);
    for (std::size_t i = 1; i < rep.iterations.size(); ++i) {
      CHECK(rep.iterations[i].train_ll >= rep.iterations[i - 1].train_ll - 1e-6);
    }
    CHECK(rep.warnings.empty());
  }

  SUBCASE("nearly collinear starting rows diversify") {
    std::mt19937_64 rng(13);
    const Eigen::MatrixXd U = orthonormal_rows(2, 6, rng);
    const auto planted = datasets::gen_planted_upoe(6, U, {StudentT{0, std::sqrt(2.0), 2.0}, StudentT{0, std::sqrt(2.0), 2.0}},
                                                    5000, 14);
    const auto white = preprocess::fit_transform(planted.data).second;
    Eigen::MatrixXd W(2, 6);
    W.row(0) = Eigen::RowVectorXd::Unit(6, 0);
    W.row(1) = (Eigen::RowVectorXd::Unit(6, 0) + 0.05 * Eigen::RowVectorXd::Unit(6, 1)).normalized();
    const UpoeModel init(W, {StudentT{0, 1, 2}, StudentT{0, 1, 2}});
    parallel::TrainConfig cfg;
    cfg.max_iters = 300;
    const auto [m, rep] = parallel::train_parallel(white, 2, init, cfg);
    const Eigen::VectorXd a = m.directions().row(0).normalized();
    const Eigen::VectorXd b = m.directions().row(1).normalized();
    CHECK(std::abs(a.dot(b)) < 0.5);
    CHECK(rep.iterations.back().train_ll > rep.iterations.front().train_ll);
  }

  SUBCASE("frozen rows and experts stay fixed") {
    std::mt19937_64 rng(15);
    const auto planted = datasets::gen_planted_upoe(4, orthonormal_rows(2, 4, rng),
                                                    {StudentT{0, 1.4, 2}, StudentT{0, 1.4, 2}}, 2000, 16);
    const auto white = preprocess::fit_transform(planted.data).second;
    const UpoeModel init(orthonormal_rows(2, 4, rng), {StudentT{0, 1, 2}, StudentT{0, 1, 2}});
    parallel::ParallelOptions opt;
    opt.frozen_rows = 1;
    const auto [m, rep] = parallel::train_parallel(white, 2, init, {}, opt);
    CHECK(m.directions().row(0) == init.directions().row(0));
    CHECK(m.experts()[0] == init.experts()[0]);
    CHECK(m.directions().row(1) != init.directions().row(1));
  }

  SUBCASE("warm start appends rows orthogonal to the initial model") {
    const Dataset d = sphered_noise(500, 4, 17);
    const UpoeModel init(Eigen::MatrixXd::Identity(1, 4), {StudentT{0, 1, 5}});
    parallel::TrainConfig cfg;
    cfg.max_iters = 0;
    const auto [m, rep] = parallel::train_parallel(d, 3, init, cfg);
    CHECK(m.num_experts() == 3);
    CHECK(m.orthonormality_error() < 1e-10);
  }

  SUBCASE("oversized fixed steps diverge") {
    std::mt19937_64 rng(18);
    const auto planted = datasets::gen_planted_upoe(3, orthonormal_rows(1, 3, rng), {StudentT{0, 1, 1}}, 500, 19);
    const auto white = preprocess::fit_transform(planted.data).second;
    parallel::TrainConfig cfg;
    cfg.adaptive = false;
    cfg.eta = 1e6;
    cfg.gamma = 1e6;
    CHECK(code_of([&] { parallel::train_parallel(white, 1, std::nullopt, cfg); }) == ErrorCode::Diverged);
  }

  SUBCASE("a finite collapse under fixed steps is reported as divergence") {
    const auto white = preprocess::fit_transform(datasets::gen_crabs_like(25, 4).data).second;
    parallel::TrainConfig cfg;
    cfg.adaptive = false;
    cfg.eta = 1e6;
    cfg.gamma = 1e6;
    CHECK(code_of([&] { parallel::train_parallel(white, 1, std::nullopt, cfg); }) == ErrorCode::Diverged);
    cfg.eta = cfg.gamma = 0.01;
    cfg.max_iters = 5;
    CHECK_NOTHROW(parallel::train_parallel(white, 1, std::nullopt, cfg));
  }

  SUBCASE("unsphered data raises a warning") {
    Dataset d = datasets::gen_standard_normal(300, 3, 20);
    d.values *= 3.0;
    parallel::TrainConfig cfg;
    cfg.max_iters = 2;
    const auto [m, rep] = parallel::train_parallel(d, 1, std::nullopt, cfg);
    CHECK(rep.warnings.size() == 1);
  }

  SUBCASE("deterministic under seed") {
    const Dataset d = sphered_noise(300, 3, 21);
    parallel::TrainConfig cfg;
    cfg.max_iters = 5;
    cfg.seed = 4;
    const auto a = parallel::train_parallel(d, 2, std::nullopt, cfg).first;
    const auto b = parallel::train_parallel(d, 2, std::nullopt, cfg).first;
    CHECK(a.directions() == b.directions());
    CHECK(a.experts() == b.experts());
  }
}

TEST_CASE("growth protocols") {
  std::mt19937_64 rng(22);
  const auto planted = datasets::gen_planted_upoe(
      8, orthonormal_rows(3, 8, rng),
      {StudentT{0, 1.2, 1.8}, MixtureT{{StudentT{-1.5, 2, 10}, StudentT{1.5, 2, 10}}, {0.5, 0.5}},
       StudentT{0, 1, 3}},
      800, 23);
  const auto white = preprocess::fit_transform(planted.data).second;
  parallel::TrainConfig cfg;
  cfg.seed = 24;
  const auto [par, rp] = parallel::train_growing(white, 4, parallel::Growth::Parallel, cfg, 2);
  const auto [seq, rs] = parallel::train_growing(white, 4, parallel::Growth::FrozenSequential, cfg, 2);
  REQUIRE(par.size() == 4);
  REQUIRE(rp.experts.size() == 4);
  for (int j = 0; j < 4; ++j) {
    CHECK(rp.experts[j].train_ll >= rs.experts[j].train_ll - 1e-6);
    if (j > 0) {
      CHECK(rp.experts[j].train_ll >= rp.experts[j - 1].train_ll - 1e-6);
      CHECK(rs.experts[j].train_ll >= rs.experts[j - 1].train_ll - 1e-6);
      // frozen protocol keeps every earlier row
      CHECK(seq[j].directions().topRows(j) == seq[j - 1].directions());
    }
  }
}
