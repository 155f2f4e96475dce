#include "upoe/sequential_trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "upoe/datasets.hpp"
#include "upoe/error.hpp"
#include "upoe/linalg.hpp"
#include "upoe/preprocess.hpp"

namespace upoe::sequential {
namespace {

constexpr std::string_view kComponent = "sequential_trainer";
constexpr double kDirectionTol = 1e-7;
constexpr double kIndexTol = 1e-9;
constexpr int kMaxHalvings = 40;

using experts::Expert;
using experts::MixtureT;
using experts::StudentT;

double safe_mean_log_density(const Expert& e, experts::Samples z) {
  try {
    const double v = experts::mean_log_density(e, z);
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  } catch (const Error&) {
    return -std::numeric_limits<double>::infinity();
  }
}

// One Newton step for a Student-t; for a mixture, an EM/IRLS update followed
// by one backtracked gradient step on the unconstrained coordinates. Never
// lowers the mean log-density; `gamma` carries the step size between calls.
Expert expert_sweep(const Expert& expert, experts::Samples z, const parallel::TrainConfig& cfg,
                    double& gamma) {
  if (std::holds_alternative<experts::GaussianUnit>(expert)) return expert;
  if (const auto* t = std::get_if<StudentT>(&expert)) {
    return experts::fit_student_t(*t, z, {1, 0.0, cfg.mask});
  }
  Expert cur = expert;
  double cur_ll = safe_mean_log_density(cur, z);

  try {
    const auto em = experts::em_step(std::get<MixtureT>(expert), z, {cfg.epsilon, cfg.mask, false});
    const Expert cand = experts::irls_step(em.params, z, em.state, cfg.mask);
    const double ll = safe_mean_log_density(cand, z);
    if (ll >= cur_ll) {
      cur = cand;
      cur_ll = ll;
    }
  } catch (const Error&) {
    // a starved component; the gradient step below still applies
  }

  const std::vector<double> g = experts::grad_unconstrained(cur, z, cfg.mask);
  double norm2 = 0;
  for (double v : g) norm2 += v * v;
  if (norm2 == 0 || !std::isfinite(norm2)) return cur;
  const std::vector<double> p = experts::to_unconstrained(cur);
  for (int k = 0; k < kMaxHalvings; ++k) {
    std::vector<double> q(p);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] += gamma * g[i];
    try {
      const Expert cand = experts::from_unconstrained(cur, q);
      if (safe_mean_log_density(cand, z) >= cur_ll) {
        if (cfg.adaptive) gamma *= 1.1;
        return cand;
      }
    } catch (const Error&) {
    }
    gamma *= 0.5;
  }
  return cur;
}

linalg::Matrix row_span_basis(const UpoeModel& model) {
  if (model.num_experts() == 0) return linalg::Matrix(0, model.dim());
  return linalg::orthonormalize_rows(model.directions());
}

Eigen::VectorXd random_direction(const linalg::Matrix& basis, Eigen::Index dim, experts::Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int attempt = 0;; ++attempt) {
    Eigen::VectorXd w = Eigen::VectorXd::NullaryExpr(dim, [&] { return normal(rng); });
    try {
      return linalg::gram_schmidt_against(w, basis);
    } catch (const Error&) {
      if (attempt > 100) throw;
    }
  }
}

// One backtracked descent step on q over the direction. Leaves w and q alone
// when no step size helps.
void direction_step(Eigen::VectorXd& w, double& q, const Expert& expert, const linalg::Matrix& basis,
                    const Eigen::MatrixXd& X, const parallel::TrainConfig& cfg, double& eta) {
  if (!cfg.adaptive) eta = cfg.eta;
  const Eigen::VectorXd g = grad_q_direction(w, expert, X);
  for (int k = 0; k < kMaxHalvings; ++k) {
    try {
      const Eigen::VectorXd cand = linalg::gram_schmidt_against(w - eta * g, basis);
      const double qc = projection_index(cand, expert, X).q;
      if (std::isfinite(qc) && qc <= q) {
        w = cand;
        q = qc;
        if (cfg.adaptive) eta *= 1.1;
        return;
      }
    } catch (const Error&) {
    }
    eta *= 0.5;
  }
}

DirectionFit single_search(const linalg::Matrix& basis, const Eigen::MatrixXd& X,
                           const parallel::TrainConfig& cfg, experts::Rng& rng) {
  Eigen::VectorXd w = random_direction(basis, X.cols(), rng);
  double eta = cfg.eta;
  double gamma = cfg.gamma;

  // Warm up against the unfitted template. An expert fitted to a start that
  // already looks Gaussian is nearly Gaussian itself and its direction
  // gradient nearly vanishes, so the search would stall there.
  Expert expert = cfg.expert_template;
  double q = projection_index(w, expert, X).q;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Eigen::VectorXd w_old = w;
    const double q_old = q;
    direction_step(w, q, expert, basis, X, cfg, eta);
    if ((w - w_old).norm() < kDirectionTol && q_old - q < kIndexTol) break;
  }

  expert = fit_expert(cfg.expert_template, X * w, cfg, 100, 1e-10);
  q = projection_index(w, expert, X).q;
  eta = cfg.eta;
  for (int it = 0; it < cfg.max_iters; ++it) {
    Eigen::VectorXd w_new = w;
    double q_new = q;
    direction_step(w_new, q_new, expert, basis, X, cfg, eta);
    const Expert refit = expert_sweep(expert, X * w_new, cfg, gamma);
    const double q_refit = projection_index(w_new, refit, X).q;
    if (q_refit <= q_new) {
      expert = refit;
      q_new = q_refit;
    }
    const double moved = (w_new - w).norm();
    const double gain = q - q_new;
    w = w_new;
    q = q_new;
    if (moved < kDirectionTol && gain < kIndexTol) break;
  }
  expert = fit_expert(expert, X * w, cfg);
  return {w, expert, projection_index(w, expert, X), 0};
}

void require_sphered(const Dataset& data, TrainReport& report) {
  const double err = preprocess::sphering_error(data.values);
  if (err > 1e-6) {
    report.warnings.push_back("training data is not exactly sphered (error " +
                              std::to_string(err) + "); gradients are approximate");
  }
}

}  // namespace

ProjectionIndexValue projection_index(const Eigen::VectorXd& w_hat, const Expert& expert,
                                      const Eigen::MatrixXd& X) {
  if (w_hat.size() != X.cols()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent, "direction and data dimensions differ");
  }
  const Eigen::VectorXd z = X * w_hat;
  ProjectionIndexValue v;
  v.energy_term = (experts::energy(expert, z).array() - 0.5 * z.array().square()).mean();
  v.log_normalizer = experts::log_normalizer(expert);
  v.constant = -0.5 * std::log(2.0 * std::numbers::pi);
  v.q = v.energy_term + v.log_normalizer + v.constant;
  return v;
}

Eigen::VectorXd grad_q_direction(const Eigen::VectorXd& w_hat, const Expert& expert,
                                 const Eigen::MatrixXd& X) {
  const Eigen::VectorXd z = X * w_hat;
  const Eigen::VectorXd r = experts::energy_prime(expert, z) - z;
  return X.transpose() * r / static_cast<double>(X.rows());
}

experts::StudentTGradient grad_q_params(const Eigen::VectorXd& w_hat, const StudentT& expert,
                                        const Eigen::MatrixXd& X) {
  const Eigen::VectorXd z = X * w_hat;
  const auto g = parallel::grad_alpha(expert, z);
  return {-g.mu, -g.theta, -g.beta};
}

Expert fit_expert(const Expert& expert, experts::Samples z, const parallel::TrainConfig& config,
                  int max_iters, double tol) {
  if (const auto* t = std::get_if<StudentT>(&expert)) {
    // Newton converges quadratically, so finishing the last few steps is cheap
    return experts::fit_student_t(*t, z, {max_iters, std::min(tol, 1e-13), config.mask});
  }
  Expert cur = expert;
  double ll = safe_mean_log_density(cur, z);
  double gamma = config.gamma;
  for (int it = 0; it < max_iters; ++it) {
    const Expert next = expert_sweep(cur, z, config, gamma);
    const double next_ll = safe_mean_log_density(next, z);
    const double gain = next_ll - ll;
    cur = next;
    ll = next_ll;
    if (gain < tol) break;
  }
  return cur;
}

DirectionFit search_direction(const UpoeModel& model, const Eigen::MatrixXd& X,
                              const parallel::TrainConfig& config, int restarts,
                              std::uint64_t stream) {
  parallel::validate(config);
  if (restarts < 1) throw Error(ErrorCode::InvalidArgument, kComponent, "restarts must be >= 1");
  if (X.rows() == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "no training data");
  if (X.cols() != model.dim()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent, "data and model dimensions differ");
  }
  if (model.num_experts() >= model.dim()) {
    throw Error(ErrorCode::ModelFull, kComponent, "no directions left to search");
  }
  const linalg::Matrix basis = row_span_basis(model);
  DirectionFit best;
  for (int r = 0; r < restarts; ++r) {
    experts::Rng rng = parallel::rng_stream(config.seed, stream, static_cast<std::uint64_t>(r));
    DirectionFit cand = single_search(basis, X, config, rng);
    cand.restart = r;
    if (r == 0 || cand.index.q < best.index.q) best = std::move(cand);
  }
  return best;
}

DirectionFit fit_direction(const UpoeModel& model, const Dataset& data,
                           const SequentialConfig& config) {
  DirectionFit best = search_direction(model, data.values, config.inner, config.restarts,
                                       static_cast<std::uint64_t>(model.num_experts()));
  if (best.index.q >= 0) {
    throw Error(ErrorCode::NoUsefulDirection, kComponent,
                "best projection index " + std::to_string(best.index.q) + " is not negative");
  }
  return best;
}

std::pair<UpoeModel, TrainReport> train_sequential(const Dataset& data,
                                                   const SequentialConfig& config,
                                                   const Dataset* test) {
  parallel::validate(config.inner);
  if (data.n() == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "no training data");
  if (config.max_experts < 0 || config.max_experts > data.dim()) {
    throw Error(ErrorCode::InvalidArgument, kComponent,
                "expert budget must lie in [0, " + std::to_string(data.dim()) + "]");
  }
  if (config.restarts < 1) throw Error(ErrorCode::InvalidArgument, kComponent, "restarts must be >= 1");
  if (test && test->dim() != data.dim()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent, "test and training dimensions differ");
  }

  TrainReport report;
  require_sphered(data, report);
  UpoeModel model(data.dim());
  const auto start = std::chrono::steady_clock::now();
  auto seconds = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  auto test_ll = [&](const UpoeModel& m) -> std::optional<double> {
    if (!test) return std::nullopt;
    return m.log_likelihood(*test);
  };
  report.iterations.push_back({0, model.log_likelihood(data), test_ll(model), config.inner.eta,
                               config.inner.gamma, seconds()});

  for (Eigen::Index j = 0; j < config.max_experts; ++j) {
    const DirectionFit cand = search_direction(model, data.values, config.inner, config.restarts,
                                               static_cast<std::uint64_t>(j));
    if (config.stop_on_nonnegative_q && !(cand.index.q < -config.noise_floor)) break;
    if (config.holdout_stop && test &&
        projection_index(cand.w_hat, cand.expert, test->values).q >= 0) {
      break;
    }
    model = model.add_expert(cand.w_hat, cand.expert);
    const double ll = model.log_likelihood(data);
    if (!std::isfinite(ll)) throw Error(ErrorCode::Diverged, kComponent, "non-finite log-likelihood");
    const auto tll = test_ll(model);
    report.iterations.push_back({static_cast<int>(j + 1), ll, tll, config.inner.eta,
                                 config.inner.gamma, seconds()});
    report.experts.push_back({static_cast<int>(j + 1), cand.restart, cand.index.q, ll, tll});
  }
  return {model, report};
}

double calibrate_noise_floor(Eigen::Index n, Eigen::Index dim, const SequentialConfig& config,
                             int trials, std::uint64_t seed) {
  double floor = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Dataset raw = datasets::gen_standard_normal(n, dim, seed + static_cast<std::uint64_t>(t));
    const Dataset white = preprocess::fit_transform(raw).second;
    const DirectionFit best =
        search_direction(UpoeModel(dim), white.values, config.inner, config.restarts, 0);
    floor = std::max(floor, -best.index.q);
  }
  return floor;
}

}  // namespace upoe::sequential
