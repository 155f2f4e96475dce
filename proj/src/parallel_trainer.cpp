#include "upoe/parallel_trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "upoe/error.hpp"
#include "upoe/linalg.hpp"
#include "upoe/preprocess.hpp"
#include "upoe/sequential_trainer.hpp"

namespace upoe::parallel {
namespace {

constexpr std::string_view kComponent = "parallel_trainer";
constexpr int kMaxHalvings = 40;
constexpr double kMinStep = 1e-14;
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;

void check_data(const Dataset& data, Eigen::Index J) {
  if (data.n() == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "no training data");
  if (J < 0 || J > data.dim()) {
    throw Error(ErrorCode::InvalidArgument, kComponent,
                "expert count must lie in [0, " + std::to_string(data.dim()) + "]");
  }
}

// Random orthonormal rows, every expert at the template. The template is
// deliberately not fitted: on an uninformative projection the fit drifts to
// the Gaussian limit, where the direction gradient vanishes.
UpoeModel random_start(const Dataset& data, Eigen::Index J, const TrainConfig& cfg) {
  experts::Rng rng = rng_stream(cfg.seed, kShuffleStream, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::MatrixXd G = Eigen::MatrixXd::NullaryExpr(J, data.dim(), [&] { return normal(rng); });
  return UpoeModel(linalg::orthonormalize_rows(G),
                   std::vector<experts::Expert>(J, cfg.expert_template));
}

// Parameters of a model as (W, unconstrained expert coordinates).
struct Point {
  linalg::Matrix W;
  std::vector<std::vector<double>> alpha;
};

Point point_of(const UpoeModel& m) {
  Point p{m.directions(), {}};
  for (const auto& e : m.experts()) p.alpha.push_back(experts::to_unconstrained(e));
  return p;
}

UpoeModel model_at(const UpoeModel& like, const Point& p) {
  std::vector<experts::Expert> es;
  for (std::size_t j = 0; j < p.alpha.size(); ++j) {
    es.push_back(experts::from_unconstrained(like.experts()[j], p.alpha[j]));
  }
  return UpoeModel(p.W, std::move(es), like.preprocessing());
}

}  // namespace

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::InvalidArgument, kComponent, what);
  };
  if (!(c.eta > 0)) fail("eta must be positive");
  if (!(c.gamma > 0)) fail("gamma must be positive");
  if (!(c.epsilon > 0)) fail("epsilon must be positive");
  if (!(c.tol > 0)) fail("tol must be positive");
  if (c.batch_size < 1) fail("batch size must be at least 1");
  if (c.max_iters < 0) fail("max_iters must be non-negative");
  experts::validate(c.expert_template);
}

experts::Rng rng_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return experts::Rng(seq);
}

linalg::Matrix grad_W(const UpoeModel& model, const Eigen::MatrixXd& batch) {
  if (batch.rows() == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "empty batch");
  if (batch.cols() != model.dim()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent, "batch and model dimensions differ");
  }
  const Eigen::Index J = model.num_experts();
  if (J == 0) return linalg::Matrix(0, model.dim());
  const Eigen::MatrixXd Z = batch * model.directions().transpose();
  Eigen::MatrixXd Ep(Z.rows(), J);
  for (Eigen::Index j = 0; j < J; ++j) Ep.col(j) = experts::energy_prime(model.experts()[j], Z.col(j));
  return model.basis().pinv.transpose() - Ep.transpose() * batch / static_cast<double>(batch.rows());
}

experts::StudentTGradient grad_alpha(const experts::StudentT& expert, experts::Samples z) {
  return experts::grad_params_loglik(expert, z);
}

double sphered_objective(const UpoeModel& model, const Eigen::MatrixXd& batch) {
  if (batch.rows() == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "empty batch");
  const Eigen::Index J = model.num_experts();
  const double noise_dims = static_cast<double>(model.dim() - J);
  double f = model.basis().log_det_gram - 0.5 * noise_dims * (std::log(2.0 * std::numbers::pi) + 1.0);
  if (J == 0) return f;
  const Eigen::MatrixXd Z = batch * model.directions().transpose();
  for (Eigen::Index j = 0; j < J; ++j) f += experts::mean_log_density(model.experts()[j], Z.col(j));
  return f;
}

std::pair<UpoeModel, TrainReport> train_parallel(const Dataset& data, Eigen::Index J,
                                                 const std::optional<UpoeModel>& init,
                                                 const TrainConfig& config,
                                                 const ParallelOptions& options) {
  validate(config);
  check_data(data, J);
  const Eigen::MatrixXd& X = data.values;
  const Dataset* test = options.test;
  if (test && test->dim() != data.dim()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent, "test and training dimensions differ");
  }
  if (options.frozen_rows < 0 || options.frozen_rows > J) {
    throw Error(ErrorCode::InvalidArgument, kComponent, "frozen rows exceed the expert count");
  }

  TrainReport report;
  const double sphering = preprocess::sphering_error(X);
  if (sphering > 1e-6) {
    report.warnings.push_back("training data is not exactly sphered (error " +
                              std::to_string(sphering) + "); gradients are approximate");
  }

  UpoeModel model(data.dim());
  if (init) {
    if (init->dim() != data.dim()) {
      throw Error(ErrorCode::DimensionMismatch, kComponent, "initial model and data dimensions differ");
    }
    if (init->num_experts() > J) {
      throw Error(ErrorCode::InvalidArgument, kComponent, "initial model has more than J experts");
    }
    model = *init;
    while (model.num_experts() < J) {
      const auto cand = sequential::search_direction(
          model, X, config, 1, static_cast<std::uint64_t>(model.num_experts()));
      model = model.add_expert(cand.w_hat, cand.expert);
    }
  } else {
    model = random_start(data, J, config);
  }

  const auto start = std::chrono::steady_clock::now();
  auto seconds = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  auto test_ll = [&](const UpoeModel& m) -> std::optional<double> {
    if (!test) return std::nullopt;
    return m.log_likelihood(*test);
  };

  double eta = config.eta;
  double gamma = config.gamma;
  double ll = model.log_likelihood(data);
  if (!std::isfinite(ll)) throw Error(ErrorCode::Diverged, kComponent, "initial log-likelihood is not finite");
  const double initial_ll = ll;
  report.iterations.push_back({0, ll, test_ll(model), eta, gamma, seconds()});
  if (J == options.frozen_rows) return {model, report};

  const Eigen::Index N = data.n();
  const Eigen::Index B = std::min(config.batch_size, N);
  std::vector<Eigen::Index> order(N);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  experts::Rng rng = rng_stream(config.seed, kShuffleStream, 0);

  for (int epoch = 1; epoch <= config.max_iters; ++epoch) {
    const UpoeModel before = model;
    const double ll_before = ll;
    if (B < N) std::shuffle(order.begin(), order.end(), rng);

    for (Eigen::Index lo = 0; lo < N; lo += B) {
      const Eigen::Index hi = std::min(lo + B, N);
      Eigen::MatrixXd batch(hi - lo, X.cols());
      for (Eigen::Index i = lo; i < hi; ++i) batch.row(i - lo) = X.row(order[i]);

      linalg::Matrix gW = grad_W(model, batch);
      gW.topRows(options.frozen_rows).setZero();
      const Eigen::MatrixXd Z = batch * model.directions().transpose();
      const Point here = point_of(model);
      std::vector<std::vector<double>> ga(J);
      for (Eigen::Index j = options.frozen_rows; j < J; ++j) {
        ga[j] = experts::grad_unconstrained(model.experts()[j], Z.col(j), config.mask);
      }
      const double f0 = sphered_objective(model, batch);

      // backtracking is local to the batch; the epoch step sizes adapt below
      double scale = 1.0;
      for (int k = 0; k < kMaxHalvings; ++k, scale *= 0.5) {
        Point next = here;
        next.W += scale * eta * gW;
        for (Eigen::Index j = options.frozen_rows; j < J; ++j) {
          for (std::size_t i = 0; i < ga[j].size(); ++i) next.alpha[j][i] += scale * gamma * ga[j][i];
        }
        std::optional<UpoeModel> cand;
        double f1 = std::nan("");
        try {
          cand = model_at(model, next);
          f1 = sphered_objective(*cand, batch);
        } catch (const Error&) {
          cand.reset();
        }
        if (!config.adaptive) {
          if (!cand || !std::isfinite(f1)) {
            throw Error(ErrorCode::Diverged, kComponent,
                        "non-finite objective at epoch " + std::to_string(epoch) +
                            "; reduce the step sizes");
          }
          model = *cand;
          break;
        }
        if (cand && std::isfinite(f1) && f1 >= f0) {
          model = *cand;
          break;
        }
      }
    }

    ll = model.log_likelihood(data);
    if (!config.adaptive && !(ll >= initial_ll - std::abs(initial_ll) - 1.0)) {
      // fixed steps cannot recover from a collapse; report it instead of stopping quietly
      throw Error(ErrorCode::Diverged, kComponent,
                  "log-likelihood fell from " + std::to_string(initial_ll) + " to " +
                      std::to_string(ll) + " at epoch " + std::to_string(epoch) +
                      "; reduce the step sizes");
    }
    if (!std::isfinite(ll)) ll = -std::numeric_limits<double>::infinity();
    bool reverted = false;
    if (config.adaptive) {
      if (ll < ll_before) {
        model = before;
        ll = ll_before;
        eta *= 0.5;
        gamma *= 0.5;
        reverted = true;
      } else {
        eta *= 1.1;
        gamma *= 1.1;
      }
    }
    report.iterations.push_back({epoch, ll, test_ll(model), eta, gamma, seconds()});
    if (!reverted && ll - ll_before < config.tol) break;
    if (eta < kMinStep && gamma < kMinStep) break;
  }
  return {model, report};
}

std::pair<std::vector<UpoeModel>, TrainReport> train_growing(const Dataset& data, Eigen::Index J,
                                                             Growth growth,
                                                             const TrainConfig& config,
                                                             int restarts, const Dataset* test) {
  validate(config);
  check_data(data, J);
  std::vector<UpoeModel> models;
  TrainReport report;
  UpoeModel model(data.dim());
  int iteration = 0;
  for (Eigen::Index j = 1; j <= J; ++j) {
    const auto cand = sequential::search_direction(model, data.values, config, restarts,
                                                   static_cast<std::uint64_t>(j - 1));
    const UpoeModel start = model.add_expert(cand.w_hat, cand.expert);
    ParallelOptions options;
    options.frozen_rows = growth == Growth::FrozenSequential ? j - 1 : 0;
    options.test = test;
    auto [trained, rep] = train_parallel(data, j, start, config, options);
    if (report.warnings.empty()) report.warnings = rep.warnings;
    for (auto r : rep.iterations) {
      r.iteration = iteration++;
      report.iterations.push_back(r);
    }
    const double ll = trained.log_likelihood(data);
    report.experts.push_back({static_cast<int>(j), cand.restart, cand.index.q, ll,
                              test ? std::optional<double>(trained.log_likelihood(*test)) : std::nullopt});
    model = trained;
    models.push_back(std::move(trained));
  }
  return {models, report};
}

}  // namespace upoe::parallel
