#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>

#include "upoe/dataset.hpp"
#include "upoe/experts.hpp"
#include "upoe/model.hpp"
#include "upoe/parallel_trainer.hpp"
#include "upoe/train_report.hpp"

namespace upoe::sequential {

/// Change in KL(data || model) from adding one expert along a unit direction:
///   q = energy_term + log_normalizer + constant
///     = <E(w^T x) - (w^T x)^2 / 2> + log Z - log(2 pi) / 2.
/// Negative values mean the direction is worth adding.
struct ProjectionIndexValue {
  double q = 0.0;
  double energy_term = 0.0;
  double log_normalizer = 0.0;
  double constant = 0.0;
};

struct SequentialConfig {
  Eigen::Index max_experts = 1;
  parallel::TrainConfig inner{};
  int restarts = 5;
  bool stop_on_nonnegative_q = true;
  /// Accept a candidate only when q < -noise_floor.
  double noise_floor = 0.0;
  /// Also stop when the candidate's q on the test set is >= 0.
  bool holdout_stop = false;
};

ProjectionIndexValue projection_index(const Eigen::VectorXd& w_hat, const experts::Expert& expert,
                                      const Eigen::MatrixXd& X);

/// <(E'(w^T x) - w^T x) x> over the rows of X.
Eigen::VectorXd grad_q_direction(const Eigen::VectorXd& w_hat, const experts::Expert& expert,
                                 const Eigen::MatrixXd& X);

/// Gradient of q with respect to (mu, theta, beta).
experts::StudentTGradient grad_q_params(const Eigen::VectorXd& w_hat,
                                        const experts::StudentT& expert,
                                        const Eigen::MatrixXd& X);

/// Raises the mean log-density of the expert on z over its unfrozen
/// parameters until the gain per sweep drops below `tol`. Student-t experts
/// use Newton steps; mixtures use EM/IRLS sweeps with a gradient step.
experts::Expert fit_expert(const experts::Expert& expert, experts::Samples z,
                           const parallel::TrainConfig& config, int max_iters = 1000,
                           double tol = 1e-9);

struct DirectionFit {
  Eigen::VectorXd w_hat;
  experts::Expert expert;
  ProjectionIndexValue index;
  int restart = 0;
};

/// Best candidate over `restarts` random unit starts orthogonal to the row
/// span of `model`, alternating direction steps (re-orthonormalized after
/// each) and expert steps, then refitting the expert. Never throws on q >= 0.
DirectionFit search_direction(const UpoeModel& model, const Eigen::MatrixXd& X,
                              const parallel::TrainConfig& config, int restarts,
                              std::uint64_t stream);

/// search_direction with the model's expert count as the stream; throws
/// NoUsefulDirection when the best q is >= 0.
DirectionFit fit_direction(const UpoeModel& model, const Dataset& data,
                           const SequentialConfig& config);

/// Greedy growth from the standard normal: add the best direction and its
/// expert until max_experts or the stopping rule fires.
std::pair<UpoeModel, TrainReport> train_sequential(const Dataset& data,
                                                   const SequentialConfig& config,
                                                   const Dataset* test = nullptr);

/// Largest -q found by search_direction on `trials` standard-normal datasets
/// of the given shape: a threshold for q below which structure is real.
double calibrate_noise_floor(Eigen::Index n, Eigen::Index dim, const SequentialConfig& config,
                             int trials, std::uint64_t seed);

}  // namespace upoe::sequential
