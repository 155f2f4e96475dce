#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "upoe/dataset.hpp"
#include "upoe/experts.hpp"
#include "upoe/model.hpp"
#include "upoe/train_report.hpp"

namespace upoe::parallel {

struct TrainConfig {
  double eta = 0.1;      // direction step size
  double gamma = 0.1;    // expert parameter step size
  double epsilon = 0.1;  // EM gradient step for mixture inverse temperatures
  Eigen::Index batch_size = 100;  // >= N means full batch
  int max_iters = 200;            // epochs
  double tol = 1e-8;              // stop when the epoch log-likelihood gain is below this
  std::uint64_t seed = 0;
  bool adaptive = true;
  /// Initial parameters of every new expert.
  experts::Expert expert_template = experts::StudentT{0.0, 1.0, 2.0};
  experts::FreezeMask mask{};
};

/// Throws InvalidArgument unless eta, gamma, epsilon, tol > 0 and batch_size >= 1.
void validate(const TrainConfig& config);

/// Independent generator for stream `a`/`b` of a master seed.
experts::Rng rng_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Gradient of the mean log-likelihood with respect to W on a batch,
/// W#^T - <E'(Wx) x^T>. Exact for the full objective on sphered data.
linalg::Matrix grad_W(const UpoeModel& model, const Eigen::MatrixXd& batch);

/// Gradient of the mean log-density of one expert with respect to (mu, theta, beta).
experts::StudentTGradient grad_alpha(const experts::StudentT& expert, experts::Samples z);

/// Mean log-likelihood with the complement term replaced by its value on
/// exactly sphered data. Equals the log-likelihood on the sphered training set
/// and has grad_W as its exact gradient on any batch.
double sphered_objective(const UpoeModel& model, const Eigen::MatrixXd& batch);

struct ParallelOptions {
  /// Rows (and their experts) below this index are held fixed.
  Eigen::Index frozen_rows = 0;
  const Dataset* test = nullptr;
};

/// Gradient ascent on the log-likelihood over mini-batches, all directions and
/// expert parameters updated together. Starts from `init` when given (extra
/// rows are appended by direction search when init has fewer than J), else
/// from random orthonormal rows. Throws Diverged on a non-finite objective, or when
/// fixed-step training drops the log-likelihood more than |L0| + 1 below its start L0.
std::pair<UpoeModel, TrainReport> train_parallel(const Dataset& data, Eigen::Index J,
                                                 const std::optional<UpoeModel>& init,
                                                 const TrainConfig& config,
                                                 const ParallelOptions& options = {});

enum class Growth {
  /// Every row keeps training after a new one is added.
  Parallel,
  /// Earlier rows and experts stay fixed; only the newest is trained.
  FrozenSequential,
};

/// Grows a model from 1 to J rows; each new row starts at the best
/// projection-index direction orthogonal to the current rows, with `restarts`
/// random starts. Returns the trained model for every size (index J-1).
std::pair<std::vector<UpoeModel>, TrainReport> train_growing(const Dataset& data, Eigen::Index J,
                                                             Growth growth,
                                                             const TrainConfig& config,
                                                             int restarts,
                                                             const Dataset* test = nullptr);

}  // namespace upoe::parallel
