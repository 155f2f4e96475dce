#pragma once

#include <Eigen/Dense>
#include <random>
#include <string_view>
#include <variant>
#include <vector>

namespace upoe::experts {

using Samples = Eigen::Ref<const Eigen::VectorXd>;
using Rng = std::mt19937_64;

/// Unit normal expert; adding it to a model changes nothing.
struct GaussianUnit {
  bool operator==(const GaussianUnit&) const = default;
};

/// Generalized Student-t
///   T(z) = Gamma(beta) theta / (Gamma(beta - 1/2) sqrt(2 pi)) (1 + (theta (z - mu))^2 / 2)^-beta
/// with theta > 0 an inverse scale and beta > 1/2 an inverse temperature.
struct StudentT {
  double mu = 0.0;
  double theta = 1.0;
  double beta = 2.0;
  bool operator==(const StudentT&) const = default;
};

/// sum_a weights[a] * StudentT(components[a]).
struct MixtureT {
  std::vector<StudentT> components;
  std::vector<double> weights;
  bool operator==(const MixtureT&) const = default;
};

using Expert = std::variant<GaussianUnit, StudentT, MixtureT>;

/// Parameters held fixed during fitting. `mu`/`theta`/`beta` apply to every
/// Student-t component; `weights` only to mixtures.
struct FreezeMask {
  bool mu = false;
  bool theta = false;
  bool beta = false;
  bool weights = false;
};

/// Throws InvalidArgument when an expert's invariants are violated.
void validate(const Expert& expert);

std::string_view kind_name(const Expert& expert);

// --- densities -------------------------------------------------------------

double log_density(const Expert& expert, double z);
Eigen::VectorXd log_density(const Expert& expert, Samples z);
double mean_log_density(const Expert& expert, Samples z);

/// log Z of T = exp(-E) / Z. Depends only on the expert parameters, never on
/// a projection direction. Mixtures use Z = 1, E = -log T.
double log_normalizer(const Expert& expert);

double energy(const Expert& expert, double z);
double energy_prime(const Expert& expert, double z);
Eigen::VectorXd energy(const Expert& expert, Samples z);
Eigen::VectorXd energy_prime(const Expert& expert, Samples z);

// --- Student-t specifics ----------------------------------------------------

struct StudentTGradient {
  double mu = 0.0;
  double theta = 0.0;
  double beta = 0.0;
};

/// Gradient of the mean log-density over `z` with respect to (mu, theta, beta).
StudentTGradient grad_params_loglik(const StudentT& params, Samples z);

/// 1 / (theta^2 (beta - 3/2)); OutOfDomain for beta <= 3/2.
double variance(const StudentT& params);
/// 3 / (beta - 5/2); OutOfDomain for beta <= 5/2.
double excess_kurtosis(const StudentT& params);

/// Student-t whose variance is 1 for the given beta (beta > 3/2).
StudentT unit_variance_student_t(double beta);

// --- sampling ---------------------------------------------------------------

double sample(const Expert& expert, Rng& rng);
Eigen::VectorXd sample(const Expert& expert, Eigen::Index n, Rng& rng);

// --- unconstrained coordinates ----------------------------------------------
//
// Student-t: (mu, t, b) with theta = softplus(t), beta = 1/2 + softplus(b).
// Mixture: the component triples in order, then log-weights (softmax).
// Gaussian unit: no parameters.

std::vector<double> to_unconstrained(const Expert& expert);
Expert from_unconstrained(const Expert& like, const std::vector<double>& params);

/// Gradient of the mean log-density with respect to the unconstrained
/// coordinates; frozen entries are zero.
std::vector<double> grad_unconstrained(const Expert& expert, Samples z,
                                       const FreezeMask& mask = {});

// --- mixture fitting --------------------------------------------------------

struct MixtureFitState {
  Eigen::MatrixXd responsibilities;  // N x A, rows sum to 1
  Eigen::MatrixXd irls_weights;      // N x A
};

struct EmOptions {
  double step = 0.1;
  FreezeMask mask{};
  /// Also take gradient steps on mu and theta (otherwise left to irls_step).
  bool gradient_location_scale = false;
};

struct EmResult {
  MixtureT params;
  MixtureFitState state;
};

/// Responsibilities r_an; rows whose total density underflows fall back to uniform.
Eigen::MatrixXd responsibilities(const MixtureT& mixture, Samples z);

/// One EM step: responsibilities, weight update and a gradient step of size
/// `step` on each component's unconstrained beta (plus mu, theta when
/// requested). The step is halved until the responsibility-weighted
/// component log-likelihood does not decrease.
EmResult em_step(const MixtureT& mixture, Samples z, const EmOptions& options = {});

/// Reweighted updates of each component's mu and theta^2 given the state's
/// responsibilities. Throws SingularUpdate when a component is starved.
MixtureT irls_step(const MixtureT& mixture, Samples z, const MixtureFitState& state,
                   const FreezeMask& mask = {});

struct MixtureFitOptions {
  int max_iters = 500;
  double tol = 1e-10;
  EmOptions em{};
};

/// Alternates em_step and irls_step; returns the fitted mixture and the mean
/// log-density after every outer iteration (entry 0 is the starting value).
std::pair<MixtureT, std::vector<double>> fit_mixture(const MixtureT& init, Samples z,
                                                     const MixtureFitOptions& options = {});

struct StudentTFitOptions {
  int max_iters = 200;
  double tol = 1e-13;
  FreezeMask mask{};
  /// Upper bound on beta; the family approaches the Gaussian as beta grows.
  double max_beta = 1e6;
};

/// Maximum-likelihood fit of a single Student-t by damped Newton steps in
/// the coordinates (mu, log kappa, log(beta - 1/2)) with theta = kappa / sqrt(beta),
/// which keep the scale well conditioned as beta grows. Each accepted step
/// raises the mean log-density.
StudentT fit_student_t(const StudentT& init, Samples z, const StudentTFitOptions& options = {});

}  // namespace upoe::experts
