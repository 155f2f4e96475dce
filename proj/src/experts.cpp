#include "upoe/experts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "upoe/error.hpp"
#include "upoe/special.hpp"

namespace upoe::experts {
namespace {

constexpr std::string_view kComponent = "experts";
constexpr double kHalfLog2Pi = 0.91893853320467274178;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void validate_t(const StudentT& p) {
  if (!std::isfinite(p.mu) || !(p.theta > 0.0) || !std::isfinite(p.theta) || !(p.beta > 0.5) ||
      !std::isfinite(p.beta)) {
    throw Error(ErrorCode::InvalidArgument, kComponent,
                "student-t requires theta > 0, beta > 1/2 (mu=" + std::to_string(p.mu) +
                    ", theta=" + std::to_string(p.theta) + ", beta=" + std::to_string(p.beta) + ")");
  }
}

// log of Gamma(beta) theta / (Gamma(beta - 1/2) sqrt(2 pi))
double t_log_peak(const StudentT& p) {
  return special::log_gamma(p.beta) - special::log_gamma(p.beta - 0.5) + std::log(p.theta) -
         kHalfLog2Pi;
}

double t_log_kernel(const StudentT& p, double z) {
  const double u = p.theta * (z - p.mu);
  return -p.beta * std::log1p(0.5 * u * u);
}

double t_energy_prime(const StudentT& p, double z) {
  const double d = z - p.mu;
  const double u = p.theta * d;
  return p.beta * p.theta * p.theta * d / (1.0 + 0.5 * u * u);
}

// log pi_a + log T_a(z_n), N x A
Eigen::MatrixXd joint_log(const MixtureT& m, Samples z) {
  const Eigen::Index N = z.size();
  const Eigen::Index A = static_cast<Eigen::Index>(m.components.size());
  Eigen::MatrixXd out(N, A);
  for (Eigen::Index a = 0; a < A; ++a) {
    const StudentT& c = m.components[a];
    const double base = std::log(m.weights[a]) + t_log_peak(c);
    for (Eigen::Index n = 0; n < N; ++n) out(n, a) = base + t_log_kernel(c, z(n));
  }
  return out;
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double mx = row.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((row.array() - mx).exp().sum());
}

// Responsibility-weighted sum of log T_a for one component.
double weighted_component_loglik(const StudentT& c, Samples z, const Eigen::VectorXd& r) {
  const double peak = t_log_peak(c);
  double acc = 0.0;
  for (Eigen::Index n = 0; n < z.size(); ++n) acc += r(n) * (peak + t_log_kernel(c, z(n)));
  return acc;
}

// Weighted gradient of sum_n r_n log T(z_n) in natural coordinates, divided by N.
StudentTGradient weighted_t_gradient(const StudentT& p, Samples z, const Eigen::VectorXd& r) {
  const double N = static_cast<double>(z.size());
  double g_mu = 0.0, g_theta = 0.0, g_log = 0.0, rsum = 0.0;
  for (Eigen::Index n = 0; n < z.size(); ++n) {
    const double d = z(n) - p.mu;
    const double u = p.theta * d;
    const double q = 1.0 + 0.5 * u * u;
    g_mu += r(n) * p.beta * p.theta * p.theta * d / q;
    g_theta += r(n) * p.beta * p.theta * d * d / q;
    g_log += r(n) * std::log1p(0.5 * u * u);
    rsum += r(n);
  }
  const double dpsi = special::digamma(p.beta) - special::digamma(p.beta - 0.5);
  return {g_mu / N, (rsum / p.theta - g_theta) / N, (rsum * dpsi - g_log) / N};
}

std::vector<double> t_unconstrained(const StudentT& p) {
  return {p.mu, special::softplus_inverse(p.theta), special::softplus_inverse(p.beta - 0.5)};
}

StudentT t_from_unconstrained(const double* v) {
  return {v[0], special::softplus(v[1]), 0.5 + special::softplus(v[2])};
}

std::vector<double> t_chain(const StudentT& p, const StudentTGradient& g, const FreezeMask& mask) {
  const double t = special::softplus_inverse(p.theta);
  const double b = special::softplus_inverse(p.beta - 0.5);
  return {mask.mu ? 0.0 : g.mu, mask.theta ? 0.0 : g.theta * special::sigmoid(t),
          mask.beta ? 0.0 : g.beta * special::sigmoid(b)};
}

}  // namespace

void validate(const Expert& expert) {
  std::visit(Overloaded{
                 [](const GaussianUnit&) {},
                 [](const StudentT& p) { validate_t(p); },
                 [](const MixtureT& m) {
                   if (m.components.empty() || m.components.size() != m.weights.size()) {
                     throw Error(ErrorCode::InvalidArgument, kComponent,
                                 "mixture needs >= 1 component and one weight per component");
                   }
                   double total = 0.0;
                   for (std::size_t a = 0; a < m.components.size(); ++a) {
                     validate_t(m.components[a]);
                     if (!(m.weights[a] >= 0.0)) {
                       throw Error(ErrorCode::InvalidArgument, kComponent,
                                   "negative mixture weight");
                     }
                     total += m.weights[a];
                   }
                   if (std::abs(total - 1.0) > 1e-12) {
                     throw Error(ErrorCode::InvalidArgument, kComponent,
                                 "mixture weights sum to " + std::to_string(total));
                   }
                 },
             },
             expert);
}

std::string_view kind_name(const Expert& expert) {
  return std::visit(Overloaded{
                        [](const GaussianUnit&) { return std::string_view("gaussian_unit"); },
                        [](const StudentT&) { return std::string_view("student_t"); },
                        [](const MixtureT&) { return std::string_view("mixture_t"); },
                    },
                    expert);
}

double log_density(const Expert& expert, double z) {
  Eigen::VectorXd v(1);
  v(0) = z;
  return log_density(expert, v)(0);
}

Eigen::VectorXd log_density(const Expert& expert, Samples z) {
  return std::visit(
      Overloaded{
          [&](const GaussianUnit&) -> Eigen::VectorXd {
            return (-0.5 * z.array().square() - kHalfLog2Pi).matrix();
          },
          [&](const StudentT& p) -> Eigen::VectorXd {
            const double peak = t_log_peak(p);
            Eigen::VectorXd out(z.size());
            for (Eigen::Index n = 0; n < z.size(); ++n) out(n) = peak + t_log_kernel(p, z(n));
            return out;
          },
          [&](const MixtureT& m) -> Eigen::VectorXd {
            const Eigen::MatrixXd jl = joint_log(m, z);
            Eigen::VectorXd out(z.size());
            for (Eigen::Index n = 0; n < z.size(); ++n) out(n) = log_sum_exp(jl.row(n));
            return out;
          },
      },
      expert);
}

double mean_log_density(const Expert& expert, Samples z) {
  if (z.size() == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "no samples");
  return log_density(expert, z).mean();
}

double log_normalizer(const Expert& expert) {
  return std::visit(Overloaded{
                        [](const GaussianUnit&) { return kHalfLog2Pi; },
                        [](const StudentT& p) { return -t_log_peak(p); },
                        [](const MixtureT&) { return 0.0; },
                    },
                    expert);
}

double energy(const Expert& expert, double z) {
  Eigen::VectorXd v(1);
  v(0) = z;
  return energy(expert, v)(0);
}

Eigen::VectorXd energy(const Expert& expert, Samples z) {
  return std::visit(
      Overloaded{
          [&](const GaussianUnit&) -> Eigen::VectorXd { return (0.5 * z.array().square()).matrix(); },
          [&](const StudentT& p) -> Eigen::VectorXd {
            Eigen::VectorXd out(z.size());
            for (Eigen::Index n = 0; n < z.size(); ++n) out(n) = -t_log_kernel(p, z(n));
            return out;
          },
          [&](const MixtureT&) -> Eigen::VectorXd { return -log_density(expert, z); },
      },
      expert);
}

double energy_prime(const Expert& expert, double z) {
  Eigen::VectorXd v(1);
  v(0) = z;
  return energy_prime(expert, v)(0);
}

Eigen::VectorXd energy_prime(const Expert& expert, Samples z) {
  return std::visit(
      Overloaded{
          [&](const GaussianUnit&) -> Eigen::VectorXd { return z; },
          [&](const StudentT& p) -> Eigen::VectorXd {
            Eigen::VectorXd out(z.size());
            for (Eigen::Index n = 0; n < z.size(); ++n) out(n) = t_energy_prime(p, z(n));
            return out;
          },
          [&](const MixtureT& m) -> Eigen::VectorXd {
            // d/dz (-log sum_a pi_a T_a) = sum_a r_a E_a'
            const Eigen::MatrixXd r = responsibilities(m, z);
            Eigen::VectorXd out = Eigen::VectorXd::Zero(z.size());
            for (std::size_t a = 0; a < m.components.size(); ++a) {
              const Eigen::Index ai = static_cast<Eigen::Index>(a);
              for (Eigen::Index n = 0; n < z.size(); ++n) {
                out(n) += r(n, ai) * t_energy_prime(m.components[a], z(n));
              }
            }
            return out;
          },
      },
      expert);
}

StudentTGradient grad_params_loglik(const StudentT& params, Samples z) {
  if (z.size() == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "no samples");
  return weighted_t_gradient(params, z, Eigen::VectorXd::Ones(z.size()));
}

double variance(const StudentT& params) {
  if (!(params.beta > 1.5)) {
    throw Error(ErrorCode::OutOfDomain, kComponent, "variance requires beta > 3/2");
  }
  return 1.0 / (params.theta * params.theta * (params.beta - 1.5));
}

double excess_kurtosis(const StudentT& params) {
  if (!(params.beta > 2.5)) {
    throw Error(ErrorCode::OutOfDomain, kComponent, "excess kurtosis requires beta > 5/2");
  }
  return 3.0 / (params.beta - 2.5);
}

StudentT unit_variance_student_t(double beta) {
  if (!(beta > 1.5)) throw Error(ErrorCode::OutOfDomain, kComponent, "beta must exceed 3/2");
  return {0.0, 1.0 / std::sqrt(beta - 1.5), beta};
}

double sample(const Expert& expert, Rng& rng) {
  return std::visit(
      Overloaded{
          [&](const GaussianUnit&) { return std::normal_distribution<double>(0.0, 1.0)(rng); },
          [&](const StudentT& p) {
            // precision ~ Gamma(shape beta - 1/2, scale theta^2), then z ~ N(mu, 1/precision)
            const double precision =
                std::gamma_distribution<double>(p.beta - 0.5, p.theta * p.theta)(rng);
            return p.mu + std::normal_distribution<double>(0.0, 1.0)(rng) / std::sqrt(precision);
          },
          [&](const MixtureT& m) {
            const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            std::size_t a = 0;
            double acc = m.weights[0];
            while (u >= acc && a + 1 < m.components.size()) acc += m.weights[++a];
            return sample(Expert{m.components[a]}, rng);
          },
      },
      expert);
}

Eigen::VectorXd sample(const Expert& expert, Eigen::Index n, Rng& rng) {
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = sample(expert, rng);
  return out;
}

std::vector<double> to_unconstrained(const Expert& expert) {
  return std::visit(Overloaded{
                        [](const GaussianUnit&) { return std::vector<double>{}; },
                        [](const StudentT& p) { return t_unconstrained(p); },
                        [](const MixtureT& m) {
                          std::vector<double> out;
                          for (const auto& c : m.components) {
                            const auto v = t_unconstrained(c);
                            out.insert(out.end(), v.begin(), v.end());
                          }
                          for (double w : m.weights) out.push_back(std::log(std::max(w, 1e-300)));
                          return out;
                        },
                    },
                    expert);
}

Expert from_unconstrained(const Expert& like, const std::vector<double>& params) {
  if (params.size() != to_unconstrained(like).size()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent, "parameter vector size");
  }
  return std::visit(Overloaded{
                        [](const GaussianUnit& g) -> Expert { return g; },
                        [&](const StudentT&) -> Expert { return t_from_unconstrained(params.data()); },
                        [&](const MixtureT& m) -> Expert {
                          const std::size_t A = m.components.size();
                          MixtureT out;
                          for (std::size_t a = 0; a < A; ++a) {
                            out.components.push_back(t_from_unconstrained(params.data() + 3 * a));
                          }
                          const auto logits = params.begin() + static_cast<std::ptrdiff_t>(3 * A);
                          const double mx = *std::max_element(logits, params.end());
                          double total = 0.0;
                          for (auto it = logits; it != params.end(); ++it) {
                            out.weights.push_back(std::exp(*it - mx));
                            total += out.weights.back();
                          }
                          for (double& w : out.weights) w /= total;
                          return out;
                        },
                    },
                    like);
}

std::vector<double> grad_unconstrained(const Expert& expert, Samples z, const FreezeMask& mask) {
  if (z.size() == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "no samples");
  return std::visit(
      Overloaded{
          [](const GaussianUnit&) { return std::vector<double>{}; },
          [&](const StudentT& p) { return t_chain(p, grad_params_loglik(p, z), mask); },
          [&](const MixtureT& m) {
            const Eigen::MatrixXd r = responsibilities(m, z);
            std::vector<double> out;
            for (std::size_t a = 0; a < m.components.size(); ++a) {
              const Eigen::VectorXd ra = r.col(static_cast<Eigen::Index>(a));
              const auto g = t_chain(m.components[a],
                                     weighted_t_gradient(m.components[a], z, ra), mask);
              out.insert(out.end(), g.begin(), g.end());
            }
            const Eigen::VectorXd rbar = r.colwise().mean().transpose();
            for (std::size_t a = 0; a < m.components.size(); ++a) {
              out.push_back(mask.weights ? 0.0 : rbar(static_cast<Eigen::Index>(a)) - m.weights[a]);
            }
            return out;
          },
      },
      expert);
}

Eigen::MatrixXd responsibilities(const MixtureT& mixture, Samples z) {
  const Eigen::Index A = static_cast<Eigen::Index>(mixture.components.size());
  Eigen::MatrixXd r = joint_log(mixture, z);
  for (Eigen::Index n = 0; n < r.rows(); ++n) {
    const double lse = log_sum_exp(r.row(n));
    if (!std::isfinite(lse)) {
      r.row(n).setConstant(1.0 / static_cast<double>(A));
      continue;
    }
    r.row(n) = (r.row(n).array() - lse).exp();
    r.row(n) /= r.row(n).sum();
  }
  return r;
}

EmResult em_step(const MixtureT& mixture, Samples z, const EmOptions& options) {
  validate(mixture);
  if (z.size() == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "no samples");
  const double N = static_cast<double>(z.size());
  EmResult out;
  out.state.responsibilities = responsibilities(mixture, z);
  const Eigen::MatrixXd& r = out.state.responsibilities;
  out.params = mixture;

  if (!options.mask.weights) {
    const Eigen::VectorXd rbar = r.colwise().sum().transpose() / N;
    for (std::size_t a = 0; a < mixture.components.size(); ++a) {
      out.params.weights[a] = rbar(static_cast<Eigen::Index>(a));
    }
    const double total = std::accumulate(out.params.weights.begin(), out.params.weights.end(), 0.0);
    for (double& w : out.params.weights) w /= total;
  }

  FreezeMask step_mask = options.mask;
  if (!options.gradient_location_scale) {
    step_mask.mu = true;
    step_mask.theta = true;
  }
  for (std::size_t a = 0; a < mixture.components.size(); ++a) {
    const Eigen::VectorXd ra = r.col(static_cast<Eigen::Index>(a));
    const StudentT& current = mixture.components[a];
    const auto g = t_chain(current, weighted_t_gradient(current, z, ra), step_mask);
    if (g[0] == 0.0 && g[1] == 0.0 && g[2] == 0.0) continue;
    const auto u = t_unconstrained(current);
    const double base = weighted_component_loglik(current, z, ra);
    double step = options.step;
    for (int halving = 0; halving < 40; ++halving, step *= 0.5) {
      const double v[3] = {u[0] + step * g[0], u[1] + step * g[1], u[2] + step * g[2]};
      const StudentT proposal = t_from_unconstrained(v);
      if (weighted_component_loglik(proposal, z, ra) >= base) {
        out.params.components[a] = proposal;
        break;
      }
    }
  }

  out.state.irls_weights.resize(r.rows(), r.cols());
  for (std::size_t a = 0; a < mixture.components.size(); ++a) {
    const StudentT& c = out.params.components[a];
    const Eigen::Index ai = static_cast<Eigen::Index>(a);
    for (Eigen::Index n = 0; n < z.size(); ++n) {
      const double u = c.theta * (z(n) - c.mu);
      out.state.irls_weights(n, ai) = r(n, ai) / (1.0 + 0.5 * u * u);
    }
  }
  return out;
}

MixtureT irls_step(const MixtureT& mixture, Samples z, const MixtureFitState& state,
                   const FreezeMask& mask) {
  validate(mixture);
  const Eigen::MatrixXd& r = state.responsibilities;
  if (r.rows() != z.size() || r.cols() != static_cast<Eigen::Index>(mixture.components.size())) {
    throw Error(ErrorCode::DimensionMismatch, kComponent, "fit state does not match samples");
  }
  MixtureT out = mixture;
  for (std::size_t a = 0; a < mixture.components.size(); ++a) {
    const StudentT& c = mixture.components[a];
    const Eigen::Index ai = static_cast<Eigen::Index>(a);
    Eigen::VectorXd w(z.size());
    for (Eigen::Index n = 0; n < z.size(); ++n) {
      const double u = c.theta * (z(n) - c.mu);
      w(n) = r(n, ai) / (1.0 + 0.5 * u * u);
    }
    const double wsum = w.sum();
    if (!(wsum >= 1e-12)) {
      throw Error(ErrorCode::SingularUpdate, kComponent,
                  "component " + std::to_string(a) + " has total IRLS weight " + std::to_string(wsum));
    }
    double mu = c.mu;
    if (!mask.mu) mu = w.dot(z) / wsum;
    if (!mask.theta) {
      const double spread = (w.array() * (z.array() - mu).square()).sum();
      if (!(spread > 0.0)) {
        throw Error(ErrorCode::SingularUpdate, kComponent,
                    "component " + std::to_string(a) + " has zero weighted spread");
      }
      // theta^2 = N pi_a / (beta_a sum_n w_an (z_n - mu_a)^2), with N pi_a = sum_n r_an
      out.components[a].theta = std::sqrt(r.col(ai).sum() / (c.beta * spread));
    }
    out.components[a].mu = mu;
  }
  return out;
}

std::pair<MixtureT, std::vector<double>> fit_mixture(const MixtureT& init, Samples z,
                                                     const MixtureFitOptions& options) {
  MixtureT current = init;
  std::vector<double> trace{mean_log_density(current, z)};
  for (int it = 0; it < options.max_iters; ++it) {
    const EmResult em = em_step(current, z, options.em);
    current = irls_step(em.params, z, em.state, options.em.mask);
    trace.push_back(mean_log_density(current, z));
    if (std::abs(trace.back() - trace[trace.size() - 2]) < options.tol) break;
  }
  return {current, trace};
}

namespace {

// Free fitting coordinates of a Student-t under a freeze mask.
struct TCoords {
  FreezeMask mask;
  StudentT fixed;
  double max_log_beta;

  bool coupled() const { return !mask.theta && !mask.beta; }
  Eigen::Index size() const { return !mask.mu + !mask.theta + !mask.beta; }

  StudentT at(const Eigen::VectorXd& u) const {
    StudentT p = fixed;
    Eigen::Index i = 0;
    if (!mask.mu) p.mu = u(i++);
    const Eigen::Index scale = mask.theta ? -1 : i++;
    if (!mask.beta) p.beta = 0.5 + std::exp(std::clamp(u(i++), -30.0, max_log_beta));
    if (scale >= 0) p.theta = std::exp(u(scale)) / (coupled() ? std::sqrt(p.beta) : 1.0);
    return p;
  }

  Eigen::VectorXd of(const StudentT& p) const {
    Eigen::VectorXd u(size());
    Eigen::Index i = 0;
    if (!mask.mu) u(i++) = p.mu;
    if (!mask.theta) u(i++) = std::log(p.theta * (coupled() ? std::sqrt(p.beta) : 1.0));
    if (!mask.beta) u(i++) = std::min(std::log(p.beta - 0.5), max_log_beta);
    return u;
  }

  Eigen::VectorXd grad(const StudentT& p, Samples z) const {
    const StudentTGradient g = grad_params_loglik(p, z);
    Eigen::VectorXd out(size());
    Eigen::Index i = 0;
    if (!mask.mu) out(i++) = g.mu;
    if (!mask.theta) out(i++) = p.theta * g.theta;
    if (!mask.beta) {
      const double via_theta = coupled() ? -g.theta * p.theta / (2.0 * p.beta) : 0.0;
      out(i++) = (p.beta - 0.5) * (g.beta + via_theta);
    }
    return out;
  }
};

}  // namespace

StudentT fit_student_t(const StudentT& init, Samples z, const StudentTFitOptions& options) {
  if (z.size() == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "no samples");
  validate(init);
  const TCoords c{options.mask, init, std::log(options.max_beta - 0.5)};
  const Eigen::Index n = c.size();
  if (n == 0) return init;

  Eigen::VectorXd u = c.of(init);
  StudentT cur = c.at(u);
  double f = mean_log_density(cur, z);
  constexpr double h = 1e-5;
  for (int it = 0; it < options.max_iters; ++it) {
    const Eigen::VectorXd g = c.grad(cur, z);
    if (!g.allFinite() || g.norm() < 1e-14) break;
    Eigen::MatrixXd H(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
      Eigen::VectorXd up = u, dn = u;
      up(k) += h;
      dn(k) -= h;
      H.col(k) = (c.grad(c.at(up), z) - c.grad(c.at(dn), z)) / (2 * h);
    }
    H = 0.5 * (H + H.transpose()).eval();
    // ascent direction from |-H| (saddle-free Newton)
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(-H);
    Eigen::VectorXd inv = eig.eigenvalues().cwiseAbs().cwiseMax(1e-8).cwiseInverse();
    if (!inv.allFinite()) inv.setOnes();
    const Eigen::VectorXd d =
        eig.eigenvectors() * inv.asDiagonal() * (eig.eigenvectors().transpose() * g);

    bool accepted = false;
    double step = 1.0;
    for (int k = 0; k < 50 && !accepted; ++k, step *= 0.5) {
      const Eigen::VectorXd trial = u + step * d;
      const StudentT p = c.at(trial);
      const double ft = mean_log_density(p, z);
      if (std::isfinite(ft) && ft > f) {
        const double gain = ft - f;
        u = c.of(p);
        cur = p;
        f = ft;
        accepted = true;
        if (gain < options.tol) return cur;
      }
    }
    if (!accepted) break;
  }
  return cur;
}

}  // namespace upoe::experts
