#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "upoe/stats.hpp"

using namespace upoe;

namespace {

// The same deterministic sequences were fed to the `diptest` Python package
// (allow_zero=False) to produce the expected values below.
struct Sequences {
  std::vector<double> uniform, normal, bimodal, mix;
};

Sequences make_sequences(int n) {
  Sequences s;
  for (int i = 1; i <= n; ++i) {
    const double u = std::fmod(i * 0.6180339887498949, 1.0);
    const double v = std::fmod(i * 0.7548776662466927, 1.0);
    const double g = std::sqrt(-2 * std::log(u)) * std::cos(2 * std::numbers::pi * v);
    s.uniform.push_back(u);
    s.normal.push_back(g);
    s.bimodal.push_back(u < 0.5 ? u * 0.6 : 2 + u * 0.6);
    s.mix.push_back(g + (v < 0.3 ? 3.0 : 0.0));
  }
  return s;
}

}  // namespace

TEST_CASE("dip statistic matches the reference implementation") {
  const Sequences s = make_sequences(300);
  CHECK(stats::dip_statistic(s.uniform) == doctest::Approx(0.0040584026418178055).epsilon(1e-9));
  CHECK(stats::dip_statistic(s.normal) == doctest::Approx(0.01445714436882214).epsilon(1e-9));
  CHECK(stats::dip_statistic(s.bimodal) == doctest::Approx(0.21763086355711544).epsilon(1e-9));
  CHECK(stats::dip_statistic(s.mix) == doctest::Approx(0.04497269180591773).epsilon(1e-9));
  CHECK(stats::dip_statistic({1, 2, 3, 4, 5}) == doctest::Approx(0.1));
  CHECK(stats::dip_statistic({2, 2, 2}) == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("normal-data dip threshold shrinks with n") {
  const double small = stats::dip_normal_threshold(100, 0.95, 200, 1);
  const double large = stats::dip_normal_threshold(2000, 0.95, 200, 1);
  CHECK(large < small);
  CHECK(small < 0.1);
}

TEST_CASE("Freedman-Diaconis histogram") {
  const Sequences s = make_sequences(1000);
  Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(s.normal.data(), 1000);
  const auto h = stats::freedman_diaconis_histogram(v);
  CHECK(h.edges.size() == h.counts.size() + 1);
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), 0L) == 1000);
  CHECK(h.edges.front() == v.minCoeff());
  CHECK(h.edges.back() == doctest::Approx(v.maxCoeff()));
  // IQR of a standard normal is ~1.35, so the width is ~0.27 at n = 1000
  const double width = h.edges[1] - h.edges[0];
  CHECK(width == doctest::Approx(2 * 1.349 / 10.0).epsilon(0.1));
}

TEST_CASE("expert curves integrate to one by trapezoid") {
  using namespace upoe::experts;
  const Expert kinds[] = {GaussianUnit{}, StudentT{0.5, 2.0, 3.0}, StudentT{-1, 0.7, 0.8},
                          MixtureT{{StudentT{-1, 1, 20}, StudentT{1, 1.5, 20}}, {0.3, 0.7}}};
  Eigen::VectorXd data(3);
  data << -4, 0, 6;
  for (const auto& e : kinds) {
    const auto c = stats::expert_curve(e, data);
    REQUIRE(c.z.size() == 512);
    double mass = 0;
    for (std::size_t k = 1; k < c.z.size(); ++k) {
      mass += 0.5 * (c.density[k] + c.density[k - 1]) * (c.z[k] - c.z[k - 1]);
    }
    CHECK(std::abs(mass - 1) < 1e-3);
    CHECK(c.z.front() <= -4 + 1e-9);
    CHECK(c.z.back() >= 6 - 1e-9);
  }
  const auto g = stats::expert_curve(GaussianUnit{}, Eigen::VectorXd());
  for (std::size_t k = 0; k < g.z.size(); k += 50) {
    CHECK(g.density[k] == doctest::Approx(std::exp(-0.5 * g.z[k] * g.z[k]) / std::sqrt(2 * std::numbers::pi)));
  }
}
