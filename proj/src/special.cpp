#include "upoe/special.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "upoe/error.hpp"

namespace upoe::special {

double log_gamma(double x) {
  if (!(x > 0.0)) {
    throw Error(ErrorCode::OutOfDomain, "experts", "log_gamma argument " + std::to_string(x));
  }
  static constexpr std::array<double, 9> kCoeff = {
      0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
      771.32342877765313,   -176.61502916214059,   12.507343278686905,
      -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
  if (x < 0.5) {
    // reflection keeps the series in its accurate range
    return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - log_gamma(1.0 - x);
  }
  const double xm = x - 1.0;
  double a = kCoeff[0];
  const double t = xm + 7.5;
  for (int i = 1; i < 9; ++i) a += kCoeff[i] / (xm + i);
  return 0.5 * std::log(2.0 * std::numbers::pi) + (xm + 0.5) * std::log(t) - t + std::log(a);
}

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw Error(ErrorCode::OutOfDomain, "experts", "digamma argument " + std::to_string(x));
  }
  double acc = 0.0;
  while (x < 6.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number series: 1/12, 1/120, 1/252, 1/240, 1/132, 691/32760, 1/12
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 - inv2 * (691.0 / 32760 - inv2 / 12))))));
  return acc + std::log(x) - 0.5 * inv - series;
}

double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) {
    throw Error(ErrorCode::OutOfDomain, "experts", "softplus_inverse argument " + std::to_string(y));
  }
  if (y > 30.0) return y + std::log1p(-std::exp(-y));
  return std::log(std::expm1(y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace upoe::special
