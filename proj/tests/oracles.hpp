#pragma once
// Independent reference computations used only by tests. Nothing here calls
// into the library's numerical code paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<double>>;

/// Inverse via Gauss-Jordan elimination with partial pivoting.
inline Grid gauss_jordan_inverse(Grid a) {
  const std::size_t n = a.size();
  Grid inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(inv[col], inv[piv]);
    const double d = a[col][col];
    for (std::size_t c = 0; c < n; ++c) {
      a[col][c] /= d;
      inv[col][c] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (std::size_t c = 0; c < n; ++c) {
        a[r][c] -= f * a[col][c];
        inv[r][c] -= f * inv[col][c];
      }
    }
  }
  return inv;
}

/// Determinant by LU elimination with partial pivoting.
inline double lu_determinant(Grid a) {
  const std::size_t n = a.size();
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (piv != col) {
      std::swap(a[col], a[piv]);
      det = -det;
    }
    det *= a[col][col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
    }
  }
  return det;
}

inline Grid gram(const Grid& w) {
  const std::size_t J = w.size();
  Grid g(J, std::vector<double>(J, 0.0));
  for (std::size_t i = 0; i < J; ++i)
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t k = 0; k < w[i].size(); ++k) g[i][j] += w[i][k] * w[j][k];
  return g;
}

/// Composite Simpson rule with an even number of intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int intervals) {
  if (intervals % 2) ++intervals;
  const double h = (b - a) / intervals;
  double acc = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

/// Simpson in 2-D over a square box.
inline double simpson2d(const std::function<double(double, double)>& f, double lo, double hi,
                        int intervals) {
  return simpson([&](double x) { return simpson([&](double y) { return f(x, y); }, lo, hi, intervals); },
                 lo, hi, intervals);
}

/// Central difference of f at x with step h.
inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Generalized Student-t density written out directly from its closed form
/// using std::tgamma.
inline double student_t_pdf(double z, double mu, double theta, double beta) {
  const double u = theta * (z - mu);
  return std::tgamma(beta) * theta / (std::tgamma(beta - 0.5) * std::sqrt(2.0 * M_PI)) *
         std::pow(1.0 + 0.5 * u * u, -beta);
}

/// Kolmogorov-Smirnov distance between a sample and the Student-t CDF
/// obtained by cumulative trapezoid integration of the closed-form density
/// on u = sinh(s) nodes.
inline double student_t_ks_distance(std::vector<double> z, double mu, double theta, double beta) {
  std::sort(z.begin(), z.end());
  const int nodes = 400'001;
  const double smax = std::asinh(1e3);
  std::vector<double> x(nodes), cdf(nodes, 0.0);
  double prev_f = 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double s = -smax + 2 * smax * i / (nodes - 1);
    x[i] = mu + std::sinh(s) / theta;
    const double f = student_t_pdf(x[i], mu, theta, beta);
    if (i > 0) cdf[i] = cdf[i - 1] + 0.5 * (f + prev_f) * (x[i] - x[i - 1]);
    prev_f = f;
  }
  const double total = cdf.back();
  const std::size_t n = z.size();
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = std::lower_bound(x.begin(), x.end(), z[i]);
    const std::size_t k = std::clamp<std::size_t>(it - x.begin(), 1, nodes - 1);
    const double t = std::clamp((z[i] - x[k - 1]) / (x[k] - x[k - 1]), 0.0, 1.0);
    const double F = (cdf[k - 1] + t * (cdf[k] - cdf[k - 1])) / total;
    d = std::max({d, std::abs(F - double(i) / n), std::abs(F - double(i + 1) / n)});
  }
  return d;
}

/// 1% critical value of the one-sample KS statistic (asymptotic).
inline double ks_critical_1pct(std::size_t n) { return 1.628 / std::sqrt(double(n)); }

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

}  // namespace oracle
