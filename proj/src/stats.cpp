#include "upoe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "upoe/error.hpp"

namespace upoe::stats {

// Port of the AS 217 dip algorithm (Hartigan & Hartigan) with the later
// fixes from R's diptest. Arrays are 1-based to follow the published
// algorithm; distances are carried in units of 1/(2n) until the end.
double dip_statistic(std::vector<double> samples) {
  const int n = static_cast<int>(samples.size());
  if (n == 0) throw Error(ErrorCode::EmptyDataset, "stats", "dip of an empty sample");
  std::sort(samples.begin(), samples.end());
  std::vector<double> x(n + 1);
  std::copy(samples.begin(), samples.end(), x.begin() + 1);
  std::vector<int> mn(n + 1), mj(n + 1), gcm(n + 2), lcm(n + 2);

  int low = 1, high = n;
  double dip = 1.0;
  if (n < 2 || x[n] == x[1]) return dip / (2.0 * n);

  // convex minorant indices
  mn[1] = 1;
  for (int j = 2; j <= n; ++j) {
    mn[j] = j - 1;
    while (true) {
      const int mnj = mn[j];
      const int mnmnj = mn[mnj];
      if (mnj == 1 || (x[j] - x[mnj]) * (mnj - mnmnj) < (x[mnj] - x[mnmnj]) * (j - mnj)) break;
      mn[j] = mnmnj;
    }
  }
  // concave majorant indices
  mj[n] = n;
  for (int k = n - 1; k >= 1; --k) {
    mj[k] = k + 1;
    while (true) {
      const int mjk = mj[k];
      const int mjmjk = mj[mjk];
      if (mjk == n || (x[k] - x[mjk]) * (mjk - mjmjk) < (x[mjk] - x[mjmjk]) * (k - mjk)) break;
      mj[k] = mjmjk;
    }
  }

  while (true) {
    int i = 1;
    gcm[1] = high;
    while (gcm[i] > low) {
      gcm[i + 1] = mn[gcm[i]];
      ++i;
    }
    const int l_gcm = i;
    int ig = l_gcm;
    int ix = ig - 1;

    i = 1;
    lcm[1] = low;
    while (lcm[i] < high) {
      lcm[i + 1] = mj[lcm[i]];
      ++i;
    }
    const int l_lcm = i;
    int ih = l_lcm;
    int iv = 2;

    long double d = 0.0L;
    if (l_gcm != 2 || l_lcm != 2) {
      do {
        long double dx;
        const int gcmix = gcm[ix];
        const int lcmiv = lcm[iv];
        if (gcmix > lcmiv) {
          const int gcmi1 = gcm[ix + 1];
          dx = (lcmiv - gcmi1 + 1) -
               (static_cast<long double>(x[lcmiv]) - x[gcmi1]) * (gcmix - gcmi1) /
                   (x[gcmix] - x[gcmi1]);
          ++iv;
          if (dx >= d) {
            d = dx;
            ig = ix + 1;
            ih = iv - 1;
          }
        } else {
          const int lcmiv1 = lcm[iv - 1];
          dx = (static_cast<long double>(x[gcmix]) - x[lcmiv1]) * (lcmiv - lcmiv1) /
                   (x[lcmiv] - x[lcmiv1]) -
               (gcmix - lcmiv1 - 1);
          --ix;
          if (dx >= d) {
            d = dx;
            ig = ix + 1;
            ih = iv;
          }
        }
        if (ix < 1) ix = 1;
        if (iv > l_lcm) iv = l_lcm;
      } while (gcm[ix] != lcm[iv]);
    } else {
      d = 1.0L;
    }

    if (d < dip) break;

    double dip_l = 0.0;
    for (int j = ig; j < l_gcm; ++j) {
      double max_t = 1.0;
      const int jb = gcm[j + 1], je = gcm[j];
      if (je - jb > 1 && x[je] != x[jb]) {
        const double C = (je - jb) / (x[je] - x[jb]);
        for (int jj = jb; jj <= je; ++jj) {
          max_t = std::max(max_t, (jj - jb + 1) - (x[jj] - x[jb]) * C);
        }
      }
      dip_l = std::max(dip_l, max_t);
    }
    double dip_u = 0.0;
    for (int j = ih; j < l_lcm; ++j) {
      double max_t = 1.0;
      const int jb = lcm[j], je = lcm[j + 1];
      if (je - jb > 1 && x[je] != x[jb]) {
        const double C = (je - jb) / (x[je] - x[jb]);
        for (int jj = jb; jj <= je; ++jj) {
          max_t = std::max(max_t, (x[jj] - x[jb]) * C - (jj - jb - 1));
        }
      }
      dip_u = std::max(dip_u, max_t);
    }
    dip = std::max(dip, std::max(dip_l, dip_u));

    // without this check the cycle can repeat forever
    if (low == gcm[ig] && high == lcm[ih]) break;
    low = gcm[ig];
    high = lcm[ih];
  }
  return dip / (2.0 * n);
}

double dip_normal_threshold(Eigen::Index n, double quantile, int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> dips;
  std::vector<double> draw(static_cast<std::size_t>(n));
  for (int t = 0; t < trials; ++t) {
    for (double& v : draw) v = normal(rng);
    dips.push_back(dip_statistic(draw));
  }
  std::sort(dips.begin(), dips.end());
  const auto idx = static_cast<std::size_t>(
      std::min<double>(dips.size() - 1, std::ceil(quantile * dips.size()) - 1));
  return dips[idx];
}

Histogram freedman_diaconis_histogram(const Eigen::Ref<const Eigen::VectorXd>& samples) {
  const Eigen::Index n = samples.size();
  if (n == 0) throw Error(ErrorCode::EmptyDataset, "stats", "histogram of an empty sample");
  std::vector<double> s(samples.data(), samples.data() + n);
  std::sort(s.begin(), s.end());
  auto quantile = [&](double q) {
    const double pos = q * (n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min<std::size_t>(lo + 1, s.size() - 1);
    return s[lo] + (pos - lo) * (s[hi] - s[lo]);
  };
  const double lo = s.front();
  const double hi = s.back();
  const double iqr = quantile(0.75) - quantile(0.25);
  long bins = 1;
  if (hi > lo) {
    if (iqr > 0.0) {
      const double width = 2.0 * iqr * std::pow(static_cast<double>(n), -1.0 / 3.0);
      bins = std::clamp<long>(static_cast<long>(std::ceil((hi - lo) / width)), 1, 10000);
    } else {
      bins = static_cast<long>(std::ceil(std::log2(static_cast<double>(n)) + 1.0));
    }
  }
  Histogram h;
  const double span = hi > lo ? hi - lo : 1.0;
  const double left = hi > lo ? lo : lo - 0.5;
  for (long b = 0; b <= bins; ++b) h.edges.push_back(left + span * static_cast<double>(b) / bins);
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : s) {
    long b = static_cast<long>((v - left) / span * bins);
    b = std::clamp<long>(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

namespace {

std::pair<double, double> center_and_scale(const experts::Expert& expert) {
  auto t_scale = [](const experts::StudentT& t) {
    return 1.0 / (t.theta * std::sqrt(std::max(t.beta, 1.0)));
  };
  if (const auto* t = std::get_if<experts::StudentT>(&expert)) return {t->mu, t_scale(*t)};
  if (const auto* m = std::get_if<experts::MixtureT>(&expert)) {
    double c = 0, s = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < m->components.size(); ++a) {
      c += m->weights[a] * m->components[a].mu;
      s = std::min(s, t_scale(m->components[a]));
    }
    return {c, s};
  }
  return {0.0, 1.0};
}

// Mass of the expert in [c - s sinh(U), c + s sinh(U)] by Simpson in u.
double central_mass(const experts::Expert& expert, double c, double s, double U) {
  const int K = 4000;
  const double h = 2 * U / K;
  Eigen::VectorXd z(K + 1), jac(K + 1);
  for (int k = 0; k <= K; ++k) {
    const double u = -U + k * h;
    z(k) = c + s * std::sinh(u);
    jac(k) = s * std::cosh(u);
  }
  const Eigen::VectorXd p = experts::log_density(expert, z).array().exp() * jac.array();
  double acc = p(0) + p(K);
  for (int k = 1; k < K; ++k) acc += (k % 2 ? 4.0 : 2.0) * p(k);
  return acc * h / 3;
}

}  // namespace

Curve expert_curve(const experts::Expert& expert, const Eigen::Ref<const Eigen::VectorXd>& data,
                   int points) {
  if (points < 2) throw Error(ErrorCode::InvalidArgument, "stats", "a curve needs two points");
  const auto [c, s] = center_and_scale(expert);
  double U = 0.5;
  while (U < 60 && 1.0 - central_mass(expert, c, s, U) > 1e-4) U += 0.5;
  if (data.size() > 0) U = std::max(U, std::asinh((data.array() - c).abs().maxCoeff() / s));

  Curve out;
  Eigen::VectorXd z(points);
  for (int k = 0; k < points; ++k) z(k) = c + s * std::sinh(-U + 2 * U * k / (points - 1));
  const Eigen::VectorXd p = experts::log_density(expert, z).array().exp();
  out.z.assign(z.data(), z.data() + points);
  out.density.assign(p.data(), p.data() + points);
  return out;
}

}  // namespace upoe::stats
