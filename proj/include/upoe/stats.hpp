#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "upoe/experts.hpp"

namespace upoe::stats {

/// Hartigan's dip: sup-distance between the empirical CDF and the closest
/// unimodal CDF. Lies in [1/(2n), 1/4]; larger means more multimodal.
double dip_statistic(std::vector<double> samples);

/// Upper `quantile` of the dip over `trials` standard-normal samples of size n.
double dip_normal_threshold(Eigen::Index n, double quantile, int trials, std::uint64_t seed);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<long> counts;   // bins
};

/// Equal-width bins with Freedman-Diaconis width 2 IQR n^(-1/3) (falls back
/// to Sturges when the IQR vanishes).
Histogram freedman_diaconis_histogram(const Eigen::Ref<const Eigen::VectorXd>& samples);

struct Curve {
  std::vector<double> z;
  std::vector<double> density;
};

/// The expert's density on `points` nodes z = c + s sinh(u) with u evenly
/// spaced, where c and s are the expert's center and scale. The span covers
/// the data and all but 1e-4 of the expert's mass, so trapezoid quadrature
/// over the nodes stays accurate for heavy tails.
Curve expert_curve(const experts::Expert& expert, const Eigen::Ref<const Eigen::VectorXd>& data,
                   int points = 512);

}  // namespace upoe::stats
