#pragma once

namespace upoe::special {

/// log Gamma(x) for x > 0 (Lanczos, g = 7, nine terms).
double log_gamma(double x);

/// Psi(x) = d/dx log Gamma(x) for x > 0. Upward recurrence to x >= 6, then
/// the asymptotic series. Throws OutOfDomain for x <= 0.
double digamma(double x);

/// log(1 + exp(x)) without overflow.
double softplus(double x);
/// Inverse of softplus for y > 0.
double softplus_inverse(double y);
/// d softplus / dx.
double sigmoid(double x);

}  // namespace upoe::special
