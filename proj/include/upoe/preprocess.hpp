#pragma once

#include <Eigen/Dense>
#include <utility>

#include "upoe/dataset.hpp"

namespace upoe {
class UpoeModel;
}

namespace upoe::preprocess {

/// Affine map x -> whitening (x - mean). Rows of `whitening` are the kept
/// covariance eigenvectors scaled by 1/sqrt(eigenvalue), largest first.
struct PreprocessTransform {
  Eigen::VectorXd mean;
  Eigen::MatrixXd whitening;    // k x D_raw
  Eigen::MatrixXd pca_basis;    // k x D_raw, orthonormal eigenvector rows
  Eigen::VectorXd eigenvalues;  // k, positive and non-increasing

  Eigen::Index kept() const { return whitening.rows(); }
  Eigen::Index raw_dim() const { return whitening.cols(); }
  bool invertible() const { return kept() == raw_dim(); }

  bool operator==(const PreprocessTransform& other) const;
};

/// How many principal components to keep: a count, or the smallest count
/// whose eigenvalues reach a fraction of the total variance.
struct Keep {
  Eigen::Index count = -1;
  double fraction = 1.0;

  static Keep all() { return {}; }
  static Keep dims(Eigen::Index k) { return {k, 1.0}; }
  static Keep variance_fraction(double f) { return {-1, f}; }
};

/// Eigen-decomposes the (1/N) sample covariance and whitens onto the top
/// components. Throws DegenerateCovariance when a retained eigenvalue is
/// below 1e-12 times the largest.
PreprocessTransform fit(const Eigen::MatrixXd& raw, Keep keep = Keep::all());

std::pair<PreprocessTransform, Dataset> fit_transform(const Dataset& raw, Keep keep = Keep::all());

Eigen::VectorXd apply(const PreprocessTransform& t, const Eigen::VectorXd& x_raw);
Dataset apply(const PreprocessTransform& t, const Dataset& raw);

/// Inverse map; NotInvertible when components were dropped.
Eigen::VectorXd unapply(const PreprocessTransform& t, const Eigen::VectorXd& x);
Eigen::MatrixXd unapply_rows(const PreprocessTransform& t, const Eigen::MatrixXd& X);

/// log |det whitening|; NotInvertible when components were dropped.
double log_abs_det(const PreprocessTransform& t);

/// Model log-density of a raw-space point, including the whitening Jacobian.
double log_density_raw(const PreprocessTransform& t, const UpoeModel& model,
                       const Eigen::VectorXd& x_raw);

/// Spectral norm of (sample covariance - I), plus the largest |mean| entry.
double sphering_error(const Eigen::MatrixXd& X);

}  // namespace upoe::preprocess
