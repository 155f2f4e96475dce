#include "upoe/preprocess.hpp"

#include <cmath>
#include <string>

#include "upoe/error.hpp"
#include "upoe/model.hpp"

namespace upoe::preprocess {
namespace {
constexpr std::string_view kComponent = "preprocess";
constexpr double kEigenFloor = 1e-12;

void require_dim(const PreprocessTransform& t, Eigen::Index d) {
  if (d != t.raw_dim()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent,
                "expected " + std::to_string(t.raw_dim()) + " raw dimensions, got " +
                    std::to_string(d));
  }
}
}  // namespace

bool PreprocessTransform::operator==(const PreprocessTransform& o) const {
  return mean == o.mean && whitening == o.whitening && pca_basis == o.pca_basis &&
         eigenvalues == o.eigenvalues;
}

PreprocessTransform fit(const Eigen::MatrixXd& raw, Keep keep) {
  const Eigen::Index N = raw.rows();
  const Eigen::Index D = raw.cols();
  if (N == 0 || D == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "no data to fit");
  if (!raw.allFinite()) throw Error(ErrorCode::InvalidArgument, kComponent, "non-finite data");

  PreprocessTransform t;
  t.mean = raw.colwise().mean().transpose();
  const Eigen::MatrixXd centered = raw.rowwise() - t.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(N);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) {
    throw Error(ErrorCode::DegenerateCovariance, kComponent, "eigendecomposition failed");
  }
  // ascending -> descending
  const Eigen::VectorXd values = eig.eigenvalues().reverse();
  const Eigen::MatrixXd vectors = eig.eigenvectors().rowwise().reverse();

  Eigen::Index k = D;
  if (keep.count >= 0) {
    if (keep.count == 0 || keep.count > D) {
      throw Error(ErrorCode::InvalidArgument, kComponent,
                  "cannot keep " + std::to_string(keep.count) + " of " + std::to_string(D) +
                      " dimensions");
    }
    k = keep.count;
  } else if (keep.fraction < 1.0) {
    if (!(keep.fraction > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, kComponent, "variance fraction must be in (0, 1]");
    }
    const double total = values.sum();
    double acc = 0.0;
    k = 0;
    while (k < D && acc < keep.fraction * total) acc += values(k++);
    // equal eigenvalues straddling the cut are kept together
    while (k < D && std::abs(values(k) - values(k - 1)) <= 1e-12 * values(0)) ++k;
  }

  const double largest = values(0);
  if (!(largest > 0.0)) {
    throw Error(ErrorCode::DegenerateCovariance, kComponent, "data has zero variance");
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    if (values(i) < kEigenFloor * largest) {
      throw Error(ErrorCode::DegenerateCovariance, kComponent,
                  "retained eigenvalue " + std::to_string(i) + " is " + std::to_string(values(i)) +
                      " (largest " + std::to_string(largest) + ")");
    }
  }
  t.eigenvalues = values.head(k);
  t.pca_basis = vectors.leftCols(k).transpose();
  // sign convention: largest-magnitude entry of each eigenvector positive
  for (Eigen::Index i = 0; i < k; ++i) {
    Eigen::Index arg = 0;
    t.pca_basis.row(i).cwiseAbs().maxCoeff(&arg);
    if (t.pca_basis(i, arg) < 0.0) t.pca_basis.row(i) *= -1.0;
  }
  t.whitening = t.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal() * t.pca_basis;
  return t;
}

std::pair<PreprocessTransform, Dataset> fit_transform(const Dataset& raw, Keep keep) {
  PreprocessTransform t = fit(raw.values, keep);
  Dataset out = apply(t, raw);
  return {std::move(t), std::move(out)};
}

Eigen::VectorXd apply(const PreprocessTransform& t, const Eigen::VectorXd& x_raw) {
  require_dim(t, x_raw.size());
  return t.whitening * (x_raw - t.mean);
}

Dataset apply(const PreprocessTransform& t, const Dataset& raw) {
  require_dim(t, raw.dim());
  Dataset out;
  out.values = (raw.values.rowwise() - t.mean.transpose()) * t.whitening.transpose();
  out.sphered = true;
  out.provenance = raw.provenance.empty() ? "sphered" : raw.provenance + "|sphered";
  return out;
}

Eigen::VectorXd unapply(const PreprocessTransform& t, const Eigen::VectorXd& x) {
  return unapply_rows(t, x.transpose()).row(0).transpose();
}

Eigen::MatrixXd unapply_rows(const PreprocessTransform& t, const Eigen::MatrixXd& X) {
  if (!t.invertible()) {
    throw Error(ErrorCode::NotInvertible, kComponent,
                "transform keeps " + std::to_string(t.kept()) + " of " +
                    std::to_string(t.raw_dim()) + " dimensions");
  }
  if (X.cols() != t.kept()) throw Error(ErrorCode::DimensionMismatch, kComponent, "bad width");
  // whitening^-1 = pca_basis^T diag(sqrt(lambda))
  const Eigen::MatrixXd inv = t.pca_basis.transpose() * t.eigenvalues.cwiseSqrt().asDiagonal();
  return (X * inv.transpose()).rowwise() + t.mean.transpose();
}

double log_abs_det(const PreprocessTransform& t) {
  if (!t.invertible()) {
    throw Error(ErrorCode::NotInvertible, kComponent,
                "reduced transform has no raw-space Jacobian");
  }
  return -0.5 * t.eigenvalues.array().log().sum();
}

double log_density_raw(const PreprocessTransform& t, const UpoeModel& model,
                       const Eigen::VectorXd& x_raw) {
  const double jac = log_abs_det(t);
  return model.log_density(apply(t, x_raw)) + jac;
}

double sphering_error(const Eigen::MatrixXd& X) {
  if (X.rows() == 0) return 0.0;
  const Eigen::VectorXd mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd cov = X.transpose() * X / static_cast<double>(X.rows());
  const Eigen::MatrixXd diff = cov - Eigen::MatrixXd::Identity(X.cols(), X.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(diff, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff() + mean.cwiseAbs().maxCoeff();
}

}  // namespace upoe::preprocess
