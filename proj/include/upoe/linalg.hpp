#pragma once

#include <Eigen/Dense>

namespace upoe::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative singular-value cutoff below which a row matrix counts as rank deficient.
inline constexpr double kRankTolerance = 1e-10;
/// Residual norm below which Gram-Schmidt refuses to normalize.
inline constexpr double kDegeneracyTolerance = 1e-8;

/// Direction matrix W (J x D, J <= D) together with the quantities the
/// density needs: W# = W^T (W W^T)^-1, an orthonormal complement basis V
/// ((D-J) x D) and 0.5 log|W W^T|. J = 0 is allowed and yields V = I_D.
struct ProjectionBasis {
  Matrix W;
  Matrix pinv;
  Matrix complement;
  double log_det_gram = 0.0;

  static ProjectionBasis from_directions(const Matrix& W);
  static ProjectionBasis empty(Eigen::Index dim);

  Eigen::Index rows() const { return W.rows(); }
  Eigen::Index dim() const { return W.cols(); }
};

Matrix pseudo_inverse(const Matrix& W);

/// Throws NoComplement when J = D.
Matrix complement_basis(const Matrix& W);

/// (w - Wp^T Wp w) / ||.||, where Wp has orthonormal rows (possibly zero rows).
/// Throws DegenerateDirection when the residual norm is below kDegeneracyTolerance.
Vector gram_schmidt_against(const Vector& w, const Matrix& previous);

/// 0.5 log|W W^T| as the sum of log singular values.
double log_det_gram(const Matrix& W);

/// P = W^T (W W^T)^-1 W, the orthogonal projector onto the row space of W.
Matrix row_space_projector(const Matrix& W);

/// Q-factor orthonormalization of the rows of W (rows must be independent).
Matrix orthonormalize_rows(const Matrix& W);

}  // namespace upoe::linalg
