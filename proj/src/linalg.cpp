#include "upoe/linalg.hpp"

#include <cmath>
#include <string>

#include "upoe/error.hpp"

namespace upoe::linalg {
namespace {

constexpr std::string_view kComponent = "linalg";

struct RowSvd {
  Matrix U;       // D x D, left singular vectors of W^T
  Vector sigma;   // J
  Matrix C;       // J x J, right singular vectors of W^T
};

// Largest-magnitude entry of every column made non-negative.
void fix_column_signs(Matrix& M) {
  for (Eigen::Index c = 0; c < M.cols(); ++c) {
    Eigen::Index arg = 0;
    M.col(c).cwiseAbs().maxCoeff(&arg);
    if (M(arg, c) < 0.0) M.col(c) *= -1.0;
  }
}

RowSvd decompose(const Matrix& W) {
  if (W.cols() == 0) throw Error(ErrorCode::InvalidArgument, kComponent, "matrix has no columns");
  if (W.rows() > W.cols()) {
    throw Error(ErrorCode::RankDeficient, kComponent,
                "more rows (" + std::to_string(W.rows()) + ") than columns (" +
                    std::to_string(W.cols()) + ")");
  }
  if (!W.allFinite()) throw Error(ErrorCode::InvalidArgument, kComponent, "non-finite entry");
  RowSvd out;
  if (W.rows() == 0) {
    out.U = Matrix::Identity(W.cols(), W.cols());
    out.sigma = Vector(0);
    out.C = Matrix(0, 0);
    return out;
  }
  Eigen::JacobiSVD<Matrix> svd(W.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  out.sigma = svd.singularValues();
  const double smax = out.sigma(0);
  const double smin = out.sigma(out.sigma.size() - 1);
  if (!(smax > 0.0) || smin / smax < kRankTolerance) {
    throw Error(ErrorCode::RankDeficient, kComponent,
                "singular value ratio " + std::to_string(smax > 0.0 ? smin / smax : 0.0));
  }
  out.U = svd.matrixU();
  out.C = svd.matrixV();
  // Flip (u_i, c_i) pairs together for the first J vectors; complement
  // vectors are flipped independently.
  const Eigen::Index J = W.rows();
  for (Eigen::Index i = 0; i < J; ++i) {
    Eigen::Index arg = 0;
    out.U.col(i).cwiseAbs().maxCoeff(&arg);
    if (out.U(arg, i) < 0.0) {
      out.U.col(i) *= -1.0;
      out.C.col(i) *= -1.0;
    }
  }
  Matrix tail = out.U.rightCols(W.cols() - J);
  fix_column_signs(tail);
  out.U.rightCols(W.cols() - J) = tail;
  return out;
}

Matrix pinv_from(const RowSvd& s, Eigen::Index J) {
  // W^T = U_J S C^T  =>  W# = U_J S^-1 C^T
  return s.U.leftCols(J) * s.sigma.cwiseInverse().asDiagonal() * s.C.transpose();
}

}  // namespace

ProjectionBasis ProjectionBasis::from_directions(const Matrix& W) {
  const RowSvd s = decompose(W);
  const Eigen::Index J = W.rows();
  ProjectionBasis b;
  b.W = W;
  b.pinv = pinv_from(s, J);
  b.complement = s.U.rightCols(W.cols() - J).transpose();
  b.log_det_gram = s.sigma.array().log().sum();
  return b;
}

ProjectionBasis ProjectionBasis::empty(Eigen::Index dim) {
  return from_directions(Matrix(0, dim));
}

Matrix pseudo_inverse(const Matrix& W) { return pinv_from(decompose(W), W.rows()); }

Matrix complement_basis(const Matrix& W) {
  if (W.rows() == W.cols()) {
    throw Error(ErrorCode::NoComplement, kComponent, "W is square; complement is empty");
  }
  const RowSvd s = decompose(W);
  return s.U.rightCols(W.cols() - W.rows()).transpose();
}

Vector gram_schmidt_against(const Vector& w, const Matrix& previous) {
  if (previous.rows() > 0 && previous.cols() != w.size()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent, "direction/basis size mismatch");
  }
  Vector r = w;
  if (previous.rows() > 0) {
    r -= previous.transpose() * (previous * w);
    // second pass restores orthogonality lost to cancellation
    r -= previous.transpose() * (previous * r);
  }
  const double norm = r.norm();
  if (!(norm >= kDegeneracyTolerance)) {
    throw Error(ErrorCode::DegenerateDirection, kComponent,
                "residual norm " + std::to_string(norm) + " below tolerance");
  }
  return r / norm;
}

double log_det_gram(const Matrix& W) { return decompose(W).sigma.array().log().sum(); }

Matrix row_space_projector(const Matrix& W) { return pseudo_inverse(W) * W; }

Matrix orthonormalize_rows(const Matrix& W) {
  Matrix out(W.rows(), W.cols());
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    out.row(i) = gram_schmidt_against(W.row(i).transpose(), out.topRows(i)).transpose();
  }
  return out;
}

}  // namespace upoe::linalg
