#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "upoe/dataset.hpp"
#include "upoe/experts.hpp"
#include "upoe/linalg.hpp"
#include "upoe/preprocess.hpp"

namespace upoe {

/// One draw from the model: x = W# z + V^T y.
struct ModelSample {
  Eigen::VectorXd x;
  Eigen::VectorXd z;
  Eigen::VectorXd y;
};

/// Under-complete product of experts over R^D:
///
///   p(x) = prod_i N(v_i^T x | 0, 1) prod_j T_j(w_j^T x) sqrt|W W^T|
///
/// with J <= D experts along the rows w_j of W and unit Gaussians along an
/// orthonormal basis v_i of the complement. J = 0 is the standard normal.
/// Immutable; add_expert returns a new model.
class UpoeModel {
 public:
  explicit UpoeModel(Eigen::Index dim);
  UpoeModel(const linalg::Matrix& W, std::vector<experts::Expert> experts,
            std::optional<preprocess::PreprocessTransform> preprocessing = std::nullopt);

  Eigen::Index dim() const { return basis_.dim(); }
  Eigen::Index num_experts() const { return basis_.rows(); }
  const linalg::ProjectionBasis& basis() const { return basis_; }
  const linalg::Matrix& directions() const { return basis_.W; }
  const std::vector<experts::Expert>& experts() const { return experts_; }
  const std::optional<preprocess::PreprocessTransform>& preprocessing() const {
    return preprocessing_;
  }

  UpoeModel with_preprocessing(std::optional<preprocess::PreprocessTransform> t) const;
  UpoeModel with_experts(std::vector<experts::Expert> experts) const;

  double log_density(const Eigen::VectorXd& x) const;
  /// Per-row log-densities of an N x D matrix.
  Eigen::VectorXd log_density_rows(const Eigen::MatrixXd& X) const;
  /// Mean log-density over the dataset.
  double log_likelihood(const Dataset& data) const;
  double log_likelihood(const Eigen::MatrixXd& X) const;

  std::vector<ModelSample> sample(Eigen::Index n, experts::Rng& rng) const;
  /// Only the x part of sample(), one row per draw.
  Eigen::MatrixXd sample_points(Eigen::Index n, experts::Rng& rng) const;

  /// Appends a unit direction orthogonal to every current row, so that
  /// p_new(x) = p(x) T(w^T x) / N(w^T x). Throws NotOrthogonal or ModelFull.
  UpoeModel add_expert(const Eigen::VectorXd& w_hat, experts::Expert expert) const;

  /// max |W W^T - I|.
  double orthonormality_error() const;

 private:
  linalg::ProjectionBasis basis_;
  std::vector<experts::Expert> experts_;
  std::optional<preprocess::PreprocessTransform> preprocessing_;
};

std::string to_json(const UpoeModel& model);
UpoeModel from_json(const std::string& text);

/// Versioned text model file; reals round-trip bit-exactly.
void save(const UpoeModel& model, const std::filesystem::path& path);
UpoeModel load(const std::filesystem::path& path);

}  // namespace upoe
