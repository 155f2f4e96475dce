#pragma once

#include <Eigen/Dense>
#include <string>

namespace upoe {

/// N x D samples, one per row. `sphered` records that the rows have exact
/// zero mean and identity covariance (as produced by preprocess::fit_transform).
struct Dataset {
  Eigen::MatrixXd values;
  bool sphered = false;
  std::string provenance;

  Eigen::Index n() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

}  // namespace upoe
