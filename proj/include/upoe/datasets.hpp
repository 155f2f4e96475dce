#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "upoe/dataset.hpp"
#include "upoe/experts.hpp"
#include "upoe/model.hpp"

namespace upoe::datasets {

/// One sample per line, comma separated. A first line that does not parse
/// as numbers is treated as a header. Ragged rows raise ParseError naming
/// the line.
Dataset load_csv(const std::filesystem::path& path);
void save_csv(const Dataset& data, const std::filesystem::path& path);

/// "UPD1", little-endian u64 n, u64 d, then n*d doubles row-major.
Dataset load_binary(const std::filesystem::path& path);
void save_binary(const Dataset& data, const std::filesystem::path& path);

/// Dispatches on extension: ".csv" is text, anything else binary.
Dataset load(const std::filesystem::path& path);
void save(const Dataset& data, const std::filesystem::path& path);

/// Uniformly random partition into (train_n, n - train_n) rows.
std::pair<Dataset, Dataset> split(const Dataset& data, Eigen::Index train_n, std::uint64_t seed);

struct PlantedDataset {
  Dataset data;
  UpoeModel truth;
};

/// Samples from the UPoE with the given orthonormal directions and experts.
PlantedDataset gen_planted_upoe(Eigen::Index dim, const Eigen::MatrixXd& directions,
                                std::vector<experts::Expert> experts, Eigen::Index n,
                                std::uint64_t seed);

struct LabeledDataset {
  Dataset data;
  /// class in 0..3; never handed to trainers
  std::vector<int> labels;
  /// the two super-clusters (labels / 2)
  std::vector<int> super_labels;
};

/// Four Gaussian clusters in 5-D standing in for the crabs measurements: a
/// dominant common size factor, two forms split along one axis and two sexes
/// split more weakly along another.
LabeledDataset gen_crabs_like(Eigen::Index n_per_class, std::uint64_t seed);

/// Standard-normal rows.
Dataset gen_standard_normal(Eigen::Index n, Eigen::Index dim, std::uint64_t seed);

}  // namespace upoe::datasets
