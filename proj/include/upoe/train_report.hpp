#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace upoe {

/// One epoch of gradient training, or one expert addition of a growing run.
struct IterationRecord {
  int iteration = 0;
  double train_ll = 0.0;
  std::optional<double> test_ll;
  double step_eta = 0.0;
  double step_gamma = 0.0;
  double seconds = 0.0;
};

/// One accepted expert: its index (1-based), winning restart and projection index.
struct ExpertRecord {
  int expert_index = 0;
  int restart = 0;
  double q = 0.0;
  double train_ll = 0.0;
  std::optional<double> test_ll;
};

struct TrainReport {
  std::vector<IterationRecord> iterations;
  std::vector<ExpertRecord> experts;
  std::vector<std::string> warnings;

  /// CSV with columns iteration,train_ll,test_ll,step_eta,step_gamma,seconds.
  /// Missing test values are empty fields; `timing = false` writes 0 seconds.
  std::string iterations_csv(bool timing = true) const;
  /// CSV with columns expert_index,restart,Q,train_ll,test_ll.
  std::string experts_csv() const;
};

/// Writes the iteration table to `path` and, when there are expert rows, the
/// expert table next to it as `<stem>.experts.csv`. Returns every written path.
std::vector<std::filesystem::path> save_report(const TrainReport& report,
                                               const std::filesystem::path& path,
                                               bool timing = true);

/// Path of the expert table that save_report pairs with `path`.
std::filesystem::path experts_report_path(const std::filesystem::path& path);

}  // namespace upoe
