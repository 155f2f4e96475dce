#include "upoe/train_report.hpp"

#include <cstdio>
#include <fstream>

#include "upoe/error.hpp"

namespace upoe {
namespace {

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string optional_real(const std::optional<double>& v) { return v ? real(*v) : std::string(); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "train_report", "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "train_report", "write failed for " + path.string());
}

}  // namespace

std::string TrainReport::iterations_csv(bool timing) const {
  std::string out = "iteration,train_ll,test_ll,step_eta,step_gamma,seconds\n";
  for (const auto& r : iterations) {
    out += std::to_string(r.iteration) + ',' + real(r.train_ll) + ',' + optional_real(r.test_ll) +
           ',' + real(r.step_eta) + ',' + real(r.step_gamma) + ',' +
           real(timing ? r.seconds : 0.0) + '\n';
  }
  return out;
}

std::string TrainReport::experts_csv() const {
  std::string out = "expert_index,restart,Q,train_ll,test_ll\n";
  for (const auto& r : experts) {
    out += std::to_string(r.expert_index) + ',' + std::to_string(r.restart) + ',' + real(r.q) +
           ',' + real(r.train_ll) + ',' + optional_real(r.test_ll) + '\n';
  }
  return out;
}

std::filesystem::path experts_report_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p.replace_extension();
  p += ".experts.csv";
  return p;
}

std::vector<std::filesystem::path> save_report(const TrainReport& report,
                                               const std::filesystem::path& path, bool timing) {
  std::vector<std::filesystem::path> written{path};
  write_text(path, report.iterations_csv(timing));
  if (!report.experts.empty()) {
    written.push_back(experts_report_path(path));
    write_text(written.back(), report.experts_csv());
  }
  return written;
}

}  // namespace upoe
