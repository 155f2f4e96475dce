// upoe: train, evaluate, sample and inspect under-complete product-of-experts models.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "upoe/datasets.hpp"
#include "upoe/error.hpp"
#include "upoe/model.hpp"
#include "upoe/parallel_trainer.hpp"
#include "upoe/preprocess.hpp"
#include "upoe/sequential_trainer.hpp"
#include "upoe/stats.hpp"
#include "upoe/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace upoe;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitBadFlags = 2;
constexpr int kExitDataError = 3;
constexpr int kExitDiverged = 4;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
      return kExitBadFlags;
    case ErrorCode::Diverged:
      return kExitDiverged;
    case ErrorCode::IoError:
    case ErrorCode::FormatError:
    case ErrorCode::ParseError:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::EmptyDataset:
    case ErrorCode::DegenerateCovariance:
    case ErrorCode::BadSplit:
    case ErrorCode::NotInvertible:
      return kExitDataError;
    default:
      return kExitFailure;
  }
}

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
  fs::path p = path;
  p.replace_extension();
  p += suffix;
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cli", "cannot write " + path.string());
  out << text;
}

// Records what a command reads and writes. Written once before the work
// starts and again with the final status.
class Manifest {
 public:
  Manifest(fs::path path, std::string command, std::vector<std::string> argv, json config)
      : path_(std::move(path)) {
    doc_ = {{"command", std::move(command)},
            {"argv", std::move(argv)},
            {"config", std::move(config)},
            {"library_version", std::string(kVersion)},
            {"inputs", json::array()},
            {"outputs", json::array()},
            {"started", utc_now()},
            {"status", "running"}};
  }
  void input(const fs::path& p) { doc_["inputs"].push_back(p.string()); }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }
  void set(const std::string& key, json value) { doc_[key] = std::move(value); }
  void write() const { write_text(path_, doc_.dump(2) + "\n"); }
  void finish(const std::string& status, const std::string& message = {}) {
    doc_["status"] = status;
    doc_["finished"] = utc_now();
    if (!message.empty()) doc_["message"] = message;
    write();
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  json doc_;
};

// Reads key=value lines ('#' comments) into --key=value arguments.
std::vector<std::string> config_arguments(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot open " + path.string());
  std::vector<std::string> args;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw CLI::ValidationError("--config", path.string() + ":" + std::to_string(line_no) +
                                                 " is not key=value");
    }
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    if (key == "config") throw CLI::ValidationError("--config", "config files cannot nest");
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

// Splices the contents of a --config file in front of the subcommand's own
// arguments so flags given on the command line take precedence.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  if (args.size() < 2) return args;
  for (std::size_t i = 2; i < args.size(); ++i) {
    std::string path;
    std::size_t consumed = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      consumed = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      consumed = 1;
    } else {
      continue;
    }
    std::vector<std::string> from_file = config_arguments(path);
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
               args.begin() + static_cast<std::ptrdiff_t>(i + consumed));
    args.insert(args.begin() + 2, from_file.begin(), from_file.end());
    return args;
  }
  return args;
}

preprocess::Keep parse_keep(const std::string& text) {
  if (text == "all") return preprocess::Keep::all();
  if (text.find('.') != std::string::npos) {
    const double f = std::stod(text);
    if (!(f > 0 && f <= 1)) throw CLI::ValidationError("--keep", "fraction must lie in (0, 1]");
    return preprocess::Keep::variance_fraction(f);
  }
  const long k = std::stol(text);
  if (k < 1) throw CLI::ValidationError("--keep", "must keep at least one dimension");
  return preprocess::Keep::dims(k);
}

struct TrainFlags {
  std::string data, test_data, out, mode = "sequential", expert_kind = "student-t", keep = "all";
  std::string init = "random";
  long experts = 1;
  std::uint64_t seed = 0;
  bool pre_sphered = false, no_stop = false, holdout_stop = false, fix_means = false;
  bool timing = false, fixed_steps = false;
  std::optional<double> fix_beta;
  double eta = 0.1, gamma = 0.1, epsilon = 0.1, tol = 1e-8, noise_floor = 0.0;
  long batch_size = 100, max_iters = 200, restarts = 5;
};

experts::Expert expert_template(const TrainFlags& f) {
  if (f.expert_kind == "student-t") return experts::StudentT{0.0, 1.0, f.fix_beta.value_or(2.0)};
  const std::string prefix = "mixture-t:";
  if (f.expert_kind.rfind(prefix, 0) == 0) {
    int A = 0;
    try {
      A = std::stoi(f.expert_kind.substr(prefix.size()));
    } catch (const std::exception&) {
    }
    if (A < 1) throw CLI::ValidationError("--expert-kind", "mixture-t:A needs A >= 1");
    experts::MixtureT m;
    for (int a = 0; a < A; ++a) {
      const double mu = A == 1 ? 0.0 : -1.0 + 2.0 * a / (A - 1);
      m.components.push_back({mu, 1.0, f.fix_beta.value_or(20.0)});
      m.weights.push_back(1.0 / A);
    }
    return m;
  }
  throw CLI::ValidationError("--expert-kind", "expected student-t or mixture-t:A");
}

json train_config_json(const TrainFlags& f) {
  json j = {{"data", f.data},       {"test-data", f.test_data},
            {"out", f.out},         {"mode", f.mode},
            {"experts", f.experts}, {"expert-kind", f.expert_kind},
            {"seed", f.seed},       {"pre-sphered", f.pre_sphered},
            {"keep", f.keep},       {"init", f.init},
            {"eta", f.eta},         {"gamma", f.gamma},
            {"epsilon", f.epsilon}, {"tol", f.tol},
            {"batch-size", f.batch_size}, {"max-iters", f.max_iters},
            {"restarts", f.restarts},     {"noise-floor", f.noise_floor},
            {"no-stop", f.no_stop},       {"holdout-stop", f.holdout_stop},
            {"fix-means", f.fix_means},   {"fixed-steps", f.fixed_steps},
            {"timing", f.timing}};
  j["fix-beta"] = f.fix_beta ? json(*f.fix_beta) : json(nullptr);
  return j;
}

void print_warnings(const TrainReport& report) {
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
}

int cmd_train(const TrainFlags& f, const std::vector<std::string>& argv) {
  parallel::TrainConfig cfg;
  cfg.eta = f.eta;
  cfg.gamma = f.gamma;
  cfg.epsilon = f.epsilon;
  cfg.tol = f.tol;
  cfg.batch_size = f.batch_size;
  cfg.max_iters = static_cast<int>(f.max_iters);
  cfg.seed = f.seed;
  cfg.adaptive = !f.fixed_steps;
  cfg.expert_template = expert_template(f);
  cfg.mask.beta = f.fix_beta.has_value();
  cfg.mask.mu = f.fix_means;
  parallel::validate(cfg);
  const preprocess::Keep keep = parse_keep(f.keep);

  const fs::path out(f.out);
  const fs::path report_path = sibling(out, ".report.csv");
  Manifest manifest(sibling(out, ".manifest.json"), "train", argv, train_config_json(f));
  manifest.input(f.data);
  if (!f.test_data.empty()) manifest.input(f.test_data);
  manifest.output(out);
  manifest.output(report_path);
  manifest.write();

  try {
    Dataset train = datasets::load(f.data);
    std::optional<Dataset> test;
    if (!f.test_data.empty()) test = datasets::load(f.test_data);
    std::optional<preprocess::PreprocessTransform> transform;
    if (!f.pre_sphered) {
      transform = preprocess::fit(train.values, keep);
      train = preprocess::apply(*transform, train);
      if (test) test = preprocess::apply(*transform, *test);
    } else if (test && test->dim() != train.dim()) {
      throw Error(ErrorCode::DimensionMismatch, "cli", "test and training dimensions differ");
    }
    const Dataset* test_ptr = test ? &*test : nullptr;

    UpoeModel model(train.dim());
    TrainReport report;
    if (f.mode == "sequential") {
      sequential::SequentialConfig sc;
      sc.max_experts = f.experts;
      sc.inner = cfg;
      sc.restarts = static_cast<int>(f.restarts);
      sc.stop_on_nonnegative_q = !f.no_stop;
      sc.noise_floor = f.noise_floor;
      sc.holdout_stop = f.holdout_stop;
      std::tie(model, report) = sequential::train_sequential(train, sc, test_ptr);
    } else if (f.mode == "frozen-sequential" || (f.mode == "parallel" && f.init == "grow")) {
      const auto growth = f.mode == "parallel" ? parallel::Growth::Parallel
                                               : parallel::Growth::FrozenSequential;
      auto [models, rep] = parallel::train_growing(train, f.experts, growth, cfg,
                                                   static_cast<int>(f.restarts), test_ptr);
      if (!models.empty()) model = models.back();
      report = std::move(rep);
    } else {
      std::tie(model, report) = parallel::train_parallel(train, f.experts, std::nullopt, cfg,
                                                         {0, test_ptr});
    }
    model = model.with_preprocessing(transform);
    print_warnings(report);

    save(model, out);
    const auto written = save_report(report, report_path, f.timing);
    for (const auto& p : written) {
      if (p != report_path) manifest.output(p);
    }
    const double ll = model.log_likelihood(train);
    std::cout << "experts=" << model.num_experts() << "\n"
              << "train_log_likelihood=" << real(ll) << "\n";
    if (test) std::cout << "test_log_likelihood=" << real(model.log_likelihood(*test)) << "\n";
    std::cout << "model=" << out.string() << "\n";
    for (const auto& p : written) std::cout << "report=" << p.string() << "\n";
    manifest.set("experts_trained", model.num_experts());
    manifest.finish("completed");
  } catch (const Error& e) {
    manifest.finish("failed", e.what());
    throw;
  }
  return 0;
}

struct EvalFlags {
  std::string model, data, manifest;
};

int cmd_eval(const EvalFlags& f, const std::vector<std::string>& argv) {
  const fs::path manifest_path =
      f.manifest.empty() ? sibling(f.model, ".eval.manifest.json") : fs::path(f.manifest);
  Manifest manifest(manifest_path, "eval", argv, {{"model", f.model}, {"data", f.data}});
  manifest.input(f.model);
  manifest.input(f.data);
  manifest.write();
  try {
    const UpoeModel model = load(f.model);
    const Dataset raw = datasets::load(f.data);
    const auto& t = model.preprocessing();
    const Dataset reduced = t ? preprocess::apply(*t, raw) : raw;
    const double ll = model.log_likelihood(reduced);
    std::cout << "n=" << raw.n() << "\n";
    std::cout << "mean_log_likelihood_reduced=" << real(ll) << "\n";
    json result = {{"n", raw.n()}, {"mean_log_likelihood_reduced", ll}};
    if (t && t->invertible()) {
      const double raw_ll = ll + preprocess::log_abs_det(*t);
      std::cout << "mean_log_likelihood_raw=" << real(raw_ll) << "\n";
      result["mean_log_likelihood_raw"] = raw_ll;
    }
    manifest.set("result", result);
    manifest.finish("completed");
  } catch (const Error& e) {
    manifest.finish("failed", e.what());
    throw;
  }
  return 0;
}

struct SampleFlags {
  std::string model, out;
  long n = 1000;
  std::uint64_t seed = 0;
};

int cmd_sample(const SampleFlags& f, const std::vector<std::string>& argv) {
  if (f.n < 0) throw CLI::ValidationError("--n", "must be non-negative");
  Manifest manifest(sibling(f.out, ".manifest.json"), "sample", argv,
                    {{"model", f.model}, {"n", f.n}, {"seed", f.seed}, {"out", f.out}});
  manifest.input(f.model);
  manifest.output(f.out);
  manifest.write();
  try {
    const UpoeModel model = load(f.model);
    experts::Rng rng = parallel::rng_stream(f.seed, 0x53414d50ULL);
    Dataset out;
    out.values = model.sample_points(f.n, rng);
    std::string space = "model";
    if (const auto& t = model.preprocessing()) {
      if (t->invertible()) {
        out.values = preprocess::unapply_rows(*t, out.values);
        space = "raw";
      } else {
        space = "reduced";
      }
    }
    datasets::save(out, f.out);
    std::cout << "samples=" << f.n << "\nspace=" << space << "\nout=" << f.out << "\n";
    manifest.set("space", space);
    manifest.finish("completed");
  } catch (const Error& e) {
    manifest.finish("failed", e.what());
    throw;
  }
  return 0;
}

struct InspectFlags {
  std::string model, data, out_prefix;
  int points = 512;
};

int cmd_inspect(const InspectFlags& f, const std::vector<std::string>& argv) {
  const std::string prefix = f.out_prefix;
  if (const fs::path dir = fs::path(prefix).parent_path(); !dir.empty()) {
    std::error_code ec;
    fs::create_directories(dir, ec);
  }
  Manifest manifest(prefix + "manifest.json", "inspect", argv,
                    {{"model", f.model}, {"data", f.data}, {"out-prefix", prefix},
                     {"points", f.points}});
  manifest.input(f.model);
  manifest.input(f.data);
  manifest.write();
  try {
    const UpoeModel model = load(f.model);
    const Dataset raw = datasets::load(f.data);
    const auto& t = model.preprocessing();
    const Dataset x = t ? preprocess::apply(*t, raw) : raw;
    if (x.dim() != model.dim()) {
      throw Error(ErrorCode::DimensionMismatch, "cli", "data and model dimensions differ");
    }
    const Eigen::Index J = model.num_experts();
    const Eigen::MatrixXd Z = x.values * model.directions().transpose();

    for (Eigen::Index j = 0; j < J; ++j) {
      const std::string tag = "expert" + std::to_string(j + 1);
      const Eigen::VectorXd z = Z.col(j);
      const auto hist = stats::freedman_diaconis_histogram(z);
      std::string text = "bin_left,bin_right,count\n";
      for (std::size_t b = 0; b < hist.counts.size(); ++b) {
        text += real(hist.edges[b]) + ',' + real(hist.edges[b + 1]) + ',' +
                std::to_string(hist.counts[b]) + '\n';
      }
      const fs::path hist_path = prefix + tag + "_hist.csv";
      write_text(hist_path, text);
      manifest.output(hist_path);

      const auto curve = stats::expert_curve(model.experts()[j], z, f.points);
      text = "z,density\n";
      for (std::size_t k = 0; k < curve.z.size(); ++k) {
        text += real(curve.z[k]) + ',' + real(curve.density[k]) + '\n';
      }
      const fs::path curve_path = prefix + tag + "_curve.csv";
      write_text(curve_path, text);
      manifest.output(curve_path);
    }

    // every projection per sample, for pairwise scatter plots
    std::string text;
    for (Eigen::Index j = 0; j < J; ++j) text += (j ? ",z" : "z") + std::to_string(j + 1);
    text += '\n';
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
      for (Eigen::Index j = 0; j < J; ++j) text += (j ? "," : "") + real(Z(i, j));
      text += '\n';
    }
    const fs::path scatter_path = prefix + "projections.csv";
    write_text(scatter_path, text);
    manifest.output(scatter_path);

    // directions mapped back to raw coordinates
    const Eigen::MatrixXd filters = t ? Eigen::MatrixXd(model.directions() * t->whitening)
                                      : Eigen::MatrixXd(model.directions());
    text.clear();
    for (Eigen::Index k = 0; k < filters.cols(); ++k) text += (k ? ",x" : "x") + std::to_string(k + 1);
    text += '\n';
    for (Eigen::Index j = 0; j < J; ++j) {
      for (Eigen::Index k = 0; k < filters.cols(); ++k) text += (k ? "," : "") + real(filters(j, k));
      text += '\n';
    }
    const fs::path filter_path = prefix + "filters.csv";
    write_text(filter_path, text);
    manifest.output(filter_path);

    std::cout << "experts=" << J << "\nmanifest=" << manifest.path().string() << "\n";
    manifest.finish("completed");
  } catch (const Error& e) {
    manifest.finish("failed", e.what());
    throw;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Under-complete product-of-experts density models", "upoe"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Fit a model to a dataset");
  train->add_option("--data", tf.data, "Training data (.csv or binary)")->required();
  train->add_option("--out", tf.out, "Model file to write")->required();
  train->add_option("--mode", tf.mode, "Training procedure")
      ->check(CLI::IsMember({"parallel", "sequential", "frozen-sequential"}));
  train->add_option("--experts", tf.experts, "Expert budget J")->check(CLI::NonNegativeNumber);
  train->add_option("--expert-kind", tf.expert_kind, "student-t or mixture-t:A");
  train->add_option("--test-data", tf.test_data, "Held-out data for test log-likelihoods");
  train->add_option("--seed", tf.seed, "Random seed");
  train->add_option("--config", "key=value file with flag defaults");
  train->add_flag("--pre-sphered", tf.pre_sphered, "Data is already sphered; skip preprocessing");
  train->add_option("--keep", tf.keep, "PCA dimensions: all, a count, or a variance fraction");
  train->add_option("--init", tf.init, "Parallel start: random rows or grow one row at a time")
      ->check(CLI::IsMember({"random", "grow"}));
  train->add_option("--eta", tf.eta, "Direction step size");
  train->add_option("--gamma", tf.gamma, "Expert step size");
  train->add_option("--epsilon", tf.epsilon, "Mixture EM step size");
  train->add_option("--tol", tf.tol, "Convergence threshold on the log-likelihood gain");
  train->add_option("--batch-size", tf.batch_size, "Mini-batch size");
  train->add_option("--max-iters", tf.max_iters, "Epochs (parallel) or inner iterations");
  train->add_option("--restarts", tf.restarts, "Random starts per direction search");
  train->add_option("--noise-floor", tf.noise_floor, "Accept a direction only if Q < -floor");
  train->add_flag("--no-stop", tf.no_stop, "Keep adding experts even when Q >= 0");
  train->add_flag("--holdout-stop", tf.holdout_stop, "Stop when Q on the test data is >= 0");
  train->add_option("--fix-beta", tf.fix_beta, "Hold every expert's beta at this value");
  train->add_flag("--fix-means", tf.fix_means, "Hold expert means at their starting values");
  train->add_flag("--fixed-steps", tf.fixed_steps, "Disable step-size adaptation");
  train->add_flag("--timing", tf.timing, "Record wall-clock seconds in the report");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Mean log-likelihood of a dataset");
  eval->add_option("--model", ef.model)->required();
  eval->add_option("--data", ef.data)->required();
  eval->add_option("--manifest", ef.manifest, "Manifest path (default <model>.eval.manifest.json)");

  SampleFlags sf;
  auto* sample = app.add_subcommand("sample", "Draw samples from a model");
  sample->add_option("--model", sf.model)->required();
  sample->add_option("--out", sf.out)->required();
  sample->add_option("--n", sf.n, "Number of samples");
  sample->add_option("--seed", sf.seed, "Random seed");

  InspectFlags inf;
  auto* inspect = app.add_subcommand("inspect", "Write plot data for each expert");
  inspect->add_option("--model", inf.model)->required();
  inspect->add_option("--data", inf.data)->required();
  inspect->add_option("--out-prefix", inf.out_prefix)->required();
  inspect->add_option("--points", inf.points, "Nodes of the fitted density curve")
      ->check(CLI::Range(2, 1 << 20));

  try {
    args = expand_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
    if (train->parsed()) return cmd_train(tf, args);
    if (eval->parsed()) return cmd_eval(ef, args);
    if (sample->parsed()) return cmd_sample(sf, args);
    return cmd_inspect(inf, args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "upoe: " << e.what() << "\n\n" << app.help();
    return kExitBadFlags;
  } catch (const Error& e) {
    std::cerr << "upoe: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "upoe: " << e.what() << "\n";
    return kExitFailure;
  }
}
