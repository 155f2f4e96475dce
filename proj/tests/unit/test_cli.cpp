#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "oracles.hpp"
#include "upoe/datasets.hpp"
#include "upoe/model.hpp"
#include "upoe/preprocess.hpp"
#include "upoe/stats.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "upoe_test_cli";

struct Run {
  int code;
  std::string out;
  std::string err;
};

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Run upoe(const std::string& args) {
  const std::string cmd = "cd '" + kWork.string() + "' && '" UPOE_CLI_PATH "' " + args +
                          " > stdout.txt 2> stderr.txt";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return {WEXITSTATUS(status), read(kWork / "stdout.txt"), read(kWork / "stderr.txt")};
}

// Numeric columns of a CSV with a one-line header.
std::vector<std::vector<double>> read_columns(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> cols(std::count(line.begin(), line.end(), ',') + 1);
  while (std::getline(in, line)) {
    std::stringstream row(line);
    std::string cell;
    for (auto& c : cols) {
      std::getline(row, cell, ',');
      c.push_back(std::stod(cell));
    }
  }
  return cols;
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double acc = 0;
  for (std::size_t i = 1; i < x.size(); ++i) acc += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return acc;
}

double field(const std::string& text, const std::string& key) {
  const auto pos = text.find(key + "=");
  REQUIRE(pos != std::string::npos);
  return std::stod(text.substr(pos + key.size() + 1));
}

nlohmann::json manifest(const std::string& name) { return nlohmann::json::parse(read(kWork / name)); }

// 3-D data with one heavy-tailed source, mixed and shifted.
oracle::Grid make_data(int n) {
  std::mt19937_64 rng(11);
  std::student_t_distribution<double> heavy(2.0);
  std::normal_distribution<double> normal;
  const double mix[3][3] = {{1.5, 0.4, 0.0}, {-0.3, 1.0, 0.2}, {0.1, 0.5, 0.8}};
  oracle::Grid rows;
  for (int i = 0; i < n; ++i) {
    const double s[3] = {heavy(rng), normal(rng), normal(rng)};
    std::vector<double> x(3);
    for (int a = 0; a < 3; ++a) {
      x[a] = 2.0 + a;
      for (int b = 0; b < 3; ++b) x[a] += mix[a][b] * s[b];
    }
    rows.push_back(x);
  }
  return rows;
}

void write_csv(const fs::path& p, const oracle::Grid& rows) {
  std::ofstream out(p);
  out.precision(17);
  for (const auto& r : rows) out << r[0] << ',' << r[1] << ',' << r[2] << '\n';
}

struct Workspace {
  oracle::Grid rows = make_data(1500);
  Workspace() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    write_csv(kWork / "data.csv", rows);
  }
};

}  // namespace

TEST_CASE_FIXTURE(Workspace, "train, eval, sample and inspect round trip") {
  Run r = upoe("train --data data.csv --out m.upoe --mode sequential --experts 2 --seed 3");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(kWork / "m.upoe"));
  CHECK(fs::exists(kWork / "m.report.csv"));
  CHECK(fs::exists(kWork / "m.report.experts.csv"));
  const auto m = manifest("m.manifest.json");
  CHECK(m["status"] == "completed");
  CHECK(m["command"] == "train");
  CHECK(m["config"]["seed"] == 3);
  CHECK(m.contains("library_version"));
  CHECK(m.contains("finished"));

  r = upoe("eval --model m.upoe --data data.csv");
  REQUIRE(r.code == 0);
  CHECK(field(r.out, "n") == 1500);
  const double trained = field(read(kWork / "stdout.txt"), "mean_log_likelihood_reduced");
  CHECK(std::isfinite(trained));
  CHECK(manifest("m.eval.manifest.json")["status"] == "completed");

  r = upoe("sample --model m.upoe --out s.csv --n 7 --seed 1");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("space=raw") != std::string::npos);
  const std::string samples = read(kWork / "s.csv");
  CHECK(std::count(samples.begin(), samples.end(), '\n') == 8);

  r = upoe("sample --model m.upoe --out empty.csv --n 0");
  REQUIRE(r.code == 0);
  CHECK(read(kWork / "empty.csv") == "x1,x2,x3\n");

  r = upoe("inspect --model m.upoe --data data.csv --out-prefix plots/run_");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(kWork / "plots/run_expert1_hist.csv"));
  CHECK(fs::exists(kWork / "plots/run_expert1_curve.csv"));
  CHECK(fs::exists(kWork / "plots/run_projections.csv"));
  CHECK(fs::exists(kWork / "plots/run_filters.csv"));
  CHECK(manifest("plots/run_manifest.json")["status"] == "completed");
}

TEST_CASE_FIXTURE(Workspace, "with no experts eval reports the Gaussian fit") {
  REQUIRE(upoe("train --data data.csv --out g.upoe --experts 0").code == 0);
  const Run r = upoe("eval --model g.upoe --data data.csv");
  REQUIRE(r.code == 0);

  const double D = 3.0, log2pi = std::log(2.0 * M_PI);
  CHECK(field(r.out, "mean_log_likelihood_reduced") ==
        doctest::Approx(-D / 2 * (log2pi + 1)).epsilon(1e-12));

  // maximum-likelihood Gaussian in raw space
  const double n = static_cast<double>(rows.size());
  std::vector<double> mean(3, 0.0);
  for (const auto& x : rows)
    for (int a = 0; a < 3; ++a) mean[a] += x[a] / n;
  oracle::Grid cov(3, std::vector<double>(3, 0.0));
  for (const auto& x : rows)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) cov[a][b] += (x[a] - mean[a]) * (x[b] - mean[b]) / n;
  const double expected = -D / 2 * (log2pi + 1) - 0.5 * std::log(oracle::lu_determinant(cov));
  CHECK(field(r.out, "mean_log_likelihood_raw") == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE_FIXTURE(Workspace, "same seed gives byte-identical outputs") {
  for (const std::string mode : {"parallel", "sequential"}) {
    const std::string base = "train --data data.csv --experts 1 --max-iters 20 --seed 5 --mode " + mode;
    REQUIRE(upoe(base + " --out a.upoe").code == 0);
    REQUIRE(upoe(base + " --out b.upoe").code == 0);
    CHECK(read(kWork / "a.upoe") == read(kWork / "b.upoe"));
    CHECK(read(kWork / "a.report.csv") == read(kWork / "b.report.csv"));
  }
  REQUIRE(upoe("sample --model a.upoe --out s1.csv --n 50 --seed 2").code == 0);
  REQUIRE(upoe("sample --model a.upoe --out s2.csv --n 50 --seed 2").code == 0);
  CHECK(read(kWork / "s1.csv") == read(kWork / "s2.csv"));
}

TEST_CASE_FIXTURE(Workspace, "config files supply defaults that flags override") {
  {
    std::ofstream cfg(kWork / "run.cfg");
    cfg << "# shared settings\nmode = parallel\nexperts=2\nmax-iters = 5\nseed=9\n";
  }
  REQUIRE(upoe("train --config run.cfg --data data.csv --out c.upoe --experts 1").code == 0);
  const auto m = manifest("c.manifest.json");
  CHECK(m["config"]["mode"] == "parallel");
  CHECK(m["config"]["experts"] == 1);
  CHECK(m["config"]["max-iters"] == 5);
  CHECK(m["config"]["seed"] == 9);

  {
    std::ofstream cfg(kWork / "bad.cfg");
    cfg << "mode parallel\n";
  }
  CHECK(upoe("train --config bad.cfg --data data.csv --out c.upoe").code == 2);
}

TEST_CASE_FIXTURE(Workspace, "exit codes") {
  SUBCASE("bad flags exit 2") {
    CHECK(upoe("train --data data.csv --out x.upoe --bogus").code == 2);
    CHECK(upoe("train --data data.csv --out x.upoe --mode nonsense").code == 2);
    CHECK(upoe("train --data data.csv").code == 2);
    CHECK(upoe("train --data data.csv --out x.upoe --expert-kind mixture-t:0").code == 2);
    CHECK(upoe("train --data data.csv --out x.upoe --eta -1").code == 2);
    CHECK(upoe("frobnicate").code == 2);
  }
  SUBCASE("data errors exit 3 and name the component") {
    Run r = upoe("train --data missing.csv --out x.upoe");
    CHECK(r.code == 3);
    CHECK(r.err.find("datasets") != std::string::npos);
    CHECK(manifest("x.manifest.json")["status"] == "failed");
    {
      std::ofstream bad(kWork / "ragged.csv");
      bad << "1,2,3\n4,5\n";
    }
    r = upoe("eval --model missing.upoe --data data.csv");
    CHECK(r.code == 3);
    CHECK(upoe("train --data ragged.csv --out x.upoe").code == 3);
  }
  SUBCASE("divergence exits 4") {
    const Run r = upoe("train --data data.csv --out x.upoe --mode parallel --experts 1 "
                       "--eta 1e6 --gamma 1e6 --fixed-steps");
    CHECK(r.code == 4);
    CHECK(r.err.find("parallel_trainer") != std::string::npos);
  }
}

TEST_CASE_FIXTURE(Workspace, "every output is listed in the manifest") {
  REQUIRE(upoe("train --data data.csv --out g.json --mode frozen-sequential --experts 2 "
               "--max-iters 10 --restarts 1").code == 0);
  const auto m = manifest("g.manifest.json");
  std::vector<std::string> outputs = m["outputs"];
  for (const std::string name : {"g.json", "g.report.csv", "g.report.experts.csv"}) {
    CHECK(std::find(outputs.begin(), outputs.end(), name) != outputs.end());
    CHECK(fs::exists(kWork / name));
  }
}

TEST_CASE_FIXTURE(Workspace, "parallel growth fits training data at least as well as frozen growth") {
  const std::string common = "--data data.csv --experts 2 --restarts 2 --seed 1 ";
  REQUIRE(upoe("train " + common + "--mode parallel --init grow --out par.upoe").code == 0);
  REQUIRE(upoe("train " + common + "--mode frozen-sequential --out seq.upoe").code == 0);
  const double par = field(upoe("eval --model par.upoe --data data.csv").out, "mean_log_likelihood_raw");
  const double seq = field(upoe("eval --model seq.upoe --data data.csv").out, "mean_log_likelihood_raw");
  CHECK(par >= seq - 1e-6);
}

TEST_CASE_FIXTURE(Workspace, "sampled projections have the experts' variance") {
  REQUIRE(upoe("train --data data.csv --out t.upoe --experts 1 --fix-beta 3 --seed 2").code == 0);
  REQUIRE(upoe("sample --model t.upoe --out big.bin --n 100000 --seed 8").code == 0);
  const upoe::UpoeModel model = upoe::load(kWork / "t.upoe");
  REQUIRE(model.num_experts() == 1);
  const auto t = std::get<upoe::experts::StudentT>(model.experts()[0]);
  REQUIRE(t.beta > 1.5);
  const upoe::Dataset raw = upoe::datasets::load(kWork / "big.bin");
  const Eigen::VectorXd z =
      upoe::preprocess::apply(*model.preprocessing(), raw).values * model.directions().row(0).transpose();
  const double var = (z.array() - z.mean()).square().mean();
  const double expected = 1.0 / (t.theta * t.theta * (t.beta - 1.5));
  CHECK(std::abs(var - expected) / expected < 0.05);
  CHECK(model.log_density_rows(upoe::preprocess::apply(*model.preprocessing(), raw).values).allFinite());
}

TEST_CASE_FIXTURE(Workspace, "inspect curves") {
  SUBCASE("a gaussian expert draws the standard normal") {
    upoe::UpoeModel m(3);
    m = m.add_expert(Eigen::Vector3d(0, 1, 0), upoe::experts::GaussianUnit{});
    upoe::save(m, kWork / "gauss.upoe");
    upoe::Dataset d;
    d.values = Eigen::MatrixXd::Zero(4, 3);
    d.values.col(1) << -1, 0, 1, 2;
    upoe::datasets::save(d, kWork / "few.csv");
    REQUIRE(upoe("inspect --model gauss.upoe --data few.csv --out-prefix g_").code == 0);
    const auto curve = read_columns(kWork / "g_expert1_curve.csv");
    REQUIRE(curve[0].size() == 512);
    for (std::size_t i = 0; i < curve[0].size(); ++i) {
      const double z = curve[0][i];
      CHECK(std::abs(curve[1][i] - std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI)) < 1e-15);
    }
    CHECK(std::abs(trapezoid(curve[0], curve[1]) - 1.0) < 1e-3);
    const auto filters = read_columns(kWork / "g_filters.csv");
    CHECK(filters[1][0] == 1.0);
  }
  SUBCASE("crabs-like data gives a bimodal first projection with modes near the fixed means") {
    const auto crabs = upoe::datasets::gen_crabs_like(50, 1);
    upoe::datasets::save(crabs.data, kWork / "crabs.csv");
    REQUIRE(upoe("train --data crabs.csv --out c.upoe --experts 1 --expert-kind mixture-t:2 "
                 "--fix-beta 20 --fix-means --seed 1").code == 0);
    REQUIRE(upoe("inspect --model c.upoe --data crabs.csv --out-prefix c_").code == 0);

    const auto curve = read_columns(kWork / "c_expert1_curve.csv");
    CHECK(std::abs(trapezoid(curve[0], curve[1]) - 1.0) < 1e-3);
    std::vector<double> modes;
    for (std::size_t i = 1; i + 1 < curve[1].size(); ++i) {
      if (curve[1][i] > curve[1][i - 1] && curve[1][i] >= curve[1][i + 1]) modes.push_back(curve[0][i]);
    }
    REQUIRE(modes.size() == 2);
    CHECK(std::abs(modes[0] + 1.0) < 0.1);
    CHECK(std::abs(modes[1] - 1.0) < 0.1);

    const auto z = read_columns(kWork / "c_projections.csv")[0];
    CHECK(upoe::stats::dip_statistic(z) > upoe::stats::dip_normal_threshold(200, 0.99, 500, 3));
    const auto hist = read_columns(kWork / "c_expert1_hist.csv");
    double total = 0;
    for (double c : hist[2]) total += c;
    CHECK(total == 200);
  }
}
