#include "upoe/datasets.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "upoe/error.hpp"

namespace upoe::datasets {
namespace {

constexpr std::string_view kComponent = "datasets";
constexpr char kMagic[4] = {'U', 'P', 'D', '1'};

static_assert(std::endian::native == std::endian::little,
              "binary dataset I/O assumes a little-endian host");

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    const std::string field =
        trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos
                                                                              : comma - start));
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    if (!field.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (field.empty() || ec != std::errc() || ptr != last) return false;
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return true;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, kComponent, "cannot open " + path.string());
  std::vector<double> flat;
  std::vector<double> row;
  std::string line;
  Eigen::Index dim = -1;
  std::size_t line_no = 0;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!parse_row(line, row)) {
      if (rows == 0 && dim < 0) {
        // header: remember its arity so data rows can be checked against it
        dim = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
        continue;
      }
      throw Error(ErrorCode::ParseError, kComponent,
                  path.string() + ": row " + std::to_string(line_no) + " is not numeric");
    }
    if (dim < 0) dim = static_cast<Eigen::Index>(row.size());
    if (static_cast<Eigen::Index>(row.size()) != dim) {
      throw Error(ErrorCode::ParseError, kComponent,
                  path.string() + ": row " + std::to_string(line_no) + " has " +
                      std::to_string(row.size()) + " fields, expected " + std::to_string(dim));
    }
    flat.insert(flat.end(), row.begin(), row.end());
    ++rows;
  }
  Dataset out;
  out.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), rows, std::max<Eigen::Index>(dim, 0));
  out.provenance = path.filename().string();
  return out;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, kComponent, "cannot write " + path.string());
  for (Eigen::Index k = 0; k < data.dim(); ++k) out << (k ? ",x" : "x") << k + 1;
  out << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (Eigen::Index k = 0; k < data.dim(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", data.values(i, k));
      if (k) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, kComponent, "write failed for " + path.string());
}

Dataset load_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, kComponent, "cannot open " + path.string());
  char magic[4];
  std::uint64_t n = 0, d = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  in.read(reinterpret_cast<char*>(&d), sizeof d);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::ParseError, kComponent, path.string() + ": bad binary header");
  }
  if (d == 0 && n > 0) throw Error(ErrorCode::ParseError, kComponent, "zero-width rows");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> buf(
      static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(n * d * sizeof(double)));
  if (!in) throw Error(ErrorCode::ParseError, kComponent, path.string() + ": truncated payload");
  Dataset out;
  out.values = buf;
  out.provenance = path.filename().string();
  return out;
}

void save_binary(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, kComponent, "cannot write " + path.string());
  const std::uint64_t n = static_cast<std::uint64_t>(data.n());
  const std::uint64_t d = static_cast<std::uint64_t>(data.dim());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = data.values;
  out.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(n * d * sizeof(double)));
  if (!out) throw Error(ErrorCode::IoError, kComponent, "write failed for " + path.string());
}

Dataset load(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? load_csv(path) : load_binary(path);
}

void save(const Dataset& data, const std::filesystem::path& path) {
  if (path.extension() == ".csv") {
    save_csv(data, path);
  } else {
    save_binary(data, path);
  }
}

std::pair<Dataset, Dataset> split(const Dataset& data, Eigen::Index train_n, std::uint64_t seed) {
  if (train_n <= 0 || train_n >= data.n()) {
    throw Error(ErrorCode::BadSplit, kComponent,
                "train size " + std::to_string(train_n) + " must lie strictly between 0 and " +
                    std::to_string(data.n()));
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.n()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit uniform draw (std::shuffle is implementation defined)
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i)(rng);
    std::swap(order[i], order[j]);
  }
  auto take = [&](std::size_t begin, std::size_t end) {
    Dataset part;
    part.values.resize(static_cast<Eigen::Index>(end - begin), data.dim());
    for (std::size_t i = begin; i < end; ++i) {
      part.values.row(static_cast<Eigen::Index>(i - begin)) = data.values.row(order[i]);
    }
    part.provenance = data.provenance;
    return part;
  };
  const std::size_t cut = static_cast<std::size_t>(train_n);
  return {take(0, cut), take(cut, order.size())};
}

PlantedDataset gen_planted_upoe(Eigen::Index dim, const Eigen::MatrixXd& directions,
                                std::vector<experts::Expert> experts, Eigen::Index n,
                                std::uint64_t seed) {
  if (directions.cols() != dim) {
    throw Error(ErrorCode::DimensionMismatch, kComponent, "directions do not match dim");
  }
  UpoeModel truth = directions.rows() == 0 ? UpoeModel(dim)
                                           : UpoeModel(directions, std::move(experts));
  experts::Rng rng(seed);
  Dataset data;
  data.values = truth.sample_points(n, rng);
  data.provenance = "planted_upoe(seed=" + std::to_string(seed) + ")";
  return {std::move(data), std::move(truth)};
}

LabeledDataset gen_crabs_like(Eigen::Index n_per_class, std::uint64_t seed) {
  if (n_per_class < 1) throw Error(ErrorCode::InvalidArgument, kComponent, "n_per_class < 1");
  constexpr int D = 5;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // common size factor loading on every measurement
  Eigen::VectorXd size_loading(D);
  size_loading << 1.0, 0.9, 1.1, 1.0, 0.8;
  // form axis (the super-clusters) and sex axis, orthogonal to each other and to the size factor
  const Eigen::VectorXd size_dir = size_loading.normalized();
  Eigen::VectorXd form_axis(D), sex_axis(D);
  form_axis << 0.6, -0.5, 0.1, 0.5, -0.36;
  form_axis -= size_dir.dot(form_axis) * size_dir;
  form_axis.normalize();
  sex_axis << 0.3, 0.5, -0.6, 0.2, 0.5;
  sex_axis -= size_dir.dot(sex_axis) * size_dir;
  sex_axis -= form_axis.dot(sex_axis) * form_axis;
  sex_axis.normalize();
  const double form_sep = 3.0;
  const double sex_sep = 1.2;
  const double size_sd = 3.0;
  const double noise_sd = 0.5;

  LabeledDataset out;
  out.data.values.resize(4 * n_per_class, D);
  Eigen::Index row = 0;
  for (int label = 0; label < 4; ++label) {
    const double form = label / 2 == 0 ? -1.0 : 1.0;
    const double sex = label % 2 == 0 ? -1.0 : 1.0;
    const Eigen::VectorXd center = 10.0 * Eigen::VectorXd::Ones(D) + form_sep * form * form_axis +
                                   sex_sep * sex * sex_axis;
    for (Eigen::Index i = 0; i < n_per_class; ++i, ++row) {
      Eigen::VectorXd x = center + size_sd * normal(rng) * size_loading;
      for (int k = 0; k < D; ++k) x(k) += noise_sd * normal(rng);
      out.data.values.row(row) = x.transpose();
      out.labels.push_back(label);
      out.super_labels.push_back(label / 2);
    }
  }
  out.data.provenance = "crabs_like(seed=" + std::to_string(seed) + ")";
  return out;
}

Dataset gen_standard_normal(Eigen::Index n, Eigen::Index dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset out;
  out.values.resize(n, dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < dim; ++k) out.values(i, k) = normal(rng);
  out.provenance = "standard_normal(seed=" + std::to_string(seed) + ")";
  return out;
}

}  // namespace upoe::datasets
