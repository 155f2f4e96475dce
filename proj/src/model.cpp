#include "upoe/model.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "upoe/error.hpp"

namespace upoe {
namespace {

constexpr std::string_view kComponent = "upoe_model";
constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr int kFormatVersion = 1;

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < M.cols(); ++k) row.push_back(M(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index cols) {
  Eigen::MatrixXd M(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != static_cast<std::size_t>(cols)) {
      throw Error(ErrorCode::FormatError, kComponent, "matrix row " + std::to_string(i) + " has wrong width");
    }
    for (Eigen::Index k = 0; k < cols; ++k) M(static_cast<Eigen::Index>(i), k) = j[i][k].get<double>();
  }
  return M;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

json t_to_json(const experts::StudentT& p) {
  return {{"mu", p.mu}, {"theta", p.theta}, {"beta", p.beta}};
}

experts::StudentT t_from_json(const json& j) {
  return {j.at("mu").get<double>(), j.at("theta").get<double>(), j.at("beta").get<double>()};
}

json expert_to_json(const experts::Expert& e) {
  if (std::holds_alternative<experts::GaussianUnit>(e)) return {{"kind", "gaussian_unit"}};
  if (const auto* t = std::get_if<experts::StudentT>(&e)) {
    json out = t_to_json(*t);
    out["kind"] = "student_t";
    return out;
  }
  const auto& m = std::get<experts::MixtureT>(e);
  json comps = json::array();
  for (const auto& c : m.components) comps.push_back(t_to_json(c));
  return {{"kind", "mixture_t"}, {"weights", m.weights}, {"components", comps}};
}

experts::Expert expert_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gaussian_unit") return experts::GaussianUnit{};
  if (kind == "student_t") return t_from_json(j);
  if (kind == "mixture_t") {
    experts::MixtureT m;
    m.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& c : j.at("components")) m.components.push_back(t_from_json(c));
    return m;
  }
  throw Error(ErrorCode::FormatError, kComponent, "unknown expert kind '" + kind + "'");
}

void require_dim(Eigen::Index expected, Eigen::Index got) {
  if (expected != got) {
    throw Error(ErrorCode::DimensionMismatch, kComponent,
                "model dimension " + std::to_string(expected) + ", input dimension " +
                    std::to_string(got));
  }
}

}  // namespace

UpoeModel::UpoeModel(Eigen::Index dim) : basis_(linalg::ProjectionBasis::empty(dim)) {}

UpoeModel::UpoeModel(const linalg::Matrix& W, std::vector<experts::Expert> experts,
                     std::optional<preprocess::PreprocessTransform> preprocessing)
    : basis_(linalg::ProjectionBasis::from_directions(W)),
      experts_(std::move(experts)),
      preprocessing_(std::move(preprocessing)) {
  if (static_cast<Eigen::Index>(experts_.size()) != W.rows()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent,
                std::to_string(W.rows()) + " directions but " + std::to_string(experts_.size()) +
                    " experts");
  }
  for (const auto& e : experts_) experts::validate(e);
  if (preprocessing_ && preprocessing_->kept() != W.cols()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent,
                "preprocessing output dimension does not match the model");
  }
}

UpoeModel UpoeModel::with_preprocessing(std::optional<preprocess::PreprocessTransform> t) const {
  if (t && t->kept() != dim()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent,
                "preprocessing output dimension does not match the model");
  }
  UpoeModel out = *this;
  out.preprocessing_ = std::move(t);
  return out;
}

UpoeModel UpoeModel::with_experts(std::vector<experts::Expert> experts) const {
  if (experts.size() != experts_.size()) {
    throw Error(ErrorCode::DimensionMismatch, kComponent, "expert count changed");
  }
  for (const auto& e : experts) experts::validate(e);
  UpoeModel out = *this;
  out.experts_ = std::move(experts);
  return out;
}

double UpoeModel::log_density(const Eigen::VectorXd& x) const {
  require_dim(dim(), x.size());
  return log_density_rows(x.transpose())(0);
}

Eigen::VectorXd UpoeModel::log_density_rows(const Eigen::MatrixXd& X) const {
  require_dim(dim(), X.cols());
  const Eigen::Index gaussian_dims = basis_.complement.rows();
  Eigen::VectorXd out = Eigen::VectorXd::Constant(X.rows(), basis_.log_det_gram -
                                                                gaussian_dims * kHalfLog2Pi);
  if (gaussian_dims > 0) {
    const Eigen::MatrixXd Y = X * basis_.complement.transpose();
    out -= 0.5 * Y.rowwise().squaredNorm();
  }
  if (num_experts() > 0) {
    const Eigen::MatrixXd Z = X * basis_.W.transpose();
    for (Eigen::Index j = 0; j < num_experts(); ++j) {
      out += experts::log_density(experts_[j], Z.col(j));
    }
  }
  return out;
}

double UpoeModel::log_likelihood(const Eigen::MatrixXd& X) const {
  if (X.rows() == 0) throw Error(ErrorCode::EmptyDataset, kComponent, "no samples");
  return log_density_rows(X).mean();
}

double UpoeModel::log_likelihood(const Dataset& data) const { return log_likelihood(data.values); }

std::vector<ModelSample> UpoeModel::sample(Eigen::Index n, experts::Rng& rng) const {
  std::vector<ModelSample> out;
  out.reserve(static_cast<std::size_t>(n));
  const Eigen::Index J = num_experts();
  const Eigen::Index G = basis_.complement.rows();
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    ModelSample s;
    s.z.resize(J);
    for (Eigen::Index j = 0; j < J; ++j) s.z(j) = experts::sample(experts_[j], rng);
    s.y.resize(G);
    for (Eigen::Index g = 0; g < G; ++g) s.y(g) = normal(rng);
    s.x = Eigen::VectorXd::Zero(dim());
    if (J > 0) s.x += basis_.pinv * s.z;
    if (G > 0) s.x += basis_.complement.transpose() * s.y;
    out.push_back(std::move(s));
  }
  return out;
}

Eigen::MatrixXd UpoeModel::sample_points(Eigen::Index n, experts::Rng& rng) const {
  const auto draws = sample(n, rng);
  Eigen::MatrixXd X(n, dim());
  for (Eigen::Index i = 0; i < n; ++i) X.row(i) = draws[static_cast<std::size_t>(i)].x.transpose();
  return X;
}

UpoeModel UpoeModel::add_expert(const Eigen::VectorXd& w_hat, experts::Expert expert) const {
  require_dim(dim(), w_hat.size());
  if (num_experts() == dim()) {
    throw Error(ErrorCode::ModelFull, kComponent, "model already has D experts");
  }
  if (std::abs(w_hat.norm() - 1.0) > 1e-10) {
    throw Error(ErrorCode::NotOrthogonal, kComponent,
                "direction norm " + std::to_string(w_hat.norm()) + " is not 1");
  }
  if (num_experts() > 0) {
    const double overlap = (basis_.W * w_hat).cwiseAbs().maxCoeff();
    if (overlap > 1e-8) {
      throw Error(ErrorCode::NotOrthogonal, kComponent,
                  "direction overlaps existing rows by " + std::to_string(overlap));
    }
  }
  linalg::Matrix W(num_experts() + 1, dim());
  W.topRows(num_experts()) = basis_.W;
  W.row(num_experts()) = w_hat.transpose();
  std::vector<experts::Expert> ex = experts_;
  ex.push_back(std::move(expert));
  return UpoeModel(W, std::move(ex), preprocessing_);
}

double UpoeModel::orthonormality_error() const {
  if (num_experts() == 0) return 0.0;
  return (basis_.W * basis_.W.transpose() -
          Eigen::MatrixXd::Identity(num_experts(), num_experts()))
      .cwiseAbs()
      .maxCoeff();
}

std::string to_json(const UpoeModel& model) {
  json doc;
  doc["format"] = "upoe-model";
  doc["version"] = kFormatVersion;
  doc["dim"] = model.dim();
  doc["W"] = matrix_to_json(model.directions());
  json ex = json::array();
  for (const auto& e : model.experts()) ex.push_back(expert_to_json(e));
  doc["experts"] = ex;
  if (const auto& t = model.preprocessing()) {
    doc["preprocessing"] = {{"mean", vector_to_json(t->mean)},
                            {"whitening", matrix_to_json(t->whitening)},
                            {"pca_basis", matrix_to_json(t->pca_basis)},
                            {"eigenvalues", vector_to_json(t->eigenvalues)}};
  }
  return doc.dump(1) + "\n";
}

UpoeModel from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != "upoe-model") {
      throw Error(ErrorCode::FormatError, kComponent, "not a upoe-model document");
    }
    if (doc.at("version").get<int>() != kFormatVersion) {
      throw Error(ErrorCode::FormatError, kComponent,
                  "unsupported version " + std::to_string(doc.at("version").get<int>()));
    }
    const Eigen::Index D = doc.at("dim").get<Eigen::Index>();
    if (D < 1) throw Error(ErrorCode::FormatError, kComponent, "dim must be positive");
    const Eigen::MatrixXd W = matrix_from_json(doc.at("W"), D);
    std::vector<experts::Expert> ex;
    for (const auto& e : doc.at("experts")) ex.push_back(expert_from_json(e));
    std::optional<preprocess::PreprocessTransform> pre;
    if (doc.contains("preprocessing")) {
      const json& p = doc.at("preprocessing");
      preprocess::PreprocessTransform t;
      t.mean = vector_from_json(p.at("mean"));
      t.whitening = matrix_from_json(p.at("whitening"), t.mean.size());
      t.pca_basis = matrix_from_json(p.at("pca_basis"), t.mean.size());
      t.eigenvalues = vector_from_json(p.at("eigenvalues"));
      pre = std::move(t);
    }
    if (W.rows() == 0) {
      if (!ex.empty()) throw Error(ErrorCode::FormatError, kComponent, "experts without directions");
      return UpoeModel(D).with_preprocessing(std::move(pre));
    }
    return UpoeModel(W, std::move(ex), std::move(pre));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, kComponent, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::FormatError) throw;
    throw Error(ErrorCode::FormatError, kComponent, e.what());
  }
}

void save(const UpoeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, kComponent, "cannot write " + path.string());
  out << to_json(model);
  if (!out) throw Error(ErrorCode::IoError, kComponent, "write failed for " + path.string());
}

UpoeModel load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, kComponent, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace upoe
