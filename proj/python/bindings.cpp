#include <pybind11/eigen.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "upoe/datasets.hpp"
#include "upoe/error.hpp"
#include "upoe/experts.hpp"
#include "upoe/model.hpp"
#include "upoe/parallel_trainer.hpp"
#include "upoe/preprocess.hpp"
#include "upoe/sequential_trainer.hpp"
#include "upoe/stats.hpp"
#include "upoe/version.hpp"

namespace py = pybind11;
using namespace upoe;
using namespace pybind11::literals;

namespace {

Dataset as_dataset(const Eigen::MatrixXd& X) {
  Dataset d;
  d.values = X;
  return d;
}

preprocess::Keep make_keep(std::optional<Eigen::Index> dims, std::optional<double> fraction) {
  if (dims && fraction) throw py::value_error("give at most one of dims and variance_fraction");
  if (dims) return preprocess::Keep::dims(*dims);
  if (fraction) return preprocess::Keep::variance_fraction(*fraction);
  return preprocess::Keep::all();
}

std::optional<Dataset> optional_dataset(const std::optional<Eigen::MatrixXd>& X) {
  if (!X) return std::nullopt;
  return as_dataset(*X);
}

}  // namespace

PYBIND11_MODULE(_upoe, m) {
  m.doc() = "Under-complete product-of-experts density models";
  m.attr("__version__") = std::string(kVersion);

  static py::exception<Error> error_type(m, "UpoeError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type)(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      exc.attr("component") = e.component();
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  // experts
  py::class_<experts::GaussianUnit>(m, "GaussianUnit")
      .def(py::init<>())
      .def("__repr__", [](const experts::GaussianUnit&) { return "GaussianUnit()"; });

  py::class_<experts::StudentT>(m, "StudentT")
      .def(py::init([](double mu, double theta, double beta) {
             return experts::StudentT{mu, theta, beta};
           }),
           "mu"_a = 0.0, "theta"_a = 1.0, "beta"_a = 2.0)
      .def_readwrite("mu", &experts::StudentT::mu)
      .def_readwrite("theta", &experts::StudentT::theta)
      .def_readwrite("beta", &experts::StudentT::beta)
      .def(py::self == py::self)
      .def("__repr__", [](const experts::StudentT& t) {
        return "StudentT(mu=" + std::to_string(t.mu) + ", theta=" + std::to_string(t.theta) +
               ", beta=" + std::to_string(t.beta) + ")";
      });

  py::class_<experts::MixtureT>(m, "MixtureT")
      .def(py::init([](std::vector<experts::StudentT> components, std::vector<double> weights) {
             return experts::MixtureT{std::move(components), std::move(weights)};
           }),
           "components"_a, "weights"_a)
      .def_readwrite("components", &experts::MixtureT::components)
      .def_readwrite("weights", &experts::MixtureT::weights);

  py::class_<experts::FreezeMask>(m, "FreezeMask")
      .def(py::init([](bool mu, bool theta, bool beta, bool weights) {
             return experts::FreezeMask{mu, theta, beta, weights};
           }),
           "mu"_a = false, "theta"_a = false, "beta"_a = false, "weights"_a = false)
      .def_readwrite("mu", &experts::FreezeMask::mu)
      .def_readwrite("theta", &experts::FreezeMask::theta)
      .def_readwrite("beta", &experts::FreezeMask::beta)
      .def_readwrite("weights", &experts::FreezeMask::weights);

  m.def("expert_log_density",
        [](const experts::Expert& e, const Eigen::VectorXd& z) { return experts::log_density(e, z); },
        "expert"_a, "z"_a);
  m.def("expert_log_normalizer", &experts::log_normalizer, "expert"_a);
  m.def("sample_expert",
        [](const experts::Expert& e, Eigen::Index n, std::uint64_t seed) {
          experts::Rng rng(seed);
          return experts::sample(e, n, rng);
        },
        "expert"_a, "n"_a, "seed"_a = 0);
  m.def("fit_mixture",
        [](const experts::MixtureT& init, const Eigen::VectorXd& z, double epsilon, int max_iters,
           double tol) {
          experts::MixtureFitOptions o;
          o.em.step = epsilon;
          o.max_iters = max_iters;
          o.tol = tol;
          return experts::fit_mixture(init, z, o);
        },
        "init"_a, "z"_a, "epsilon"_a = 0.1, "max_iters"_a = 500, "tol"_a = 1e-10,
        "Returns the fitted mixture and the mean log-density after each iteration.");

  // preprocessing
  py::class_<preprocess::PreprocessTransform>(m, "PreprocessTransform")
      .def_readonly("mean", &preprocess::PreprocessTransform::mean)
      .def_readonly("whitening", &preprocess::PreprocessTransform::whitening)
      .def_readonly("pca_basis", &preprocess::PreprocessTransform::pca_basis)
      .def_readonly("eigenvalues", &preprocess::PreprocessTransform::eigenvalues)
      .def_property_readonly("invertible", &preprocess::PreprocessTransform::invertible)
      .def("apply",
           [](const preprocess::PreprocessTransform& t, const Eigen::MatrixXd& X) {
             return preprocess::apply(t, as_dataset(X)).values;
           })
      .def("unapply",
           [](const preprocess::PreprocessTransform& t, const Eigen::MatrixXd& X) {
             return preprocess::unapply_rows(t, X);
           })
      .def_property_readonly("log_abs_det", &preprocess::log_abs_det);

  m.def("fit_preprocess",
        [](const Eigen::MatrixXd& X, std::optional<Eigen::Index> dims,
           std::optional<double> fraction) { return preprocess::fit(X, make_keep(dims, fraction)); },
        "X"_a, "dims"_a = py::none(), "variance_fraction"_a = py::none());
  m.def("sphering_error", &preprocess::sphering_error, "X"_a);

  // model
  py::class_<UpoeModel>(m, "UpoeModel")
      .def(py::init<Eigen::Index>(), "dim"_a)
      .def(py::init<const linalg::Matrix&, std::vector<experts::Expert>>(), "directions"_a,
           "experts"_a)
      .def_property_readonly("dim", &UpoeModel::dim)
      .def_property_readonly("num_experts", &UpoeModel::num_experts)
      .def_property_readonly("directions", &UpoeModel::directions)
      .def_property_readonly("experts", &UpoeModel::experts)
      .def_property_readonly("preprocessing", &UpoeModel::preprocessing)
      .def("with_preprocessing", &UpoeModel::with_preprocessing, "transform"_a)
      .def("log_density", &UpoeModel::log_density_rows, "X"_a)
      .def("log_likelihood",
           py::overload_cast<const Eigen::MatrixXd&>(&UpoeModel::log_likelihood, py::const_),
           "X"_a)
      .def("sample",
           [](const UpoeModel& model, Eigen::Index n, std::uint64_t seed) {
             experts::Rng rng = parallel::rng_stream(seed, 0x53414d50ULL);
             return model.sample_points(n, rng);
           },
           "n"_a, "seed"_a = 0)
      .def("add_expert", &UpoeModel::add_expert, "direction"_a, "expert"_a)
      .def("orthonormality_error", &UpoeModel::orthonormality_error)
      .def("to_json", [](const UpoeModel& model) { return to_json(model); })
      .def_static("from_json", &from_json, "text"_a)
      .def("save", [](const UpoeModel& model, const std::filesystem::path& p) { save(model, p); })
      .def_static("load", [](const std::filesystem::path& p) { return load(p); });

  // training
  py::class_<IterationRecord>(m, "IterationRecord")
      .def_readonly("iteration", &IterationRecord::iteration)
      .def_readonly("train_ll", &IterationRecord::train_ll)
      .def_readonly("test_ll", &IterationRecord::test_ll)
      .def_readonly("step_eta", &IterationRecord::step_eta)
      .def_readonly("step_gamma", &IterationRecord::step_gamma);
  py::class_<ExpertRecord>(m, "ExpertRecord")
      .def_readonly("expert_index", &ExpertRecord::expert_index)
      .def_readonly("restart", &ExpertRecord::restart)
      .def_readonly("q", &ExpertRecord::q)
      .def_readonly("train_ll", &ExpertRecord::train_ll)
      .def_readonly("test_ll", &ExpertRecord::test_ll);
  py::class_<TrainReport>(m, "TrainReport")
      .def_readonly("iterations", &TrainReport::iterations)
      .def_readonly("experts", &TrainReport::experts)
      .def_readonly("warnings", &TrainReport::warnings)
      .def("iterations_csv", &TrainReport::iterations_csv, "timing"_a = false)
      .def("experts_csv", &TrainReport::experts_csv);

  py::class_<parallel::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("eta", &parallel::TrainConfig::eta)
      .def_readwrite("gamma", &parallel::TrainConfig::gamma)
      .def_readwrite("epsilon", &parallel::TrainConfig::epsilon)
      .def_readwrite("batch_size", &parallel::TrainConfig::batch_size)
      .def_readwrite("max_iters", &parallel::TrainConfig::max_iters)
      .def_readwrite("tol", &parallel::TrainConfig::tol)
      .def_readwrite("seed", &parallel::TrainConfig::seed)
      .def_readwrite("adaptive", &parallel::TrainConfig::adaptive)
      .def_readwrite("expert_template", &parallel::TrainConfig::expert_template)
      .def_readwrite("mask", &parallel::TrainConfig::mask);

  py::class_<sequential::SequentialConfig>(m, "SequentialConfig")
      .def(py::init<>())
      .def_readwrite("max_experts", &sequential::SequentialConfig::max_experts)
      .def_readwrite("inner", &sequential::SequentialConfig::inner)
      .def_readwrite("restarts", &sequential::SequentialConfig::restarts)
      .def_readwrite("stop_on_nonnegative_q", &sequential::SequentialConfig::stop_on_nonnegative_q)
      .def_readwrite("noise_floor", &sequential::SequentialConfig::noise_floor)
      .def_readwrite("holdout_stop", &sequential::SequentialConfig::holdout_stop);

  m.def("train_parallel",
        [](const Eigen::MatrixXd& X, Eigen::Index J, const parallel::TrainConfig& config,
           std::optional<UpoeModel> init, std::optional<Eigen::MatrixXd> test) {
          const auto test_set = optional_dataset(test);
          py::gil_scoped_release release;
          return parallel::train_parallel(as_dataset(X), J, init, config,
                                          {0, test_set ? &*test_set : nullptr});
        },
        "X"_a, "experts"_a, "config"_a = parallel::TrainConfig{}, "init"_a = py::none(),
        "test"_a = py::none());
  m.def("train_sequential",
        [](const Eigen::MatrixXd& X, const sequential::SequentialConfig& config,
           std::optional<Eigen::MatrixXd> test) {
          const auto test_set = optional_dataset(test);
          py::gil_scoped_release release;
          return sequential::train_sequential(as_dataset(X), config,
                                              test_set ? &*test_set : nullptr);
        },
        "X"_a, "config"_a = sequential::SequentialConfig{}, "test"_a = py::none());
  m.def("train_growing",
        [](const Eigen::MatrixXd& X, Eigen::Index J, bool frozen,
           const parallel::TrainConfig& config, int restarts, std::optional<Eigen::MatrixXd> test) {
          const auto test_set = optional_dataset(test);
          py::gil_scoped_release release;
          return parallel::train_growing(
              as_dataset(X), J,
              frozen ? parallel::Growth::FrozenSequential : parallel::Growth::Parallel, config,
              restarts, test_set ? &*test_set : nullptr);
        },
        "X"_a, "experts"_a, "frozen"_a = false, "config"_a = parallel::TrainConfig{},
        "restarts"_a = 5, "test"_a = py::none());

  m.def("projection_index",
        [](const Eigen::VectorXd& w, const experts::Expert& e, const Eigen::MatrixXd& X) {
          const auto v = sequential::projection_index(w, e, X);
          return py::dict("q"_a = v.q, "energy_term"_a = v.energy_term,
                          "log_normalizer"_a = v.log_normalizer, "constant"_a = v.constant);
        },
        "direction"_a, "expert"_a, "X"_a);

  // data and diagnostics
  m.def("load_data", [](const std::filesystem::path& p) { return datasets::load(p).values; },
        "path"_a);
  m.def("save_data",
        [](const Eigen::MatrixXd& X, const std::filesystem::path& p) {
          datasets::save(as_dataset(X), p);
        },
        "X"_a, "path"_a);
  m.def("dip_statistic", &stats::dip_statistic, "samples"_a);
}
