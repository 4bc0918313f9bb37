#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lfscore/cli.hpp"
#include "lfscore/error.hpp"
#include "lfscore/harness.hpp"
#include "lfscore/lfp.hpp"
#include "lfscore/scores.hpp"
#include "lfscore/testing.hpp"

#include <sstream>

namespace py = pybind11;
using namespace lfs;

namespace {

// exception types live for the whole process
PyObject* err_base = nullptr;
PyObject* err_usage = nullptr;
PyObject* err_data = nullptr;
PyObject* err_numerical = nullptr;

void raise(const Error& e) {
    PyObject* type = e.kind() == ErrorKind::InvalidArgument ? err_usage
                     : e.kind() == ErrorKind::Data          ? err_data
                                                            : err_numerical;
    py::object exc = py::reinterpret_borrow<py::object>(type)(e.what());
    exc.attr("code") = e.code();
    PyErr_SetObject(type, exc.ptr());
}

ModelSpec make_spec(const std::string& model, int k1, int k2, bool intercept, int quad_order) {
    ModelSpec s{parse_model_kind(model), k1, k2, intercept, quad_order};
    s.validate();
    return s;
}

Eigen::VectorXd or_zero(const std::optional<Eigen::VectorXd>& v, int n) {
    return v ? *v : Eigen::VectorXd(Eigen::VectorXd::Zero(n));
}

py::tuple density(const DensityRow& r) {
    Eigen::VectorXd q(r.n);
    for (int i = 0; i < r.n; ++i) q(i) = r.q[i];
    return py::make_tuple(q, to_string(r.region));
}

}  // namespace

PYBIND11_MODULE(_lfscore, m) {
    m.doc() = "score tests for incomplete discrete-outcome models";

    err_base = PyErr_NewException("lfscore.LfsError", PyExc_RuntimeError, nullptr);
    err_usage = PyErr_NewException("lfscore.UsageError", err_base, nullptr);
    err_data = PyErr_NewException("lfscore.DataError", err_base, nullptr);
    err_numerical = PyErr_NewException("lfscore.NumericalError", err_base, nullptr);
    m.add_object("LfsError", py::handle(err_base));
    m.add_object("UsageError", py::handle(err_usage));
    m.add_object("DataError", py::handle(err_data));
    m.add_object("NumericalError", py::handle(err_numerical));
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            raise(e);
        }
    });

    py::class_<ModelSpec>(m, "ModelSpec")
        .def(py::init(&make_spec), py::arg("model") = "game2x2", py::arg("k1") = 1, py::arg("k2") = 1,
             py::arg("intercept") = false, py::arg("quad_order") = 32)
        .def_property_readonly("model", [](const ModelSpec& s) { return to_string(s.kind); })
        .def_readonly("k1", &ModelSpec::k1)
        .def_readonly("k2", &ModelSpec::k2)
        .def_readonly("intercept", &ModelSpec::intercept)
        .def_readonly("quad_order", &ModelSpec::quad_order)
        .def_property_readonly("d_beta", &ModelSpec::d_beta)
        .def_property_readonly("d_delta", &ModelSpec::d_delta)
        .def_property_readonly("x_dim", &ModelSpec::x_dim)
        .def_property_readonly("outcome_labels", &ModelSpec::outcome_labels)
        .def_property_readonly("delta_names", &ModelSpec::delta_names)
        .def("__repr__", [](const ModelSpec& s) {
            std::ostringstream os;
            os << "ModelSpec('" << to_string(s.kind) << "', k1=" << s.k1 << ", k2=" << s.k2
               << ", intercept=" << (s.intercept ? "True" : "False") << ")";
            return os.str();
        });

    py::class_<Dataset>(m, "Dataset")
        .def(py::init([](const ModelSpec& spec, std::vector<int> y, Eigen::MatrixXd x) {
                 Dataset d{spec, std::move(y), std::move(x)};
                 d.validate();
                 return d;
             }),
             py::arg("spec"), py::arg("y"), py::arg("x"))
        .def_readonly("spec", &Dataset::spec)
        .def_readonly("y", &Dataset::y)
        .def_readonly("x", &Dataset::x)
        .def_readonly("dropped", &Dataset::dropped)
        .def_property_readonly("n", &Dataset::n)
        .def("__len__", &Dataset::n)
        .def("to_csv", [](const Dataset& d) {
            std::ostringstream os;
            write_dataset_csv(os, d);
            return os.str();
        });

    m.def(
        "read_csv",
        [](const std::string& path, const std::string& model, const std::string& layout, bool intercept) {
            ModelSpec spec{parse_model_kind(model), 1, 1, intercept};
            auto map = layout_columns(layout, csv_header(path), spec);
            return ingest_csv(path, spec, map);
        },
        py::arg("path"), py::arg("model") = "game2x2", py::arg("layout") = "generic", py::arg("intercept") = false);

    m.def(
        "lfp",
        [](const ModelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& beta, const Eigen::VectorXd& delta) {
            return density(lfp(spec, x, Theta{beta, delta}));
        },
        py::arg("spec"), py::arg("x"), py::arg("beta"), py::arg("delta"),
        "Least favorable density at one covariate value; returns (q, region).");

    m.def(
        "null_density",
        [](const ModelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& delta) {
            py::object q = density(null_density(spec, x, delta))[0];
            return q;
        },
        py::arg("spec"), py::arg("x"), py::arg("delta"));

    m.def(
        "score",
        [](const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Eigen::VectorXd& delta,
           const std::optional<Eigen::VectorXd>& beta) {
            auto r = score(spec, y, x, Theta{or_zero(beta, spec.d_beta()), delta});
            return py::make_tuple(r.s_beta, r.s_delta);
        },
        py::arg("spec"), py::arg("y"), py::arg("x"), py::arg("delta"), py::arg("beta") = py::none(),
        "Scores (s_beta, s_delta) of the least favorable density.");

    m.def(
        "rmle",
        [](const Dataset& d, const std::optional<Eigen::VectorXd>& beta0, bool multistart, std::uint64_t seed) {
            RmleOptions o;
            o.multistart = multistart;
            o.seed = seed;
            auto r = rmle(d, or_zero(beta0, d.spec.d_beta()), o);
            py::dict out;
            out["delta_hat"] = r.delta_hat;
            out["se"] = r.se();
            out["vcov"] = r.vcov;
            out["loglik"] = r.loglik;
            out["gradient_norm"] = r.gradient_norm;
            out["iterations"] = r.iterations;
            out["converged"] = r.converged;
            out["warnings"] = r.warnings;
            return out;
        },
        py::arg("data"), py::arg("beta0") = py::none(), py::arg("multistart") = false, py::arg("seed") = 0);

    m.def(
        "run_test",
        [](const Dataset& d, const std::optional<Eigen::VectorXd>& beta0, const std::optional<std::string>& cone,
           double alpha, long draws, std::uint64_t seed, int threads) {
            TestOptions o;
            if (cone) o.cone = ConeSpec::parse(*cone, d.spec.d_beta());
            o.alpha = alpha;
            o.draws = draws;
            o.seed = seed;
            o.threads = threads;
            TestReport r;
            {
                py::gil_scoped_release nogil;
                r = run_test(d, or_zero(beta0, d.spec.d_beta()), o);
            }
            return report_json(r);
        },
        py::arg("data"), py::arg("beta0") = py::none(), py::arg("cone") = py::none(), py::arg("alpha") = 0.05,
        py::arg("draws") = 100000, py::arg("seed") = 0, py::arg("threads") = 0, "Runs the score test, returns the report as JSON.");

    m.def(
        "cone_project",
        [](const Eigen::VectorXd& z, const Eigen::MatrixXd& V, const std::string& cone) {
            auto p = cone_project(z, V, ConeSpec::parse(cone, int(z.size())));
            return py::make_tuple(p.h_star, p.qform_min);
        },
        py::arg("z"), py::arg("V"), py::arg("cone"));

    m.def(
        "critical_value",
        [](const Eigen::MatrixXd& V, const std::string& cone, double alpha, long draws, std::uint64_t seed) {
            return critical_value(V, ConeSpec::parse(cone, int(V.rows())), alpha, draws, RngStream(seed, 0));
        },
        py::arg("V"), py::arg("cone"), py::arg("alpha") = 0.05, py::arg("draws") = 100000, py::arg("seed") = 0);

    m.def(
        "simulate",
        [](const ModelSpec& spec, long n, const Eigen::VectorXd& delta, const std::optional<Eigen::VectorXd>& beta,
           const std::string& design, const std::string& covariates, std::uint64_t seed, std::uint64_t stream) {
            DgpSpec s;
            s.model = spec;
            s.theta_true = Theta{or_zero(beta, spec.d_beta()), delta};
            s.n = n;
            s.covariates = parse_covariate_law(covariates);
            s.selection = SelectionMechanism::parse(design);
            s.seed = seed;
            s.stream = stream;
            return simulate_dgp(s);
        },
        py::arg("spec"), py::arg("n"), py::arg("delta"), py::arg("beta") = py::none(),
        py::arg("design") = "bernoulli:0.5", py::arg("covariates") = "rademacher", py::arg("seed") = 0,
        py::arg("stream") = 0);

    m.def(
        "mc_size_power",
        [](const ModelSpec& spec, std::vector<long> n, std::vector<double> h, const std::optional<Eigen::VectorXd>& delta,
           const std::string& design, long reps, double alpha, long draws, std::uint64_t seed, int threads) {
            McOptions o;
            o.model = spec;
            if (delta) o.delta = *delta;
            o.n_values = std::move(n);
            o.h_values = std::move(h);
            o.selection = SelectionMechanism::parse(design);
            o.reps = reps;
            o.alpha = alpha;
            o.draws = draws;
            o.seed = seed;
            o.threads = threads;
            McResult r;
            {
                py::gil_scoped_release nogil;
                r = mc_size_power(o);
            }
            py::list rows;
            for (const auto& row : r.rows) {
                py::dict d;
                d["n"] = row.n;
                d["h"] = row.h;
                d["design"] = row.design;
                d["reps"] = row.reps;
                d["failures"] = row.failures;
                d["rejection_rate"] = row.rejection_rate;
                d["binomial_se"] = row.binomial_se;
                rows.append(d);
            }
            return rows;
        },
        py::arg("spec"), py::arg("n"), py::arg("h"), py::arg("delta") = py::none(), py::arg("design") = "bernoulli:0.5",
        py::arg("reps") = 1000, py::arg("alpha") = 0.05, py::arg("draws") = 100000, py::arg("seed") = 0,
        py::arg("threads") = 0);

    // same argument vector as the lfscore binary, minus the program name
    m.def(
        "cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"lfscore"};
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            int code = run_cli(int(argv.size()), argv.data(), out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
