#include "lfscore/cli.hpp"

#include "lfscore/error.hpp"
#include "lfscore/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace lfs {

namespace {

struct Globals {
    std::string model = "game2x2";
    std::string beta0 = "0";
    std::string cone;
    double alpha = 0.05;
    long draws = 0;  // 0: 1e5, or 1e6 with --precise
    std::uint64_t seed = 0;
    std::string out;
    bool precise = false;
    int quad_order = 32;
    bool intercept = false;
    int threads = 0;
};

std::vector<double> parse_list(const std::string& s, const std::string& what) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            double x = std::stod(item, &pos);
            if (item.find_first_not_of(" \t", pos) != std::string::npos) throw std::invalid_argument(item);
            v.push_back(x);
        } catch (const std::exception&) {
            invalid(what + ": cannot parse '" + item + "' as a number");
        }
    }
    if (v.empty()) invalid(what + ": empty list");
    return v;
}

// a scalar is broadcast to every coordinate
Eigen::VectorXd parse_vector(const std::string& s, int dim, const std::string& what) {
    auto v = parse_list(s, what);
    if (v.size() == 1) return Eigen::VectorXd::Constant(dim, v[0]);
    if (int(v.size()) != dim) invalid(what + " needs " + std::to_string(dim) + " values, got " + std::to_string(v.size()));
    return Eigen::Map<Eigen::VectorXd>(v.data(), dim);
}

std::string join_vec(const Eigen::VectorXd& v) {
    std::string s;
    for (long i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_double(v(i));
    return s;
}

ModelSpec base_spec(const Globals& g) {
    ModelSpec s;
    s.kind = parse_model_kind(g.model);
    s.intercept = g.intercept;
    s.quad_order = g.quad_order;
    if (s.kind == ModelKind::Panel2) s.k2 = 0;
    return s;
}

long n_draws(const Globals& g) {
    if (g.draws > 0) return g.draws;
    return g.precise ? 1000000 : 100000;
}

ConeSpec cone_for(const Globals& g, const ModelSpec& spec) {
    return g.cone.empty() ? ConeSpec::for_model(spec) : ConeSpec::parse(g.cone, spec.d_beta());
}

// every +-1 point, with d in {0,1} for triangular
std::vector<Eigen::VectorXd> sign_grid(const ModelSpec& spec) {
    int dim = spec.x_dim();
    if (dim > 12) invalid("lfp: pass --x explicitly when the covariate dimension exceeds 12");
    std::vector<Eigen::VectorXd> xs;
    for (long m = 0; m < (1L << dim); ++m) {
        Eigen::VectorXd x(dim);
        for (int j = 0; j < dim; ++j) {
            bool bit = (m >> (dim - 1 - j)) & 1;
            x(j) = spec.kind == ModelKind::Triangular && j == 0 ? double(bit) : (bit ? 1.0 : -1.0);
        }
        xs.push_back(x);
    }
    return xs;
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::InvalidArgument: return 2;
        case ErrorKind::Data: return 3;
        case ErrorKind::Numerical: return 4;
    }
    return 4;
}

std::string kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::InvalidArgument: return "usage";
        case ErrorKind::Data: return "data";
        case ErrorKind::Numerical: return "numerical";
    }
    return "numerical";
}

void report_error(std::ostream& err, const std::string& kind, const std::string& code, const std::string& msg) {
    nlohmann::ordered_json j;
    j["error"] = {{"kind", kind}, {"code", code}, {"message", msg}};
    err << j.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Score test for model incompleteness", "lfscore"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML/INI file with the same keys as the flags (flags win)");
    app.allow_config_extras(CLI::config_extras_mode::error);

    Globals g;
    app.add_option("--model", g.model, "game2x2, triangular or panel2")->capture_default_str();
    app.add_option("--beta0", g.beta0, "null value of beta (must be 0)")->capture_default_str();
    app.add_option("--cone", g.cone, "nonpos, nonneg, free or a comma list; default follows the model");
    app.add_option("--alpha", g.alpha, "test level")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    app.add_option("--draws", g.draws, "critical-value draws (default 1e5, 1e6 with --precise)")
        ->check(CLI::PositiveNumber);
    app.add_option("--seed", g.seed, "master seed")->capture_default_str();
    app.add_option("--out", g.out, "output file (default stdout)");
    app.add_flag("--precise", g.precise, "use 1e6 critical-value draws");
    app.add_option("--quad-order", g.quad_order, "Gauss-Hermite order for panel2")->capture_default_str();
    app.add_flag("--intercept", g.intercept, "prepend a constant to every index");
    app.add_option("--threads", g.threads, "worker threads (0: all cores); never changes results")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);

    // test
    auto* t = app.add_subcommand("test", "run the score test on a CSV dataset");
    std::string data_path, layout = "generic";
    bool multistart = false;
    t->add_option("--data", data_path, "input CSV")->required();
    t->add_option("--layout", layout, "generic, airline or catholic")->capture_default_str();
    t->add_flag("--multistart", multistart, "extra random starts for the restricted MLE");

    // mc
    auto* mc = app.add_subcommand("mc", "Monte Carlo size and power");
    mc->set_help_flag("--help", "Print this help message and exit");
    std::string n_list = "2500,5000,7500", h_list = "0", design = "bernoulli", delta_s, covariates = "rademacher";
    long reps = 1000;
    int k1 = 1, k2 = 1;
    mc->add_option("--n", n_list, "sample sizes")->capture_default_str();
    mc->add_option("--h", h_list, "local alternatives, beta = -h/sqrt(n)")->capture_default_str();
    mc->add_option("--reps", reps, "replications per grid point")->capture_default_str();
    mc->add_option("--design", design, "bernoulli[:p] or lfp")->capture_default_str();
    mc->add_option("--delta", delta_s, "true delta (default 2,1.5 for the game)");
    mc->add_option("--covariates", covariates, "rademacher or normal")->capture_default_str();
    mc->add_option("--k1", k1, "covariates in the first index")->capture_default_str();
    mc->add_option("--k2", k2, "covariates in the second index")->capture_default_str();

    // lfp
    auto* lf = app.add_subcommand("lfp", "least favorable densities over a beta grid");
    std::vector<std::string> betas, xs;
    std::string lf_delta;
    int lk1 = 1, lk2 = 1;
    lf->add_option("--beta", betas, "beta point, repeatable")->required();
    lf->add_option("--delta", lf_delta, "delta")->required();
    lf->add_option("--x", xs, "covariate point, repeatable (default: the +-1 grid)");
    lf->add_option("--k1", lk1, "covariates in the first index")->capture_default_str();
    lf->add_option("--k2", lk2, "covariates in the second index")->capture_default_str();

    // simulate
    auto* sim = app.add_subcommand("simulate", "draw a dataset from the model");
    long sim_n = 1000;
    std::string sim_beta = "0", sim_delta, sim_design = "bernoulli", sim_cov = "rademacher";
    int sk1 = 1, sk2 = 1;
    sim->add_option("--n", sim_n, "sample size")->capture_default_str();
    sim->add_option("--beta", sim_beta, "true beta")->capture_default_str();
    sim->add_option("--delta", sim_delta, "true delta")->required();
    sim->add_option("--design", sim_design, "bernoulli[:p] or lfp")->capture_default_str();
    sim->add_option("--covariates", sim_cov, "rademacher or normal")->capture_default_str();
    sim->add_option("--k1", sk1, "covariates in the first index")->capture_default_str();
    sim->add_option("--k2", sk2, "covariates in the second index")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        report_error(err, "usage", "bad_arguments", e.what());
        return 2;
    }

    try {
        std::ostringstream buf;
        ModelSpec spec = base_spec(g);

        if (*t) {
            auto header = csv_header(data_path);
            ColumnMap map = layout_columns(layout, header, spec);
            spec.validate();
            Dataset d = ingest_csv(data_path, spec, map);
            Eigen::VectorXd beta0 = parse_vector(g.beta0, spec.d_beta(), "--beta0");
            TestOptions o;
            o.cone = cone_for(g, spec);
            o.alpha = g.alpha;
            o.draws = n_draws(g);
            o.seed = g.seed;
            o.threads = g.threads;
            o.rmle.multistart = multistart;
            o.rmle.seed = g.seed;
            TestReport r = run_test(d, beta0, o);
            buf << report_json(r, {{"command", "test"},
                                   {"model", to_string(spec.kind)},
                                   {"data", data_path},
                                   {"layout", layout},
                                   {"beta0", join_vec(beta0)},
                                   {"cone", o.cone->str()},
                                   {"alpha", fmt_double(g.alpha)},
                                   {"draws", std::to_string(o.draws)},
                                   {"seed", std::to_string(g.seed)},
                                   {"intercept", spec.intercept ? "true" : "false"},
                                   {"quad_order", std::to_string(spec.quad_order)},
                                   {"multistart", multistart ? "true" : "false"}});
        } else if (*mc) {
            spec.k1 = k1;
            spec.k2 = spec.kind == ModelKind::Panel2 ? 0 : k2;
            spec.validate();
            if (parse_vector(g.beta0, spec.d_beta(), "--beta0").cwiseAbs().maxCoeff() != 0.0)
                invalid("--beta0 must be 0: the score test is built at the completeness point");
            McOptions o;
            o.model = spec;
            if (!delta_s.empty()) o.delta = parse_vector(delta_s, spec.d_delta(), "--delta");
            for (double n : parse_list(n_list, "--n")) {
                if (n != std::floor(n) || n <= 0) invalid("--n values must be positive integers");
                o.n_values.push_back(long(n));
            }
            o.h_values = parse_list(h_list, "--h");
            o.selection = SelectionMechanism::parse(design);
            o.covariates = parse_covariate_law(covariates);
            o.cone = cone_for(g, spec);
            o.reps = reps;
            o.alpha = g.alpha;
            o.draws = n_draws(g);
            o.seed = g.seed;
            o.threads = g.threads;
            McResult r = mc_size_power(o);
            write_mc_csv(buf, r);
        } else if (*lf) {
            spec.k1 = lk1;
            spec.k2 = spec.kind == ModelKind::Panel2 ? 0 : lk2;
            spec.validate();
            Eigen::VectorXd delta = parse_vector(lf_delta, spec.d_delta(), "--delta");
            std::vector<Eigen::VectorXd> bgrid, xgrid;
            for (const auto& b : betas) bgrid.push_back(parse_vector(b, spec.d_beta(), "--beta"));
            if (xs.empty())
                xgrid = sign_grid(spec);
            else
                for (const auto& x : xs) xgrid.push_back(parse_vector(x, spec.x_dim(), "--x"));
            write_density_csv(buf, spec, bgrid, delta, xgrid);
        } else if (*sim) {
            spec.k1 = sk1;
            spec.k2 = spec.kind == ModelKind::Panel2 ? 0 : sk2;
            spec.validate();
            DgpSpec s;
            s.model = spec;
            s.theta_true.beta = parse_vector(sim_beta, spec.d_beta(), "--beta");
            s.theta_true.delta = parse_vector(sim_delta, spec.d_delta(), "--delta");
            s.n = sim_n;
            s.covariates = parse_covariate_law(sim_cov);
            s.selection = SelectionMechanism::parse(sim_design);
            s.seed = g.seed;
            write_dataset_csv(buf, simulate_dgp(s));
        }

        if (g.out.empty()) {
            out << buf.str();
        } else {
            std::ofstream f(g.out, std::ios::binary);
            if (!f) fail(ErrorKind::Data, "io", "cannot write '" + g.out + "'");
            f << buf.str();
            if (!f) fail(ErrorKind::Data, "io", "write to '" + g.out + "' failed");
        }
        return 0;
    } catch (const Error& e) {
        report_error(err, kind_name(e.kind()), e.code(), e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        report_error(err, "numerical", "internal", e.what());
        return 4;
    }
}

}  // namespace lfs
