#include "lfscore/harness.hpp"

#include "lfscore/error.hpp"
#include "lfscore/lfp.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace lfs {

std::string to_string(CovariateLaw c) { return c == CovariateLaw::Rademacher ? "rademacher" : "normal"; }

CovariateLaw parse_covariate_law(const std::string& s) {
    if (s == "rademacher") return CovariateLaw::Rademacher;
    if (s == "normal") return CovariateLaw::Normal;
    invalid("unknown covariate law '" + s + "' (expected rademacher or normal)");
}

std::string SelectionMechanism::str() const {
    if (kind == Kind::LeastFavorable) return "lfp";
    return "bernoulli:" + fmt_double(p);
}

SelectionMechanism SelectionMechanism::parse(const std::string& s) {
    SelectionMechanism m;
    if (s == "lfp" || s == "least-favorable") {
        m.kind = Kind::LeastFavorable;
        return m;
    }
    if (s == "bernoulli") return m;
    if (s.rfind("bernoulli:", 0) == 0) {
        std::string v = s.substr(10);
        char* end = nullptr;
        m.p = std::strtod(v.c_str(), &end);
        if (v.empty() || *end != '\0' || !(m.p >= 0.0 && m.p <= 1.0))
            invalid("bernoulli probability must lie in [0,1], got '" + v + "'");
        return m;
    }
    invalid("unknown selection mechanism '" + s + "' (expected bernoulli[:p] or lfp)");
}

std::string fmt_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// ---- simulation ----

namespace {

double draw_cov(CovariateLaw law, RngStream& rng) {
    if (law == CovariateLaw::Normal) return rng.normal();
    return rng.bernoulli(0.5) ? 1.0 : -1.0;
}

int draw_categorical(const DensityRow& q, RngStream& rng) {
    double u = rng.uniform(), c = 0.0;
    for (int y = 0; y < q.n - 1; ++y) {
        c += q.q[y];
        if (u < c) return y;
    }
    return q.n - 1;
}

int resolve(Event g, const SelectionMechanism& sel, RngStream& rng) {
    int first = -1, last = -1;
    for (int y = 0; y < 4; ++y)
        if (g & (1u << y)) {
            if (first < 0) first = y;
            last = y;
        }
    if (first < 0) fail(ErrorKind::Numerical, "empty_prediction", "predicted set is empty");
    if (first == last) return first;
    return rng.bernoulli(sel.p) ? last : first;
}

}  // namespace

Dataset simulate_dgp(const DgpSpec& s) {
    const ModelSpec& spec = s.model;
    spec.validate();
    if (s.n <= 0) invalid("simulate: n must be positive");
    if (s.theta_true.beta.size() != spec.d_beta() || s.theta_true.delta.size() != spec.d_delta())
        invalid("simulate: theta has the wrong dimension for " + to_string(spec.kind));
    check_sign_region(spec, s.theta_true);
    if (s.selection.kind == SelectionMechanism::Kind::BernoulliPick && !(s.selection.p >= 0 && s.selection.p <= 1))
        invalid("bernoulli probability must lie in [0,1]");

    RngStream rng(s.seed, s.stream, 0);
    Dataset d;
    d.spec = spec;
    d.x.resize(s.n, spec.x_dim());
    d.y.resize(s.n);
    const bool lf = s.selection.kind == SelectionMechanism::Kind::LeastFavorable;
    const Eigen::VectorXd& delta = s.theta_true.delta;
    Eigen::VectorXd x(spec.x_dim()), u;

    for (long i = 0; i < s.n; ++i) {
        switch (spec.kind) {
            case ModelKind::Game2x2:
                for (int j = 0; j < x.size(); ++j) x(j) = draw_cov(s.covariates, rng);
                u.resize(2);
                break;
            case ModelKind::Triangular: {
                x(0) = 0.0;
                for (int j = 1; j < x.size(); ++j) x(j) = draw_cov(s.covariates, rng);
                auto p = triangular_parts(spec, x);
                double zg = p.z.dot(delta.tail(p.z.size()));
                x(0) = zg + rng.normal() >= 0 ? 1.0 : 0.0;
                u.resize(1);
                break;
            }
            case ModelKind::Panel2:
                for (int j = 0; j < x.size(); ++j) x(j) = draw_cov(s.covariates, rng);
                u.resize(2);
                break;
        }
        int y;
        if (lf) {
            y = draw_categorical(lfp(spec, x, s.theta_true), rng);
        } else {
            if (spec.kind == ModelKind::Panel2) {
                double a = rng.normal() * delta(delta.size() - 1);
                u(0) = a + rng.normal();
                u(1) = a + rng.normal();
            } else {
                for (int j = 0; j < u.size(); ++j) u(j) = rng.normal();
            }
            y = resolve(predicted_set(spec, u, x, s.theta_true), s.selection, rng);
        }
        d.x.row(i) = x.transpose();
        d.y[i] = y;
    }
    return d;
}

// ---- Monte Carlo ----

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

int worker_count(int threads) {
    if (threads > 0) return threads;
    unsigned h = std::thread::hardware_concurrency();
    return h == 0 ? 1 : int(h);
}

}  // namespace

McResult mc_size_power(const McOptions& opt) {
    auto t0 = std::chrono::steady_clock::now();
    const ModelSpec& spec = opt.model;
    spec.validate();
    if (opt.reps < 100) invalid("mc: reps must be at least 100");
    if (opt.n_values.empty() || opt.h_values.empty()) invalid("mc: the n and h grids must be non-empty");
    for (long n : opt.n_values)
        if (n <= 0) invalid("mc: n values must be positive");
    for (double h : opt.h_values)
        if (!(h >= 0.0) || !std::isfinite(h)) invalid("mc: h values must be finite and non-negative");

    Eigen::VectorXd delta = opt.delta;
    if (delta.size() == 0) {
        if (spec.kind != ModelKind::Game2x2 || spec.d_delta() != 2)
            invalid("mc: --delta is required unless the model is the one-covariate game");
        delta = Eigen::Vector2d(2.0, 1.5);
    }
    if (delta.size() != spec.d_delta()) invalid("mc: delta must have " + std::to_string(spec.d_delta()) + " entries");
    // local alternatives point into the cone
    const double sign = spec.kind == ModelKind::Game2x2 ? -1.0 : 1.0;

    struct Point {
        long n;
        double h;
        std::uint64_t seed;
    };
    std::vector<Point> grid;
    for (long n : opt.n_values)
        for (double h : opt.h_values) grid.push_back({n, h, splitmix64(opt.seed + splitmix64(grid.size()))});

    const long total = long(grid.size()) * opt.reps;
    std::vector<signed char> outcome(total, -1);
    std::atomic<long> next{0};
    auto work = [&] {
        for (long k; (k = next.fetch_add(1)) < total;) {
            const Point& p = grid[k / opt.reps];
            long rep = k % opt.reps;
            DgpSpec dgp;
            dgp.model = spec;
            dgp.theta_true.beta = Eigen::VectorXd::Constant(spec.d_beta(), sign * p.h / std::sqrt(double(p.n)));
            dgp.theta_true.delta = delta;
            dgp.n = p.n;
            dgp.covariates = opt.covariates;
            dgp.selection = opt.selection;
            dgp.seed = p.seed;
            dgp.stream = std::uint64_t(rep);
            TestOptions t;
            t.cone = opt.cone;
            t.alpha = opt.alpha;
            t.draws = opt.draws;
            t.seed = p.seed;
            t.stream = std::uint64_t(rep);
            t.threads = 1;
            try {
                Dataset d = simulate_dgp(dgp);
                TestReport r = run_test(d, Eigen::VectorXd::Zero(spec.d_beta()), t);
                outcome[k] = r.decision == Decision::Reject ? 1 : 0;
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::InvalidArgument) throw;
                outcome[k] = -1;
            }
        }
    };
    int nt = int(std::min<long>(worker_count(opt.threads), total));
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex err_mu;
    for (int i = 0; i < nt; ++i)
        pool.emplace_back([&] {
            try {
                work();
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
                next.store(total);
            }
        });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);

    McResult res;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        McRow row;
        row.n = grid[g].n;
        row.h = grid[g].h;
        row.design = opt.selection.str();
        long rej = 0;
        for (long r = 0; r < opt.reps; ++r) {
            signed char o = outcome[g * opt.reps + r];
            if (o < 0)
                ++row.failures;
            else
                rej += o;
        }
        row.reps = opt.reps - row.failures;
        if (row.failures * 100 > opt.reps)
            fail(ErrorKind::Numerical, "mc_failures",
                 std::to_string(row.failures) + " of " + std::to_string(opt.reps) + " reps failed at n=" +
                     std::to_string(row.n) + ", h=" + fmt_double(row.h));
        row.rejection_rate = double(rej) / double(row.reps);
        row.binomial_se = std::sqrt(row.rejection_rate * (1 - row.rejection_rate) / double(row.reps));
        res.rows.push_back(row);
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

void write_mc_csv(std::ostream& os, const McResult& r) {
    os << "n,h,design,reps,failures,rejection_rate,binomial_se\n";
    for (const auto& row : r.rows)
        os << row.n << ',' << fmt_double(row.h) << ',' << row.design << ',' << row.reps << ',' << row.failures << ','
           << fmt_double(row.rejection_rate) << ',' << fmt_double(row.binomial_se) << '\n';
}

// ---- CSV ----

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::ifstream open_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Data, "io", "cannot open '" + path + "'");
    return in;
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& e : v) s += (s.empty() ? "" : ", ") + e;
    return s;
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "."; }

}  // namespace

std::vector<std::string> csv_header(const std::string& path) {
    auto in = open_csv(path);
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::Data, "empty_data", "'" + path + "' has no header row");
    // tolerate a UTF-8 byte order mark
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line = line.substr(3);
    auto h = csv_split(line);
    for (auto& c : h) c = trim(c);
    return h;
}

ColumnMap layout_columns(const std::string& layout, const std::vector<std::string>& header, ModelSpec& spec) {
    ColumnMap m;
    if (layout == "airline") {
        if (spec.kind != ModelKind::Game2x2) invalid("the airline layout belongs to game2x2");
        m.y = {"y_lcc", "y_oa"};
        m.x = {"x_size", "x_pres_lcc", "x_size", "x_pres_oa"};
        spec.k1 = spec.k2 = 2;
        spec.intercept = true;
        return m;
    }
    if (layout == "catholic") {
        if (spec.kind != ModelKind::Triangular) invalid("the catholic layout belongs to triangular");
        m.y = {"y"};
        m.x = {"catholic", "motheduc", "fatheduc", "lfaminc", "parcath", "motheduc", "fatheduc", "lfaminc"};
        spec.k1 = 3;
        spec.k2 = 4;
        spec.intercept = false;
        return m;
    }
    if (layout != "generic") invalid("unknown layout '" + layout + "' (expected airline, catholic or generic)");

    auto with_prefix = [&](const std::string& p) {
        std::vector<std::string> v;
        for (const auto& h : header)
            if (h.rfind(p, 0) == 0 && h.size() > p.size()) v.push_back(h);
        return v;
    };
    if (spec.kind == ModelKind::Triangular) {
        auto w = with_prefix("w_"), z = with_prefix("z_");
        m.y = {"y"};
        m.x = {"d"};
        m.x.insert(m.x.end(), w.begin(), w.end());
        m.x.insert(m.x.end(), z.begin(), z.end());
        spec.k1 = int(w.size());
        spec.k2 = int(z.size());
    } else {
        auto a = with_prefix("x1_"), b = with_prefix("x2_");
        m.y = {"y1", "y2"};
        m.x = a;
        m.x.insert(m.x.end(), b.begin(), b.end());
        spec.k1 = int(a.size());
        if (spec.kind == ModelKind::Panel2) {
            if (a.size() != b.size())
                fail(ErrorKind::Data, "schema", "panel2 needs as many x2_* columns as x1_* columns");
            spec.k2 = 0;
        } else {
            spec.k2 = int(b.size());
        }
    }
    return m;
}

Dataset ingest_csv(const std::string& path, const ModelSpec& spec, const ColumnMap& map) {
    auto header = csv_header(path);
    const bool pair = spec.kind != ModelKind::Triangular;
    if (map.y.size() != (pair ? 2u : 1u)) invalid("column map: wrong number of outcome columns");
    if (long(map.x.size()) != spec.x_dim())
        invalid("column map: " + std::to_string(map.x.size()) + " covariate columns, model expects " +
                std::to_string(spec.x_dim()));

    auto index_of = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            fail(ErrorKind::Data, "schema", "column '" + name + "' not found; available: " + join(header));
        return int(it - header.begin());
    };
    std::vector<int> yi, xi;
    for (const auto& c : map.y) yi.push_back(index_of(c));
    for (const auto& c : map.x) xi.push_back(index_of(c));

    auto in = open_csv(path);
    std::string line;
    std::getline(in, line);
    Dataset d;
    d.spec = spec;
    std::vector<double> xs;
    long lineno = 1;
    auto number = [&](const std::string& s, const std::string& col) {
        double v = 0;
        auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
            fail(ErrorKind::Data, "bad_value",
                 "line " + std::to_string(lineno) + ", column '" + col + "': not a number ('" + s + "')");
        return v;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty() || line == "\r") continue;
        auto f = csv_split(line);
        for (auto& c : f) c = trim(c);
        if (f.size() != header.size())
            fail(ErrorKind::Data, "bad_row",
                 "line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields, header has " +
                     std::to_string(header.size()));
        bool missing = false;
        for (int i : yi) missing = missing || is_missing(f[i]);
        for (int i : xi) missing = missing || is_missing(f[i]);
        if (missing) {
            ++d.dropped;
            continue;
        }
        int y = 0;
        for (std::size_t k = 0; k < yi.size(); ++k) {
            double v = number(f[yi[k]], map.y[k]);
            if (v != 0.0 && v != 1.0)
                fail(ErrorKind::Data, "bad_outcome",
                     "line " + std::to_string(lineno) + ", column '" + map.y[k] + "': outcome must be 0 or 1");
            y = 2 * y + int(v);
        }
        d.y.push_back(y);
        for (std::size_t k = 0; k < xi.size(); ++k) xs.push_back(number(f[xi[k]], map.x[k]));
    }
    if (d.y.empty())
        fail(ErrorKind::Data, "empty_data",
             "'" + path + "' has no usable rows (" + std::to_string(d.dropped) + " dropped for missing values)");
    d.x = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(xs.data(), d.n(),
                                                                                           spec.x_dim());
    d.validate();
    return d;
}

void write_dataset_csv(std::ostream& os, const Dataset& d) {
    const ModelSpec& s = d.spec;
    std::vector<std::string> cols;
    if (s.kind == ModelKind::Triangular) {
        cols = {"y", "d"};
        for (int j = 1; j <= s.k1; ++j) cols.push_back("w_" + std::to_string(j));
        for (int j = 1; j <= s.k2; ++j) cols.push_back("z_" + std::to_string(j));
    } else {
        int k2 = s.kind == ModelKind::Panel2 ? s.k1 : s.k2;
        cols = {"y1", "y2"};
        for (int j = 1; j <= s.k1; ++j) cols.push_back("x1_" + std::to_string(j));
        for (int j = 1; j <= k2; ++j) cols.push_back("x2_" + std::to_string(j));
    }
    for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c];
    os << '\n';
    for (long i = 0; i < d.n(); ++i) {
        if (s.kind == ModelKind::Triangular)
            os << d.y[i];
        else
            os << d.y[i] / 2 << ',' << d.y[i] % 2;
        for (long j = 0; j < d.x.cols(); ++j) os << ',' << fmt_double(d.x(i, j));
        os << '\n';
    }
}

void write_density_csv(std::ostream& os, const ModelSpec& spec, const std::vector<Eigen::VectorXd>& betas,
                       const Eigen::VectorXd& delta, const std::vector<Eigen::VectorXd>& xs) {
    spec.validate();
    for (int j = 1; j <= spec.d_beta(); ++j) os << "beta_" << j << ',';
    for (int j = 1; j <= spec.x_dim(); ++j) os << "x_" << j << ',';
    os << "region";
    for (const auto& l : spec.outcome_labels()) os << ",q_" << l;
    os << '\n';
    for (const auto& b : betas)
        for (const auto& x : xs) {
            DensityRow q = lfp(spec, x, Theta{b, delta});
            for (long j = 0; j < b.size(); ++j) os << fmt_double(b(j)) << ',';
            for (long j = 0; j < x.size(); ++j) os << fmt_double(x(j)) << ',';
            os << to_string(q.region);
            for (int y = 0; y < q.n; ++y) os << ',' << fmt_double(q.q[y]);
            os << '\n';
        }
}

}  // namespace lfs
