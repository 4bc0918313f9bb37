#include "lfscore/testing.hpp"

#include "lfscore/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

namespace lfs {

std::string ConeSpec::str() const {
    std::string s;
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (i) s += ",";
        s += c[i] == ConeConstraint::NonPositive ? "nonpos" : c[i] == ConeConstraint::NonNegative ? "nonneg" : "free";
    }
    return s;
}

ConeSpec ConeSpec::parse(const std::string& s, int dim) {
    std::vector<ConeConstraint> parts;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(std::remove_if(tok.begin(), tok.end(), ::isspace), tok.end());
        std::transform(tok.begin(), tok.end(), tok.begin(), ::tolower);
        if (tok == "nonpos" || tok == "nonpositive" || tok == "neg")
            parts.push_back(ConeConstraint::NonPositive);
        else if (tok == "nonneg" || tok == "nonnegative" || tok == "pos")
            parts.push_back(ConeConstraint::NonNegative);
        else if (tok == "free")
            parts.push_back(ConeConstraint::Free);
        else
            invalid("unknown cone constraint '" + tok + "' (expected nonpos, nonneg or free)");
    }
    if (parts.size() == 1 && dim > 1) parts.assign(dim, parts[0]);
    if (int(parts.size()) != dim)
        invalid("cone has " + std::to_string(parts.size()) + " entries, beta has " + std::to_string(dim));
    return ConeSpec{parts};
}

ConeSpec ConeSpec::for_model(const ModelSpec& spec) {
    return all(spec.kind == ModelKind::Game2x2 ? ConeConstraint::NonPositive : ConeConstraint::NonNegative,
               spec.d_beta());
}

namespace {

// one face per subset S of the constrained coordinates held at zero:
//   h = P z,  (z-h)' W (z-h) = z' Q z
struct Face {
    Eigen::MatrixXd P, Q;
    std::vector<int> check;  // constrained coordinates left free on this face
};

class Projector {
public:
    Projector(const Eigen::MatrixXd& V, const ConeSpec& cone) : cone_(cone) {
        const int d = int(V.rows());
        if (V.cols() != d || cone.dim() != d) invalid("cone_project: V and the cone must match z");
        std::vector<int> con;
        for (int j = 0; j < d; ++j)
            if (cone.c[j] != ConeConstraint::Free) con.push_back(j);
        if (con.size() > 16) invalid("cone_project: more than 16 constrained coordinates");
        Eigen::LLT<Eigen::MatrixXd> llt(V);
        if (llt.info() != Eigen::Success) fail(ErrorKind::Numerical, "singular_variance", "V is not positive definite");
        W_ = llt.solve(Eigen::MatrixXd::Identity(d, d));
        W_ = 0.5 * (W_ + W_.transpose()).eval();
        const unsigned nf = 1u << con.size();
        for (unsigned mask = 0; mask < nf; ++mask) {
            std::vector<bool> fixed(d, false);
            Face f;
            for (std::size_t b = 0; b < con.size(); ++b) {
                if (mask >> b & 1u)
                    fixed[con[b]] = true;
                else
                    f.check.push_back(con[b]);
            }
            std::vector<int> F, S;
            for (int j = 0; j < d; ++j) (fixed[j] ? S : F).push_back(j);
            f.P = Eigen::MatrixXd::Zero(d, d);
            if (!F.empty()) {
                Eigen::MatrixXd WFF(F.size(), F.size()), WFS(F.size(), S.size());
                for (std::size_t a = 0; a < F.size(); ++a) {
                    for (std::size_t b = 0; b < F.size(); ++b) WFF(a, b) = W_(F[a], F[b]);
                    for (std::size_t b = 0; b < S.size(); ++b) WFS(a, b) = W_(F[a], S[b]);
                }
                Eigen::MatrixXd M = WFF.llt().solve(WFS);
                for (std::size_t a = 0; a < F.size(); ++a) {
                    f.P(F[a], F[a]) = 1.0;
                    for (std::size_t b = 0; b < S.size(); ++b) f.P(F[a], S[b]) = M(a, b);
                }
            }
            Eigen::MatrixXd R = Eigen::MatrixXd::Identity(d, d) - f.P;
            f.Q = R.transpose() * W_ * R;
            faces_.push_back(std::move(f));
        }
    }

    const Eigen::MatrixXd& W() const { return W_; }

    Projection project(const Eigen::VectorXd& z) const {
        const double tol = 1e-12 * (1.0 + z.cwiseAbs().maxCoeff());
        Projection best;
        best.qform_min = std::numeric_limits<double>::infinity();
        for (const auto& f : faces_) {
            Eigen::VectorXd h = f.P * z;
            bool ok = true;
            for (int j : f.check) {
                if (cone_.c[j] == ConeConstraint::NonPositive && h(j) > tol) ok = false;
                if (cone_.c[j] == ConeConstraint::NonNegative && h(j) < -tol) ok = false;
            }
            if (!ok) continue;
            double q = z.dot(f.Q * z);
            if (q < best.qform_min) {
                best.qform_min = q;
                best.h_star = h;
            }
        }
        // clip the sign noise of the chosen face
        for (int j = 0; j < int(z.size()); ++j) {
            if (cone_.c[j] == ConeConstraint::NonPositive) best.h_star(j) = std::min(best.h_star(j), 0.0);
            if (cone_.c[j] == ConeConstraint::NonNegative) best.h_star(j) = std::max(best.h_star(j), 0.0);
        }
        best.qform_min = std::max(best.qform_min, 0.0);
        return best;
    }

    Statistic statistic(const Eigen::VectorXd& g) const {
        Statistic s;
        s.T_hat = std::max(g.dot(W_ * g), 0.0);
        s.S_hat = std::clamp(s.T_hat - project(g).qform_min, 0.0, s.T_hat);
        return s;
    }

private:
    ConeSpec cone_;
    Eigen::MatrixXd W_;
    std::vector<Face> faces_;
};

int resolve_threads(int threads) {
    if (threads > 0) return threads;
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? int(hc) : 1;
}

}  // namespace

Projection cone_project(const Eigen::VectorXd& z, const Eigen::MatrixXd& V, const ConeSpec& cone) {
    if (z.size() != V.rows()) invalid("cone_project: z and V dimensions differ");
    return Projector(symmetrized(V), cone).project(z);
}

Statistic s_statistic(const Eigen::VectorXd& g, const Eigen::MatrixXd& V, const ConeSpec& cone) {
    if (g.size() != V.rows()) invalid("s_statistic: g and V dimensions differ");
    return Projector(symmetrized(V), cone).statistic(g);
}

std::vector<double> simulate_statistics(const Eigen::MatrixXd& V, const ConeSpec& cone, long n_draws,
                                        const RngStream& rng, int threads) {
    if (n_draws < 1) invalid("need at least one draw");
    Eigen::MatrixXd Vs = symmetrized(V);
    Projector proj(Vs, cone);
    Eigen::MatrixXd L = psd_factor(Vs);
    const int d = int(Vs.rows());
    constexpr long kBlock = 4096;
    const long nblocks = (n_draws + kBlock - 1) / kBlock;
    if (nblocks >= (1L << 32) - 1) invalid("too many draws");
    std::vector<double> out(n_draws);
    std::atomic<long> next{0};
    auto worker = [&]() {
        Eigen::VectorXd e(d);
        for (long b = next++; b < nblocks; b = next++) {
            RngStream r(rng.seed(), rng.stream_id(), std::uint32_t(1 + b));
            const long end = std::min(n_draws, (b + 1) * kBlock);
            for (long i = b * kBlock; i < end; ++i) {
                for (int j = 0; j < d; ++j) e(j) = r.normal();
                out[i] = proj.statistic(L * e).S_hat;
            }
        }
    };
    const int nt = std::min<long>(resolve_threads(threads), nblocks);
    if (nt <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return out;
}

double quantile_upper(std::vector<double> draws, double alpha) {
    if (draws.empty()) invalid("quantile of an empty draw list");
    if (!(alpha > 0 && alpha < 1)) invalid("alpha must lie in (0,1)");
    const long n = long(draws.size());
    long k = long(std::ceil((1.0 - alpha) * double(n) - 1e-9));
    k = std::clamp(k, 1L, n);
    std::nth_element(draws.begin(), draws.begin() + (k - 1), draws.end());
    return draws[k - 1];
}

double critical_value(const Eigen::MatrixXd& V, const ConeSpec& cone, double alpha, long n_draws, const RngStream& rng,
                      int threads) {
    if (!(alpha > 0 && alpha < 1)) invalid("alpha must lie in (0,1)");
    return quantile_upper(simulate_statistics(V, cone, n_draws, rng, threads), alpha);
}

double p_value(double S_hat, const std::vector<double>& draws) {
    if (draws.empty()) invalid("p_value needs at least one draw");
    long ge = 0;
    for (double s : draws)
        if (s >= S_hat) ++ge;
    return double(1 + ge) / double(1 + draws.size());
}

std::string to_string(HybridBranch b) { return b == HybridBranch::WaldCI ? "WaldCI" : "RobustCIRequired"; }

HybridDecision hybrid_decide(double S_hat, double c_alpha, double n) {
    if (!(n >= 2)) invalid("hybrid_decide needs n >= 2");
    HybridDecision h;
    h.kappa = 1.0 / std::sqrt(std::log(n));
    h.c_n = std::min(h.kappa, 1.0) * c_alpha;
    h.branch = S_hat > h.c_n ? HybridBranch::RobustCIRequired : HybridBranch::WaldCI;
    return h;
}

HybridDecision hybrid_decide(double S_hat, double c_alpha, double n, double alpha, const Eigen::VectorXd& delta_hat,
                             const Eigen::VectorXd& se, const std::vector<std::string>& names) {
    HybridDecision h = hybrid_decide(S_hat, c_alpha, n);
    if (h.branch == HybridBranch::WaldCI) {
        double zc = normal_quantile(1.0 - alpha / 2);
        for (long j = 0; j < delta_hat.size(); ++j)
            h.wald_ci.push_back({j < long(names.size()) ? names[j] : "delta" + std::to_string(j), delta_hat(j),
                                 delta_hat(j) - zc * se(j), delta_hat(j) + zc * se(j)});
    }
    return h;
}

Eigen::VectorXd score_vector_gn(const Dataset& data, const Eigen::VectorXd& beta0, const Eigen::VectorXd& delta_hat) {
    data.validate();
    if (beta0.size() != data.spec.d_beta() || delta_hat.size() != data.spec.d_delta())
        invalid("score_vector_gn: dimension mismatch");
    auto cells = collapse(data);
    auto s = cell_beta_scores(cells, data.spec, Theta{beta0, delta_hat});
    Eigen::VectorXd g(data.spec.d_beta());
    for (int a = 0; a < g.size(); ++a) {
        CompensatedSum acc;
        for (std::size_t i = 0; i < cells.size(); ++i) acc.add(cells[i].count * s[i](a));
        g(a) = acc.value() / std::sqrt(double(data.n()));
    }
    return g;
}

TestReport run_test(const Dataset& data, const Eigen::VectorXd& beta0, const TestOptions& opt) {
    data.validate();
    const auto& spec = data.spec;
    ConeSpec cone = opt.cone ? *opt.cone : ConeSpec::for_model(spec);
    if (cone.dim() != spec.d_beta()) invalid("cone dimension differs from beta's");
    if (!(opt.alpha > 0 && opt.alpha < 1)) invalid("alpha must lie in (0,1)");
    if (opt.draws < 10000) invalid("critical values need at least 1e4 draws");

    TestReport r;
    r.model = to_string(spec.kind);
    r.n = data.n();
    r.dropped = data.dropped;
    r.beta0 = beta0;
    r.cone = cone.str();
    r.alpha = opt.alpha;
    r.draws = opt.draws;
    r.seed = opt.seed;
    r.delta_names = spec.delta_names();

    MleResult m = rmle(data, beta0, opt.rmle);
    if (!m.converged)
        fail(ErrorKind::Numerical, "non_convergence",
             "restricted MLE did not converge (gradient norm " + std::to_string(m.gradient_norm) + ")");
    r.delta_hat = m.delta_hat;
    r.se = m.se();
    r.loglik = m.loglik;
    r.converged = m.converged;
    r.warnings = m.warnings;

    r.g_n = score_vector_gn(data, beta0, m.delta_hat);
    VarianceEstimate v = variance_hat(data, beta0, m.delta_hat);
    r.warnings.insert(r.warnings.end(), v.warnings.begin(), v.warnings.end());
    RepairedMatrix rep = repair_covariance(v.V);
    r.V_hat = rep.m;

    Statistic st = s_statistic(r.g_n, rep.m, cone);
    r.S_hat = st.S_hat;
    r.T_hat = st.T_hat;
    auto draws = simulate_statistics(rep.m, cone, opt.draws, RngStream(opt.seed, opt.stream), opt.threads);
    r.p_value = p_value(r.S_hat, draws);
    r.c_alpha = quantile_upper(std::move(draws), opt.alpha);
    r.decision = r.S_hat > r.c_alpha ? Decision::Reject : Decision::FailToReject;
    r.hybrid = hybrid_decide(r.S_hat, r.c_alpha, double(r.n), opt.alpha, r.delta_hat, r.se, r.delta_names);
    return r;
}

namespace {

nlohmann::ordered_json vec_json(const Eigen::VectorXd& v) {
    auto a = nlohmann::ordered_json::array();
    for (long i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

nlohmann::ordered_json mat_json(const Eigen::MatrixXd& m) {
    auto a = nlohmann::ordered_json::array();
    for (long i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
    return a;
}

}  // namespace

std::string report_json(const TestReport& r, const std::vector<std::pair<std::string, std::string>>& config) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["n"] = r.n;
    j["dropped"] = r.dropped;
    j["beta0"] = vec_json(r.beta0);
    j["cone"] = r.cone;
    j["g_n"] = vec_json(r.g_n);
    j["V_hat"] = mat_json(r.V_hat);
    j["S_hat"] = r.S_hat;
    j["T_hat"] = r.T_hat;
    j["c_alpha"] = r.c_alpha;
    j["p_value"] = r.p_value;
    j["alpha"] = r.alpha;
    j["decision"] = r.decision == Decision::Reject ? "Reject" : "FailToReject";
    j["hybrid_branch"] = to_string(r.hybrid.branch);
    j["kappa_n"] = r.hybrid.kappa;
    j["c_n"] = r.hybrid.c_n;
    if (r.hybrid.branch == HybridBranch::WaldCI) {
        auto ci = nlohmann::ordered_json::array();
        for (const auto& w : r.hybrid.wald_ci)
            ci.push_back({{"name", w.name}, {"estimate", w.estimate}, {"lower", w.lower}, {"upper", w.upper}});
        j["wald_ci"] = ci;
    } else {
        j["wald_ci"] = nullptr;
    }
    nlohmann::ordered_json est;
    for (std::size_t i = 0; i < r.delta_names.size(); ++i)
        est.push_back({{"name", r.delta_names[i]}, {"estimate", r.delta_hat(i)}, {"se", r.se(i)}});
    j["delta_hat"] = est;
    j["loglik"] = r.loglik;
    j["converged"] = r.converged;
    j["draws"] = r.draws;
    j["seed"] = r.seed;
    j["warnings"] = r.warnings;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : config) cfg[k] = v;
    j["config"] = cfg;
    return j.dump(2) + "\n";
}

}  // namespace lfs
