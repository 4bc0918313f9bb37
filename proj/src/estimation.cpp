#include "lfscore/estimation.hpp"

#include "lfscore/error.hpp"
#include "lfscore/lfp.hpp"
#include "lfscore/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace lfs {

void Dataset::validate() const {
    spec.validate();
    if (y.empty()) fail(ErrorKind::Data, "empty_data", "dataset has no usable rows");
    if (x.rows() != long(y.size()) || x.cols() != spec.x_dim())
        invalid("dataset: x must be n x " + std::to_string(spec.x_dim()));
    for (int v : y)
        if (v < 0 || v >= spec.n_outcomes()) fail(ErrorKind::Data, "bad_outcome", "outcome outside the outcome space");
    if (!x.allFinite()) fail(ErrorKind::Data, "non_finite", "covariates must be finite");
    if (spec.kind == ModelKind::Triangular)
        for (long i = 0; i < x.rows(); ++i)
            if (x(i, 0) != 0.0 && x(i, 0) != 1.0) fail(ErrorKind::Data, "bad_treatment", "d must be 0 or 1");
}

std::vector<DataCell> collapse(const Dataset& data) {
    const long n = data.n();
    std::vector<long> idx(n);
    for (long i = 0; i < n; ++i) idx[i] = i;
    auto less = [&](long a, long b) {
        if (data.y[a] != data.y[b]) return data.y[a] < data.y[b];
        for (long j = 0; j < data.x.cols(); ++j)
            if (data.x(a, j) != data.x(b, j)) return data.x(a, j) < data.x(b, j);
        return false;
    };
    std::sort(idx.begin(), idx.end(), less);
    std::vector<DataCell> cells;
    for (long k = 0; k < n; ++k) {
        long i = idx[k];
        if (!cells.empty() && !less(idx[k - 1], i))
            ++cells.back().count;
        else
            cells.push_back({data.y[i], data.x.row(i).transpose(), 1});
    }
    return cells;
}

namespace {

// phi(z)/Phi(z), with the asymptotic series once Phi underflows
double mills(double z) {
    if (z > -30.0) return normal_pdf(z) / normal_cdf(z);
    double z2 = z * z;
    return -z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2));
}

struct ProbitRow {
    Eigen::VectorXd r;
    int y;
    double w;
};

void require_full_rank(const std::vector<ProbitRow>& rows, const std::string& what) {
    if (rows.empty()) fail(ErrorKind::Data, "empty_data", "no rows for " + what);
    const long k = rows[0].r.size();
    if (k == 0) return;
    Eigen::MatrixXd X(rows.size(), k);
    for (std::size_t i = 0; i < rows.size(); ++i) X.row(i) = rows[i].r.transpose();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < k)
        fail(ErrorKind::Data, "singular_design",
             what + ": design has rank " + std::to_string(qr.rank()) + " < " + std::to_string(k) + " columns");
}

// value, gradient, Hessian of an objective to be maximized
struct Eval {
    double f;
    Eigen::VectorXd g;
    Eigen::MatrixXd H;
};
using Objective = std::function<Eval(const Eigen::VectorXd&, bool)>;

Eval probit_eval(const std::vector<ProbitRow>& rows, const Eigen::VectorXd& b, bool hess) {
    const long k = b.size();
    CompensatedSum f;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(k, k);
    for (const auto& row : rows) {
        double s = row.y ? 1.0 : -1.0;
        double z = s * row.r.dot(b);
        double lam = mills(z);
        f.add(row.w * log_prob(normal_cdf(z)));
        g += row.w * s * lam * row.r;
        if (hess) H -= row.w * lam * (z + lam) * row.r * row.r.transpose();
    }
    return {f.value(), g, H};
}

struct Fit {
    Eigen::VectorXd b;
    Eval e;
    int iterations = 0;
    bool converged = false;
};

// safeguarded Newton: halving line search, steepest ascent when the Newton step is not uphill
Fit maximize(const Objective& obj, Eigen::VectorXd b, int max_iter) {
    Fit out;
    Eval e = obj(b, true);
    int it = 0;
    for (; it < max_iter; ++it) {
        double gn = e.g.norm();
        if (gn <= 1e-8 * std::max(1.0, std::abs(e.f))) {
            out.converged = true;
            break;
        }
        Eigen::VectorXd dir;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(-e.H);
        bool newton = ldlt.info() == Eigen::Success && ldlt.isPositive();
        if (newton) {
            dir = ldlt.solve(e.g);
            newton = dir.allFinite() && dir.dot(e.g) > 0;
        }
        if (!newton) dir = e.g / std::max(1.0, gn);
        double step = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls) {
            Eigen::VectorXd cand = b + step * dir;
            Eval ce = obj(cand, newton && ls == 0);
            // next to the optimum f is flat to rounding; a full Newton step that shrinks g is taken
            bool flat = newton && ls == 0 && std::isfinite(ce.f) && ce.f >= e.f - 1e-13 * (1 + std::abs(e.f)) &&
                        ce.g.size() == e.g.size() && ce.g.norm() < gn;
            if (std::isfinite(ce.f) && (ce.f >= e.f || flat)) {
                b = cand;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        e = obj(b, true);
        if (!moved) {
            out.converged = e.g.norm() <= 1e-8 * std::max(1.0, std::abs(e.f));
            break;
        }
    }
    out.b = b;
    out.e = e;
    out.iterations = it;
    if (!out.converged) out.converged = e.g.norm() <= 1e-8 * std::max(1.0, std::abs(e.f));
    return out;
}

// ---- model-specific null likelihoods

std::vector<ProbitRow> game_rows(const ModelSpec& spec, const std::vector<DataCell>& cells, int player) {
    std::vector<ProbitRow> rows;
    for (const auto& c : cells) {
        int yj = player == 0 ? c.y >> 1 : c.y & 1;
        rows.push_back({game_regressors(spec, c.x, player), yj, double(c.count)});
    }
    return rows;
}

std::vector<ProbitRow> outcome_rows(const ModelSpec& spec, const std::vector<DataCell>& cells) {
    std::vector<ProbitRow> rows;
    for (const auto& c : cells) {
        auto p = triangular_parts(spec, c.x);
        Eigen::VectorXd r(1 + p.w.size());
        r << p.d, p.w;
        rows.push_back({r, c.y, double(c.count)});
    }
    return rows;
}

std::vector<ProbitRow> selection_rows(const ModelSpec& spec, const std::vector<DataCell>& cells) {
    std::vector<ProbitRow> rows;
    for (const auto& c : cells) {
        auto p = triangular_parts(spec, c.x);
        rows.push_back({p.z, int(p.d), double(c.count)});
    }
    return rows;
}

// random-effects probit over two periods; parameters (eta, gamma)
Eval panel_eval(const ModelSpec& spec, const std::vector<DataCell>& cells, const Eigen::VectorXd& th, bool hess) {
    const auto& rule = gauss_hermite_cached(spec.quad_order);
    const int kk = int(th.size()) - 1;
    auto value_grad = [&](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
        Eigen::VectorXd eta = p.head(kk);
        double gam = p(kk);
        CompensatedSum f;
        g = Eigen::VectorXd::Zero(p.size());
        constexpr double s2 = 1.4142135623730950488;
        for (const auto& c : cells) {
            Eigen::VectorXd r1 = panel_regressors(spec, c.x, 0), r2 = panel_regressors(spec, c.x, 1);
            double i1 = r1.dot(eta), i2 = r2.dot(eta);
            double s1 = (c.y >> 1) ? 1.0 : -1.0, s2sgn = (c.y & 1) ? 1.0 : -1.0;
            double L = 0, dl1 = 0, dl2 = 0, dg = 0;
            for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
                double a = s2 * rule.nodes[k], w = rule.weights[k] / kSqrtPi;
                double z1 = s1 * (i1 + gam * a), z2 = s2sgn * (i2 + gam * a);
                double P = normal_cdf(z1) * normal_cdf(z2);
                double g1 = s1 * mills(z1), g2 = s2sgn * mills(z2);
                L += w * P;
                dl1 += w * P * g1;
                dl2 += w * P * g2;
                dg += w * P * (g1 + g2) * a;
            }
            double Lc = std::max(L, 1e-300);
            f.add(c.count * log_prob(L));
            g.head(kk) += c.count * (r1 * dl1 + r2 * dl2) / Lc;
            g(kk) += c.count * dg / Lc;
        }
        return f.value();
    };
    Eval e;
    e.f = value_grad(th, e.g);
    if (hess) {
        const int k = int(th.size());
        e.H.resize(k, k);
        for (int j = 0; j < k; ++j) {
            double h = 1e-5 * std::max(1.0, std::abs(th(j)));
            Eigen::VectorXd tp = th, tm = th, gp, gm;
            tp(j) += h;
            tm(j) -= h;
            value_grad(tp, gp);
            value_grad(tm, gm);
            e.H.col(j) = (gp - gm) / (2 * h);
        }
        e.H = 0.5 * (e.H + e.H.transpose()).eval();
    }
    return e;
}

// Probit information is sum_i w_i x_i x_i' with w_i <= 2/pi.  Along its weakest direction, relative
// to X'X, the average weight collapses to 0 only when the outcome is (quasi-)separated.
void check_separation(const std::vector<ProbitRow>& rows, const Eigen::MatrixXd& H, const std::string& what) {
    const long k = H.rows();
    if (k == 0) return;
    Eigen::MatrixXd XtX = Eigen::MatrixXd::Zero(k, k);
    for (const auto& r : rows) XtX += r.w * r.r * r.r.transpose();
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(-H, XtX, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < 1e-6)
        fail(ErrorKind::Numerical, "separation",
             what + ": the outcome is (quasi-)separated by the covariates; the MLE does not exist");
}

Eigen::MatrixXd inverse_information(const Eigen::MatrixXd& H, std::vector<std::string>& warnings) {
    Eigen::MatrixXd I = -H;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(I);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        warnings.push_back("information matrix is not positive definite; vcov from a pseudo-inverse");
        return I.completeOrthogonalDecomposition().pseudoInverse();
    }
    return ldlt.solve(Eigen::MatrixXd::Identity(I.rows(), I.cols()));
}

Eigen::MatrixXd block_diag(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(a.rows() + b.rows(), a.cols() + b.cols());
    m.topLeftCorner(a.rows(), a.cols()) = a;
    m.bottomRightCorner(b.rows(), b.cols()) = b;
    return m;
}

void check_beta0(const ModelSpec& spec, const Eigen::VectorXd& beta0) {
    if (beta0.size() != spec.d_beta())
        invalid("beta0 must have " + std::to_string(spec.d_beta()) + " entries for " + to_string(spec.kind));
    if (beta0.cwiseAbs().maxCoeff() != 0.0)
        invalid("beta0 must be the completeness point 0; the null model is only complete there");
}

}  // namespace

MleResult rmle(const Dataset& data, const Eigen::VectorXd& beta0, const RmleOptions& opt) {
    data.validate();
    const auto& spec = data.spec;
    check_beta0(spec, beta0);
    auto cells = collapse(data);
    MleResult res;

    auto run_probits = [&](const std::vector<std::vector<ProbitRow>>& parts, const std::vector<std::string>& names) {
        std::vector<Fit> fits;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            require_full_rank(parts[p], names[p]);
            const auto& rows = parts[p];
            Objective obj = [&rows](const Eigen::VectorXd& b, bool h) { return probit_eval(rows, b, h); };
            const long k = rows[0].r.size();
            Fit best = maximize(obj, Eigen::VectorXd::Zero(k), opt.max_iter);
            if (opt.multistart) {
                RngStream rng(opt.seed, p);
                for (int s = 0; s < 5; ++s) {
                    Eigen::VectorXd b0(k);
                    for (long j = 0; j < k; ++j) b0(j) = rng.normal();
                    Fit f = maximize(obj, b0, opt.max_iter);
                    if (f.converged && f.e.f > best.e.f) best = f;
                }
            }
            check_separation(rows, best.e.H, names[p]);
            fits.push_back(best);
        }
        Eigen::VectorXd delta(spec.d_delta());
        Eigen::MatrixXd vcov(0, 0);
        long off = 0;
        double ll = 0, g2 = 0;
        bool conv = true;
        int iters = 0;
        for (auto& f : fits) {
            delta.segment(off, f.b.size()) = f.b;
            off += f.b.size();
            ll += f.e.f;
            g2 += f.e.g.squaredNorm();
            conv = conv && f.converged;
            iters = std::max(iters, f.iterations);
            vcov = block_diag(vcov, inverse_information(f.e.H, res.warnings));
        }
        res.delta_hat = delta;
        res.loglik = ll;
        res.gradient_norm = std::sqrt(g2);
        res.converged = conv && res.gradient_norm <= 1e-8 * std::max(1.0, std::abs(ll));
        res.iterations = iters;
        res.vcov = vcov;
    };

    switch (spec.kind) {
        case ModelKind::Game2x2:
            run_probits({game_rows(spec, cells, 0), game_rows(spec, cells, 1)}, {"player 1 equation", "player 2 equation"});
            break;
        case ModelKind::Triangular:
            run_probits({outcome_rows(spec, cells), selection_rows(spec, cells)},
                        {"outcome equation", "selection equation"});
            break;
        case ModelKind::Panel2: {
            std::vector<ProbitRow> stacked;
            for (const auto& c : cells)
                for (int t = 0; t < 2; ++t) stacked.push_back({panel_regressors(spec, c.x, t), 0, 1.0});
            require_full_rank(stacked, "panel index");
            Objective obj = [&](const Eigen::VectorXd& th, bool h) { return panel_eval(spec, cells, th, h); };
            const int k = spec.d_delta();
            // gamma = 0 is a stationary point of the symmetric likelihood, so start away from it
            Eigen::VectorXd start = Eigen::VectorXd::Zero(k);
            start(k - 1) = 0.5;
            Fit best = maximize(obj, start, opt.max_iter);
            if (opt.multistart) {
                RngStream rng(opt.seed, 0);
                for (int s = 0; s < 5; ++s) {
                    Eigen::VectorXd b0(k);
                    for (int j = 0; j < k; ++j) b0(j) = rng.normal();
                    Fit f = maximize(obj, b0, opt.max_iter);
                    if (f.converged && f.e.f > best.e.f) best = f;
                }
            }
            res.delta_hat = best.b;
            res.delta_hat(k - 1) = std::abs(best.b(k - 1));
            res.loglik = best.e.f;
            res.gradient_norm = best.e.g.norm();
            res.iterations = best.iterations;
            res.converged = best.converged;
            res.vcov = inverse_information(best.e.H, res.warnings);
            break;
        }
    }
    if (!res.converged) res.warnings.push_back("rmle did not converge");
    return res;
}

double null_loglik(const Dataset& data, const Eigen::VectorXd& delta) {
    data.validate();
    const auto& spec = data.spec;
    if (delta.size() != spec.d_delta()) invalid("delta has wrong dimension");
    auto cells = collapse(data);
    Theta t{Eigen::VectorXd::Zero(spec.d_beta()), delta};
    CompensatedSum f;
    for (const auto& c : cells) f.add(c.count * log_prob(lfp(spec, c.x, t).q[c.y]));
    if (spec.kind == ModelKind::Triangular) {
        // plus the selection equation
        const long kz = spec.k2 + (spec.intercept ? 1 : 0);
        auto rows = selection_rows(spec, cells);
        f.add(probit_eval(rows, delta.tail(kz), false).f);
    }
    return f.value();
}

std::vector<Eigen::VectorXd> cell_beta_scores(const std::vector<DataCell>& cells, const ModelSpec& spec,
                                              const Theta& theta0) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(cells.size());
    for (const auto& c : cells) out.push_back(score(spec, c.y, c.x, theta0).s_beta);
    return out;
}

VarianceEstimate variance_hat(const Dataset& data, const Eigen::VectorXd& beta0, const Eigen::VectorXd& delta_hat) {
    data.validate();
    const auto& spec = data.spec;
    check_beta0(spec, beta0);
    if (delta_hat.size() != spec.d_delta()) invalid("delta_hat has wrong dimension");
    auto cells = collapse(data);
    auto s = cell_beta_scores(cells, spec, Theta{beta0, delta_hat});
    const int db = spec.d_beta();
    VarianceEstimate v;
    v.V = Eigen::MatrixXd::Zero(db, db);
    // entrywise compensated sums keep the result independent of row order
    for (int a = 0; a < db; ++a)
        for (int b = a; b < db; ++b) {
            CompensatedSum acc;
            for (std::size_t i = 0; i < cells.size(); ++i) acc.add(cells[i].count * s[i](a) * s[i](b));
            v.V(a, b) = v.V(b, a) = acc.value() / double(data.n());
        }
    for (std::size_t i = 0; i < s.size(); ++i)
        if (!s[i].allFinite()) fail(ErrorKind::Numerical, "non_finite_score", "score is not finite");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v.V);
    double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    v.condition = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(v.condition <= 1e12)) v.warnings.push_back("V_hat is ill-conditioned; a ridge is applied before inversion");
    return v;
}

}  // namespace lfs
