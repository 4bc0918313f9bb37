#include "lfscore/lfp.hpp"

#include "lfscore/error.hpp"
#include "lfscore/numcore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace lfs {

std::string to_string(RegionLabel r) {
    switch (r) {
        case RegionLabel::Theta1: return "Theta1";
        case RegionLabel::Theta2: return "Theta2";
        case RegionLabel::Theta3: return "Theta3";
    }
    return "?";
}

// ---------------------------------------------------------------- game

namespace {

struct GameTerms {
    double a, ab, na, nab;  // Phi1, Phi1beta and complements
    double b, bb, nb, nbb;
    double da, db;  // Phi1 - Phi1beta, Phi2 - Phi2beta
    double q00, q11, lower10, upper10, D, rest, omega;
    bool degenerate;
};

GameTerms game_terms(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta) {
    if (spec.kind != ModelKind::Game2x2) invalid("game formulas need a game2x2 spec");
    if (x.size() != spec.x_dim() || theta.delta.size() != spec.d_delta() || theta.beta.size() != 2)
        invalid("game2x2: dimension mismatch");
    check_sign_region(spec, theta);
    double i1 = game_index(spec, x, theta.delta, 0), i2 = game_index(spec, x, theta.delta, 1);
    GameTerms g;
    g.a = normal_cdf(i1);
    g.na = normal_cdf(-i1);
    g.ab = normal_cdf(i1 + theta.beta(0));
    g.nab = normal_cdf(-i1 - theta.beta(0));
    g.b = normal_cdf(i2);
    g.nb = normal_cdf(-i2);
    g.bb = normal_cdf(i2 + theta.beta(1));
    g.nbb = normal_cdf(-i2 - theta.beta(1));
    g.da = normal_cdf_diff(i1, i1 + theta.beta(0));
    g.db = normal_cdf_diff(i2, i2 + theta.beta(1));
    g.q00 = g.na * g.nb;
    g.q11 = g.ab * g.bb;
    g.lower10 = g.a * g.nb + g.ab * g.db;
    g.upper10 = g.a * g.nbb;
    g.D = g.a * g.nb + g.b * g.na;
    // 1 - q00 - q11 as a sum of non-negative terms
    g.rest = g.D + g.a * g.db + g.bb * g.da;
    g.degenerate = !(g.D > 0);
    // interior root of the first-order condition: omega = z1 (1 - q00 - q11) / D
    g.omega = g.degenerate ? g.lower10 : g.a * g.nb * g.rest / g.D;
    return g;
}

RegionLabel game_region(const GameTerms& g) {
    if (g.degenerate) return RegionLabel::Theta1;
    if (g.omega < g.lower10) return RegionLabel::Theta2;
    if (g.upper10 < g.omega) return RegionLabel::Theta3;
    return RegionLabel::Theta1;
}

}  // namespace

RegionLabel classify_region(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta) {
    return game_region(game_terms(spec, x, theta));
}

DensityRow lfp_game(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta) {
    auto g = game_terms(spec, x, theta);
    DensityRow r;
    r.n = 4;
    r.region = game_region(g);
    r.q[0] = g.q00;
    r.q[3] = g.q11;
    switch (r.region) {
        case RegionLabel::Theta1:
            r.q[2] = g.omega;
            r.q[1] = g.degenerate ? g.rest - g.omega : g.b * g.na * g.rest / g.D;
            break;
        case RegionLabel::Theta2:
            r.q[2] = g.lower10;
            r.q[1] = g.nab * g.b;
            break;
        case RegionLabel::Theta3:
            r.q[2] = g.upper10;
            r.q[1] = g.na * g.b + g.bb * g.da;
            break;
    }
    return r;
}

// ---------------------------------------------------------------- triangular

DensityRow lfp_triangular(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta) {
    if (spec.kind != ModelKind::Triangular) invalid("lfp_triangular needs a triangular spec");
    if (x.size() != spec.x_dim() || theta.delta.size() != spec.d_delta() || theta.beta.size() != 1)
        invalid("triangular: dimension mismatch");
    check_sign_region(spec, theta);
    auto p = triangular_parts(spec, x);
    int kw = int(p.w.size()), kz = int(p.z.size());
    double o = theta.delta(0) * p.d + p.w.dot(theta.delta.segment(1, kw));
    double zg = p.z.dot(theta.delta.segment(1 + kw, kz));
    double beta = theta.beta(0);
    DensityRow r;
    r.n = 2;
    if (p.d == 0.0) {
        double s = beta * std::max(zg, 0.0);
        r.q[0] = normal_cdf(-o + s);
        r.q[1] = normal_cdf(o - s);
        r.region = zg > 0 && beta > 0 ? RegionLabel::Theta2 : RegionLabel::Theta1;
    } else if (p.d == 1.0) {
        double s = beta * std::min(zg, 0.0);
        r.q[1] = normal_cdf(o - s);
        r.q[0] = normal_cdf(-o + s);
        r.region = zg < 0 && beta > 0 ? RegionLabel::Theta2 : RegionLabel::Theta1;
    } else {
        invalid("triangular: d must be 0 or 1");
    }
    return r;
}

// ---------------------------------------------------------------- panel

DensityRow lfp_panel(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta) {
    if (spec.kind != ModelKind::Panel2) invalid("lfp_panel needs a panel2 spec");
    if (spec.quad_order < 8) invalid("lfp_panel: quadrature order below 8 is refused");
    if (x.size() != spec.x_dim() || theta.delta.size() != spec.d_delta() || theta.beta.size() != 1)
        invalid("panel2: dimension mismatch");
    check_sign_region(spec, theta);
    const auto& rule = gauss_hermite_cached(spec.quad_order);
    int kk = spec.k1 + (spec.intercept ? 1 : 0);
    Eigen::VectorXd eta = theta.delta.head(kk);
    double gam = theta.delta(kk), beta = theta.beta(0);
    double i1 = panel_regressors(spec, x, 0).dot(eta), i2 = panel_regressors(spec, x, 1).dot(eta);

    // integrals against phi(a)
    double n00 = 0, n01 = 0, n10 = 0, n1m2 = 0, p11 = 0, shift11 = 0, up10 = 0, lo10 = 0, band = 0;
    constexpr double s2 = 1.4142135623730950488;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
        double a = s2 * rule.nodes[k], w = rule.weights[k] / kSqrtPi;
        double F1 = normal_cdf(i1 + gam * a), nF1 = normal_cdf(-i1 - gam * a);
        double F2 = normal_cdf(i2 + gam * a), nF2 = normal_cdf(-i2 - gam * a);
        double F1b = normal_cdf(i1 + beta + gam * a);
        double F2b = normal_cdf(i2 + beta + gam * a), nF2b = normal_cdf(-i2 - beta - gam * a);
        n00 += w * nF1 * nF2;
        n01 += w * nF1 * F2;
        n10 += w * F1 * nF2;
        n1m2 += w * nF2;
        p11 += w * F1 * F2b;
        shift11 += w * F1 * normal_cdf_diff(i2 + beta + gam * a, i2 + gam * a);
        up10 += w * F1b * nF2b;
        lo10 += w * F1 * nF2b;
        band += w * normal_cdf_diff(i1 + beta + gam * a, i1 + gam * a) * nF2b;
    }
    double K = n1m2 - shift11;  // mass left for (0,0) and (1,0)
    double prop10 = n10 * K / n1m2;

    DensityRow r;
    r.n = 4;
    r.q[1] = n01;
    r.q[3] = p11;
    if (prop10 >= up10 && beta > 0) {
        r.region = RegionLabel::Theta1;
        r.q[2] = up10;
        r.q[0] = n00 - band;
    } else if (prop10 < lo10) {
        r.region = RegionLabel::Theta3;
        r.q[2] = lo10;
        r.q[0] = n00;
    } else {
        r.region = RegionLabel::Theta2;
        r.q[2] = prop10;
        r.q[0] = n00 * K / n1m2;
    }
    return r;
}

DensityRow lfp(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta) {
    switch (spec.kind) {
        case ModelKind::Game2x2: return lfp_game(spec, x, theta);
        case ModelKind::Triangular: return lfp_triangular(spec, x, theta);
        case ModelKind::Panel2: return lfp_panel(spec, x, theta);
    }
    invalid("unknown model");
}

DensityRow null_density(const ModelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& delta) {
    Theta t{Eigen::VectorXd::Zero(spec.d_beta()), delta};
    return lfp(spec, x, t);
}

// ---------------------------------------------------------------- generic solver

double lfp_objective(const std::vector<double>& q0, const std::vector<double>& q1) {
    double f = 0.0;
    for (std::size_t y = 0; y < q0.size(); ++y) {
        double s = q0[y] + q1[y];
        if (s > 0) f += s * std::log(s / q0[y]);
    }
    return f;
}

namespace {

struct Affine {
    Eigen::VectorXd qp;
    Eigen::MatrixXd N;
    double residual;
};

// {q : E q = e} = qp + range(N)
Affine affine_param(const Eigen::MatrixXd& E, const Eigen::VectorXd& e) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    int r = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > 1e-12 * sv(0)) ++r;
    Affine a;
    a.qp = Eigen::VectorXd::Zero(E.cols());
    for (int i = 0; i < r; ++i) a.qp += svd.matrixV().col(i) * (svd.matrixU().col(i).dot(e) / sv(i));
    a.N = svd.matrixV().rightCols(E.cols() - r);
    a.residual = (E * a.qp - e).cwiseAbs().maxCoeff();
    return a;
}

struct Objective {
    const Eigen::VectorXd& q0;
    const Eigen::VectorXd& qp;
    const Eigen::MatrixXd& N;

    Eigen::VectorXd q(const Eigen::VectorXd& t) const { return qp + N * t; }
    bool in_domain(const Eigen::VectorXd& t) const { return ((q0 + q(t)).array() > 0).all(); }
    double value(const Eigen::VectorXd& t) const {
        Eigen::VectorXd s = q0 + q(t);
        double f = 0;
        for (int i = 0; i < s.size(); ++i) f += s(i) * std::log(s(i) / q0(i));
        return f;
    }
    void derivs(const Eigen::VectorXd& t, Eigen::VectorXd& g, Eigen::MatrixXd& H) const {
        Eigen::VectorXd s = q0 + q(t);
        Eigen::VectorXd gy = (s.array() / q0.array()).log() + 1.0;
        g = N.transpose() * gy;
        H = N.transpose() * s.cwiseInverse().asDiagonal() * N;
    }
};

// minimize obj(t) - mu * sum log(C t - d), halving mu until m*mu < 1e-12
Eigen::VectorXd barrier_path(const Objective& obj, const Eigen::MatrixXd& C, const Eigen::VectorXd& d,
                             Eigen::VectorXd t, double& mu) {
    const int m = int(C.rows());
    auto F = [&](const Eigen::VectorXd& v, double mu_) {
        Eigen::VectorXd s = C * v - d;
        if ((s.array() <= 0).any() || !obj.in_domain(v)) return std::numeric_limits<double>::infinity();
        return obj.value(v) - mu_ * s.array().log().sum();
    };
    mu = 1.0;
    while (true) {
        for (int it = 0; it < 100; ++it) {
            Eigen::VectorXd g;
            Eigen::MatrixXd H;
            obj.derivs(t, g, H);
            Eigen::VectorXd s = C * t - d;
            for (int i = 0; i < m; ++i) {
                g -= mu * C.row(i).transpose() / s(i);
                H += mu * C.row(i).transpose() * C.row(i) / (s(i) * s(i));
            }
            Eigen::VectorXd dx = -H.ldlt().solve(g);
            double lam2 = -g.dot(dx);
            if (!(lam2 > 1e-22)) break;
            double f0 = F(t, mu), step = 1.0;
            int bt = 0;
            while (bt < 80 && !(F(t + step * dx, mu) <= f0 - 0.25 * step * lam2)) {
                step *= 0.5;
                ++bt;
            }
            if (bt == 80) break;
            t += step * dx;
            if (lam2 < 1e-18) break;
        }
        if (m == 0 || m * mu < 1e-12) break;
        mu *= 0.5;
    }
    return t;
}

struct KktCheck {
    double residual;
    Eigen::VectorXd lambda;  // multipliers of active inequalities
};

// Lawson-Hanson: min ||B x - b|| subject to x >= 0
Eigen::VectorXd nnls(const Eigen::MatrixXd& B, const Eigen::VectorXd& b) {
    const int n = int(B.cols());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive(n, false);
    for (int outer = 0; outer < 3 * n + 3; ++outer) {
        Eigen::VectorXd w = B.transpose() * (b - B * x);
        int j = -1;
        double best = 1e-14;
        for (int i = 0; i < n; ++i)
            if (!passive[i] && w(i) > best) {
                best = w(i);
                j = i;
            }
        if (j < 0) break;
        passive[j] = true;
        for (int inner = 0; inner < 3 * n + 3; ++inner) {
            std::vector<int> idx;
            for (int i = 0; i < n; ++i)
                if (passive[i]) idx.push_back(i);
            Eigen::MatrixXd Bp(B.rows(), idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) Bp.col(i) = B.col(idx[i]);
            Eigen::VectorXd zp = Bp.completeOrthogonalDecomposition().solve(b);
            Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
            for (std::size_t i = 0; i < idx.size(); ++i) z(idx[i]) = zp(i);
            bool ok = true;
            for (int i : idx) ok = ok && z(i) > 0;
            if (ok) {
                x = z;
                break;
            }
            double step = 1.0;
            for (int i : idx)
                if (z(i) <= 0) step = std::min(step, x(i) / (x(i) - z(i)));
            x += step * (z - x);
            for (int i : idx)
                if (x(i) <= 1e-15) {
                    x(i) = 0;
                    passive[i] = false;
                }
        }
    }
    return x;
}

// stationarity: grad f = Eeq' xi + Aact' lambda with lambda >= 0.  The active rows are often
// redundant, so the multipliers come from NNLS after projecting out the equality directions.
KktCheck kkt_residual(const Eigen::VectorXd& q0, const Eigen::VectorXd& q, const Eigen::MatrixXd& Eeq,
                      const Eigen::MatrixXd& Aact) {
    Eigen::VectorXd s = q0 + q;
    Eigen::VectorXd gy = (s.array() / q0.array()).log() + 1.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eeq.transpose(), Eigen::ComputeFullU);
    int r = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()(i) > 1e-12 * svd.singularValues()(0)) ++r;
    Eigen::MatrixXd Q = svd.matrixU().leftCols(r);
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(q.size(), q.size()) - Q * Q.transpose();
    KktCheck k;
    k.lambda = Aact.rows() ? nnls(P * Aact.transpose(), P * gy) : Eigen::VectorXd();
    Eigen::VectorXd res = P * gy;
    if (Aact.rows()) res -= P * Aact.transpose() * k.lambda;
    k.residual = res.cwiseAbs().maxCoeff();
    return k;
}

// true when no nonnegative multipliers fit; neg is then the most negative least-squares multiplier
bool negative_multiplier(const Eigen::VectorXd& q0, const Eigen::VectorXd& q, const Eigen::MatrixXd& Eeq,
                         const Eigen::MatrixXd& A, Eigen::Index& neg) {
    if (A.rows() == 0 || kkt_residual(q0, q, Eeq, A).residual <= 1e-9) return false;
    Eigen::VectorXd s = q0 + q;
    Eigen::VectorXd gy = (s.array() / q0.array()).log() + 1.0;
    Eigen::MatrixXd M(q.size(), Eeq.rows() + A.rows());
    M << Eeq.transpose(), A.transpose();
    Eigen::VectorXd mult = M.completeOrthogonalDecomposition().solve(gy);
    return mult.tail(A.rows()).minCoeff(&neg) < 0;
}

std::string fmt_event(Event a, int ny) {
    std::string s = "{";
    bool first = true;
    for (int y = 0; y < ny; ++y)
        if (a >> y & 1u) {
            if (!first) s += ",";
            s += "y" + std::to_string(y);
            first = false;
        }
    return s + "}";
}

}  // namespace

GenericLfp lfp_generic(const std::vector<double>& lower0, const std::vector<double>& lower1) {
    const int ne = int(lower1.size());
    if (ne != int(lower0.size()) || ne < 2 || ne > 16 || (ne & (ne - 1)) != 0)
        invalid("lfp_generic: rows must have 2^|Y| entries with |Y| <= 4");
    const int ny = std::countr_zero(unsigned(ne));
    const Event full = Event(ne - 1);
    for (const auto* row : {&lower0, &lower1}) {
        if (std::abs((*row)[full] - 1.0) > 1e-10) invalid("lfp_generic: lower(Y) must equal 1");
        for (int a = 1; a < ne; ++a) {
            double pair = (*row)[a] + (*row)[full & ~Event(a)];
            if (Event(a) != full && pair > 1.0 + 1e-10)
                fail(ErrorKind::Numerical, "infeasible",
                     "lfp_generic: constraint set is empty; event " + fmt_event(Event(a), ny) +
                         " and its complement have lower bounds summing above 1");
        }
    }

    // q0 must be forced by its row
    Eigen::VectorXd q0(ny);
    for (int y = 0; y < ny; ++y) {
        Event s = 1u << y;
        if (lower0[s] + lower0[full & ~s] < 1.0 - 1e-10)
            invalid("lfp_generic: the null row does not pin down q0 (model not complete at theta0)");
        q0(y) = lower0[s];
    }
    if ((q0.array() <= 0).any())
        fail(ErrorKind::Numerical, "degenerate_support", "lfp_generic: q0 has an empty cell");

    // forced events of the alternative become equalities
    std::vector<Event> eq_events, ineq_events;
    for (int a = 1; a < ne; ++a) {
        if (Event(a) == full) continue;
        if (lower1[a] + lower1[full & ~Event(a)] >= 1.0 - 1e-12)
            eq_events.push_back(Event(a));
        else
            ineq_events.push_back(Event(a));
    }
    auto row_of = [&](Event a) {
        Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(ny);
        for (int y = 0; y < ny; ++y)
            if (a >> y & 1u) r(y) = 1.0;
        return r;
    };
    Eigen::MatrixXd Eeq(eq_events.size() + 1, ny);
    Eigen::VectorXd eeq(eq_events.size() + 1);
    Eeq.row(0) = row_of(full);
    eeq(0) = 1.0;
    for (std::size_t i = 0; i < eq_events.size(); ++i) {
        Eeq.row(i + 1) = row_of(eq_events[i]);
        eeq(i + 1) = lower1[eq_events[i]];
    }
    Affine base = affine_param(Eeq, eeq);
    if (base.residual > 1e-9) fail(ErrorKind::Numerical, "infeasible", "lfp_generic: forced events are inconsistent");

    // inequalities in the reduced coordinates: C t >= d
    std::vector<Event> kept;
    std::vector<Eigen::RowVectorXd> crows;
    std::vector<double> dvals;
    for (Event a : ineq_events) {
        Eigen::RowVectorXd ar = row_of(a);
        Eigen::RowVectorXd c = ar * base.N;
        double rhs = lower1[a] - ar.dot(base.qp);
        if (c.norm() < 1e-13) {
            if (rhs > 1e-10)
                fail(ErrorKind::Numerical, "infeasible", "lfp_generic: event " + fmt_event(a, ny) + " cannot be met");
            continue;
        }
        kept.push_back(a);
        crows.push_back(c);
        dvals.push_back(rhs);
    }
    const int k = int(base.N.cols());
    Eigen::MatrixXd C(kept.size(), k);
    Eigen::VectorXd d(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        C.row(i) = crows[i];
        d(i) = dvals[i];
    }

    // strictly feasible start: mass of each focal set split evenly (relative interior of the core)
    std::vector<double> mob(ne, 0.0);
    for (int a = 0; a < ne; ++a)
        for (int b = a;; b = (b - 1) & a) {
            int sign = (std::popcount(unsigned(a & ~b)) % 2) ? -1 : 1;
            mob[a] += sign * lower1[b];
            if (b == 0) break;
        }
    Eigen::VectorXd qs = Eigen::VectorXd::Zero(ny);
    for (int a = 1; a < ne; ++a)
        for (int y = 0; y < ny; ++y)
            if (a >> y & 1) qs(y) += mob[a] / std::popcount(unsigned(a));
    Eigen::VectorXd t0 = base.N.transpose() * (qs - base.qp);
    if (k > 0 && C.rows() > 0 && ((C * t0 - d).array() <= 0).any()) {
        // not a belief function: phase I, maximize the smallest slack
        Eigen::MatrixXd C1(C.rows() + 1, k + 1);
        Eigen::VectorXd d1(C.rows() + 1);
        C1 << C, -Eigen::VectorXd::Ones(C.rows()), Eigen::RowVectorXd::Zero(k), -1.0;
        d1 << d, -1.0;
        Eigen::VectorXd tt(k + 1);
        tt << t0, (C * t0 - d).minCoeff() - 1.0;
        // objective -s, barrier on all slacks
        double mu = 1.0;
        for (; mu * C1.rows() > 1e-13; mu *= 0.5) {
            for (int it = 0; it < 100; ++it) {
                Eigen::VectorXd s = C1 * tt - d1;
                Eigen::VectorXd g = Eigen::VectorXd::Zero(k + 1);
                g(k) = -1.0;
                Eigen::MatrixXd H = 1e-14 * Eigen::MatrixXd::Identity(k + 1, k + 1);
                for (int i = 0; i < C1.rows(); ++i) {
                    g -= mu * C1.row(i).transpose() / s(i);
                    H += mu * C1.row(i).transpose() * C1.row(i) / (s(i) * s(i));
                }
                Eigen::VectorXd dx = -H.ldlt().solve(g);
                double lam2 = -g.dot(dx);
                if (!(lam2 > 1e-20)) break;
                auto Fv = [&](const Eigen::VectorXd& v) {
                    Eigen::VectorXd sv = C1 * v - d1;
                    if ((sv.array() <= 0).any()) return std::numeric_limits<double>::infinity();
                    return -v(k) - mu * sv.array().log().sum();
                };
                double f0 = Fv(tt), step = 1.0;
                while (step > 1e-20 && !(Fv(tt + step * dx) <= f0 - 0.25 * step * lam2)) step *= 0.5;
                if (step <= 1e-20) break;
                tt += step * dx;
            }
        }
        Eigen::VectorXd s = C * tt.head(k) - d;
        if (s.minCoeff() <= 1e-13) {
            Eigen::Index worst;
            s.minCoeff(&worst);
            fail(ErrorKind::Numerical, "infeasible",
                 "lfp_generic: constraint set has no interior; event " + fmt_event(kept[worst], ny) + " is violated");
        }
        t0 = tt.head(k);
    }

    Objective obj{q0, base.qp, base.N};
    double mu = 0.0;
    Eigen::VectorXd t = k > 0 ? barrier_path(obj, C, d, t0, mu) : t0;
    Eigen::VectorXd q = obj.q(t);

    GenericLfp out;
    // active-set polish: solve the equality-constrained problem on the binding events
    auto build_active = [&](const std::vector<int>& act) {
        Eigen::MatrixXd A(act.size(), ny);
        for (std::size_t i = 0; i < act.size(); ++i) A.row(i) = row_of(kept[act[i]]);
        return A;
    };
    // adding row i keeps the equality system consistent and raises its rank
    auto extends = [&](const std::vector<int>& act, int i) {
        std::vector<int> trial = act;
        trial.push_back(i);
        Eigen::MatrixXd A = build_active(trial);
        Eigen::MatrixXd E2(Eeq.rows() + A.rows(), ny);
        E2 << Eeq, A;
        Eigen::VectorXd e2(E2.rows());
        e2.head(Eeq.rows()) = eeq;
        for (std::size_t j = 0; j < trial.size(); ++j) e2(Eeq.rows() + j) = lower1[kept[trial[j]]];
        Affine red = affine_param(E2, e2);
        Eigen::MatrixXd E1 = E2.topRows(E2.rows() - 1);
        return red.residual <= 1e-12 && red.N.cols() < affine_param(E1, e2.head(E1.rows())).N.cols();
    };
    std::vector<int> active;
    if (k > 0) {
        Eigen::VectorXd s = C * t - d;
        std::vector<int> cand;
        for (int i = 0; i < C.rows(); ++i)
            if (s(i) < 1e-9 || mu / s(i) > s(i)) cand.push_back(i);
        std::sort(cand.begin(), cand.end(), [&](int a, int b) { return s(a) < s(b); });
        for (int i : cand)
            if (extends(active, i)) active.push_back(i);
    }
    Eigen::VectorXd qbest = q;
    for (int round = 0; round < 12 && k > 0; ++round) {
        Eigen::MatrixXd A = build_active(active);
        Eigen::MatrixXd E2(Eeq.rows() + A.rows(), ny);
        Eigen::VectorXd e2(Eeq.rows() + A.rows());
        E2 << Eeq, A;
        e2.head(Eeq.rows()) = eeq;
        for (std::size_t i = 0; i < active.size(); ++i) e2(Eeq.rows() + i) = lower1[kept[active[i]]];
        Affine red = affine_param(E2, e2);
        if (red.residual > 1e-12) break;
        Objective o2{q0, red.qp, red.N};
        Eigen::VectorXd u = red.N.transpose() * (q - red.qp);
        if (!o2.in_domain(u)) break;
        for (int it = 0; it < 60 && red.N.cols() > 0; ++it) {
            Eigen::VectorXd g;
            Eigen::MatrixXd H;
            o2.derivs(u, g, H);
            Eigen::VectorXd dx = -H.ldlt().solve(g);
            double step = 1.0;
            while (step > 1e-12 && !o2.in_domain(u + step * dx)) step *= 0.5;
            u += step * dx;
            if (dx.norm() * step < 1e-16) break;
        }
        Eigen::VectorXd qn = o2.q(u);
        // primal feasibility of everything else
        int worst = -1;
        double worst_v = -1e-13;
        for (std::size_t i = 0; i < kept.size(); ++i) {
            double v = row_of(kept[i]).dot(qn) - lower1[kept[i]];
            if (v < worst_v) {
                worst_v = v;
                worst = int(i);
            }
        }
        if (worst >= 0) {
            if (!extends(active, worst)) break;
            active.push_back(worst);
            continue;
        }
        Eigen::Index neg = -1;
        if (negative_multiplier(q0, qn, Eeq, A, neg)) {
            active.erase(active.begin() + neg);
            continue;
        }
        qbest = qn;
        out.polished = true;
        break;
    }
    q = qbest;

    // final projection onto the simplex
    for (int y = 0; y < ny; ++y) q(y) = std::max(q(y), 0.0);
    q /= q.sum();

    out.q0.assign(q0.data(), q0.data() + ny);
    out.q1.assign(q.data(), q.data() + ny);
    out.objective = lfp_objective(out.q0, out.q1);

    // KKT report on the final point
    std::vector<int> act_final;
    double primal = 0.0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        double v = row_of(kept[i]).dot(q) - lower1[kept[i]];
        primal = std::max(primal, -v);
        if (v < 1e-9) act_final.push_back(int(i));
    }
    for (std::size_t i = 0; i < eq_events.size(); ++i)
        primal = std::max(primal, std::abs(row_of(eq_events[i]).dot(q) - lower1[eq_events[i]]));
    Eigen::MatrixXd A = build_active(act_final);
    KktCheck kc = kkt_residual(q0, q, Eeq, A);
    out.kkt_residual = std::max(kc.residual, primal);
    for (int i : act_final) out.binding.push_back(kept[i]);
    return out;
}

}  // namespace lfs
