#include "lfscore/scores.hpp"

#include "lfscore/error.hpp"
#include "lfscore/lfp.hpp"
#include "lfscore/numcore.hpp"

#include <cmath>

namespace lfs {

namespace {

void require_null(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta0, int y) {
    if (theta0.beta.size() != spec.d_beta() || theta0.delta.size() != spec.d_delta() || x.size() != spec.x_dim())
        invalid("score: dimension mismatch");
    if (theta0.beta.cwiseAbs().maxCoeff() != 0.0) invalid("closed-form scores are evaluated at beta = 0");
    if (y < 0 || y >= spec.n_outcomes()) invalid("score: outcome index out of range");
}

// d/di ln P(y | i) for a probit with index i
double probit_gen_residual(int y, double i) {
    double f = normal_pdf(i);
    return y ? f / normal_cdf(i) : -f / normal_cdf(-i);
}

}  // namespace

double log_lfp(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta) {
    double q = lfp(spec, x, theta).q[y];
    if (!(q >= 1e-12))
        fail(ErrorKind::Numerical, "degenerate_support",
             "least favorable density below 1e-12 at outcome " + spec.outcome_labels()[y]);
    return std::log(q);
}

ScoreRecord score_game(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta0) {
    if (spec.kind != ModelKind::Game2x2) invalid("score_game needs a game2x2 spec");
    require_null(spec, x, theta0, y);
    const int y1 = y >> 1, y2 = y & 1;
    double i1 = game_index(spec, x, theta0.delta, 0), i2 = game_index(spec, x, theta0.delta, 1);
    double f1 = normal_pdf(i1), f2 = normal_pdf(i2);
    ScoreRecord r;
    r.s_beta = Eigen::VectorXd::Zero(2);
    if (y1 && y2) {
        r.s_beta << f1 / normal_cdf(i1), f2 / normal_cdf(i2);
    } else if (y1) {
        r.s_beta(1) = -f2 / normal_cdf(-i2);
    } else if (y2) {
        r.s_beta(0) = -f1 / normal_cdf(-i1);
    }
    Eigen::VectorXd r1 = game_regressors(spec, x, 0), r2 = game_regressors(spec, x, 1);
    r.s_delta.resize(r1.size() + r2.size());
    r.s_delta << r1 * probit_gen_residual(y1, i1), r2 * probit_gen_residual(y2, i2);
    return r;
}

ScoreRecord score_triangular(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta0) {
    if (spec.kind != ModelKind::Triangular) invalid("score_triangular needs a triangular spec");
    require_null(spec, x, theta0, y);
    auto p = triangular_parts(spec, x);
    int kw = int(p.w.size()), kz = int(p.z.size());
    double o = theta0.delta(0) * p.d + p.w.dot(theta0.delta.segment(1, kw));
    double zg = p.z.dot(theta0.delta.segment(1 + kw, kz));
    ScoreRecord r;
    r.s_beta = Eigen::VectorXd::Zero(1);
    // q(1) = Phi(o - beta * c) with c = max(zg,0) when d=0 and min(zg,0) when d=1
    double c = p.d == 0.0 ? std::max(zg, 0.0) : std::min(zg, 0.0);
    if (c != 0.0) r.s_beta(0) = -c * probit_gen_residual(y, o);
    double e = probit_gen_residual(y, o);
    r.s_delta.resize(1 + kw + kz);
    r.s_delta(0) = p.d * e;
    r.s_delta.segment(1, kw) = p.w * e;
    r.s_delta.tail(kz) = p.z * probit_gen_residual(int(p.d), zg);
    return r;
}

double directional_derivative(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta0,
                              const Eigen::VectorXd& zeta, double tau) {
    const int db = spec.d_beta();
    if (zeta.size() != db + spec.d_delta()) invalid("direction has wrong dimension");
    double base = log_lfp(spec, y, x, theta0);
    auto quotient = [&](double t) {
        Theta th = theta0;
        th.beta += t * zeta.head(db);
        th.delta += t * zeta.tail(spec.d_delta());
        return (log_lfp(spec, y, x, th) - base) / t;
    };
    // three-level Richardson table over tau, tau/2, tau/4
    return (8.0 * quotient(0.25 * tau) - 6.0 * quotient(0.5 * tau) + quotient(tau)) / 3.0;
}

ScoreRecord score_fd(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta0, double tau) {
    const int db = spec.d_beta(), dd = spec.d_delta();
    const double sign = spec.kind == ModelKind::Game2x2 ? -1.0 : 1.0;
    ScoreRecord r;
    r.s_beta.resize(db);
    r.s_delta.resize(dd);
    Eigen::VectorXd zeta = Eigen::VectorXd::Zero(db + dd);
    for (int j = 0; j < db + dd; ++j) {
        double s = j < db ? sign : 1.0;
        zeta(j) = s;
        double v = s * directional_derivative(spec, y, x, theta0, zeta, tau);
        zeta(j) = 0.0;
        if (j < db)
            r.s_beta(j) = v;
        else
            r.s_delta(j - db) = v;
    }
    return r;
}

ScoreRecord score(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta0) {
    switch (spec.kind) {
        case ModelKind::Game2x2: return score_game(spec, y, x, theta0);
        case ModelKind::Triangular: return score_triangular(spec, y, x, theta0);
        case ModelKind::Panel2: return score_fd(spec, y, x, theta0);
    }
    invalid("unknown model");
}

}  // namespace lfs
