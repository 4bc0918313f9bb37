#include <doctest.h>

#include "lfscore/error.hpp"
#include "lfscore/estimation.hpp"
#include "lfscore/lfp.hpp"
#include "lfscore/numcore.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

using namespace lfs;

namespace {

double probit_inverse(double p) { return boost::math::quantile(boost::math::normal(), p); }

// draws y from the complete-model density given x rows
Dataset simulate_null(const ModelSpec& spec, const Eigen::VectorXd& delta, const Eigen::MatrixXd& x, RngStream& rng) {
    Dataset d;
    d.spec = spec;
    d.x = x;
    Theta t{Eigen::VectorXd::Zero(spec.d_beta()), delta};
    for (long i = 0; i < x.rows(); ++i) {
        auto q = lfp(spec, x.row(i).transpose(), t);
        double u = rng.uniform(), c = 0;
        int y = 0;
        for (; y < q.n - 1; ++y) {
            c += q.q[y];
            if (u < c) break;
        }
        d.y.push_back(y);
    }
    return d;
}

Eigen::MatrixXd rademacher(long n, int k, RngStream& rng) {
    Eigen::MatrixXd x(n, k);
    for (long i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) x(i, j) = rng.bernoulli(0.5) ? 1.0 : -1.0;
    return x;
}

Dataset game_data(long n, const Eigen::VectorXd& delta, std::uint64_t seed) {
    RngStream rng(seed, 0);
    ModelSpec spec{ModelKind::Game2x2, 1, 1, false};
    return simulate_null(spec, delta, rademacher(n, 2, rng), rng);
}

}  // namespace

TEST_CASE("saturated one-cell game recovers the probit inverse") {
    const long n = 40000, n1 = 39090, n2 = 37328;
    Dataset d;
    d.spec = ModelSpec{ModelKind::Game2x2, 1, 1, false};
    d.x = Eigen::MatrixXd::Ones(n, 2);
    // the two equations are fitted separately, so how the marginals pair up is irrelevant
    for (long i = 0; i < n; ++i) d.y.push_back(2 * int(i < n1) + int(i >= n - n2));
    auto r = rmle(d, Eigen::VectorXd::Zero(2));
    CHECK(r.converged);
    CHECK(std::abs(r.delta_hat(0) - probit_inverse(double(n1) / n)) < 1e-6);
    CHECK(std::abs(r.delta_hat(1) - probit_inverse(double(n2) / n)) < 1e-6);
    CHECK(std::abs(r.delta_hat(0) - 2.0) < 1e-3);
    CHECK(r.gradient_norm <= 1e-8 * std::max(1.0, std::abs(r.loglik)));
    // loglik equals the closed form at the saturated fit
    double p1 = double(n1) / n, p2 = double(n2) / n;
    double ll = n1 * std::log(p1) + (n - n1) * std::log(1 - p1) + n2 * std::log(p2) + (n - n2) * std::log(1 - p2);
    CHECK(std::abs(r.loglik - ll) < 1e-6 * std::abs(ll));
}

TEST_CASE("rmle is invariant to row order and duplication") {
    auto d = game_data(3000, Eigen::Vector2d(0.4, -0.3), 5);
    auto r = rmle(d, Eigen::VectorXd::Zero(2));
    REQUIRE(r.converged);

    Dataset shuffled = d;
    std::vector<long> perm(d.n());
    for (long i = 0; i < d.n(); ++i) perm[i] = i;
    RngStream rng(1, 0);
    for (long i = d.n() - 1; i > 0; --i) std::swap(perm[i], perm[long(rng.uniform() * (i + 1))]);
    for (long i = 0; i < d.n(); ++i) {
        shuffled.y[i] = d.y[perm[i]];
        shuffled.x.row(i) = d.x.row(perm[i]);
    }
    auto rs = rmle(shuffled, Eigen::VectorXd::Zero(2));
    CHECK((rs.delta_hat - r.delta_hat).cwiseAbs().maxCoeff() == 0.0);
    CHECK(rs.loglik == r.loglik);

    Dataset twice = d;
    twice.x.conservativeResize(2 * d.n(), Eigen::NoChange);
    twice.x.bottomRows(d.n()) = d.x;
    twice.y.insert(twice.y.end(), d.y.begin(), d.y.end());
    auto r2 = rmle(twice, Eigen::VectorXd::Zero(2));
    CHECK((r2.delta_hat - r.delta_hat).cwiseAbs().maxCoeff() < 1e-12);

    auto v1 = variance_hat(d, Eigen::VectorXd::Zero(2), r.delta_hat);
    auto v2 = variance_hat(twice, Eigen::VectorXd::Zero(2), r.delta_hat);
    CHECK((v1.V - v2.V).cwiseAbs().maxCoeff() == 0.0);
    auto v3 = variance_hat(shuffled, Eigen::VectorXd::Zero(2), r.delta_hat);
    CHECK((v1.V - v3.V).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("V_hat approaches the population outer product") {
    Eigen::Vector2d delta(0.6, 0.2);
    auto d = game_data(100000, delta, 11);
    auto r = rmle(d, Eigen::VectorXd::Zero(2));
    REQUIRE(r.converged);
    auto v = variance_hat(d, Eigen::VectorXd::Zero(2), r.delta_hat);
    // exact enumeration over the four Rademacher cells and four outcomes
    ModelSpec spec = d.spec;
    Theta t{Eigen::VectorXd::Zero(2), delta};
    Eigen::Matrix2d pop = Eigen::Matrix2d::Zero();
    for (double a : {-1.0, 1.0})
        for (double b : {-1.0, 1.0}) {
            Eigen::Vector2d x(a, b);
            auto q = lfp(spec, x, t);
            for (int y = 0; y < 4; ++y) {
                Eigen::VectorXd s = score(spec, y, x, t).s_beta;
                pop += 0.25 * q.q[y] * s * s.transpose();
            }
        }
    CHECK((v.V - pop).cwiseAbs().maxCoeff() < 2e-2);
    CHECK(v.warnings.empty());
}

TEST_CASE("constant zero score gives a zero V_hat with a warning") {
    // triangular, d = 0 everywhere and z'gamma < 0: the beta score vanishes
    Dataset d;
    d.spec = ModelSpec{ModelKind::Triangular, 1, 1, false};
    d.x.resize(10, 3);
    for (int i = 0; i < 10; ++i) {
        d.x.row(i) << 0.0, 0.1 * i, 1.0 + i;
        d.y.push_back(i % 2);
    }
    Eigen::Vector3d delta(0.3, 0.5, -1.0);
    auto v = variance_hat(d, Eigen::VectorXd::Zero(1), delta);
    CHECK(v.V.cwiseAbs().maxCoeff() == 0.0);
    CHECK(!v.warnings.empty());
}

TEST_CASE("rank-deficient design is refused") {
    auto d = game_data(500, Eigen::Vector2d(0.4, -0.3), 5);
    d.x.col(1).setZero();
    try {
        rmle(d, Eigen::VectorXd::Zero(2));
        FAIL("expected a singular-design error");
    } catch (const Error& e) {
        CHECK(e.code() == "singular_design");
    }
}

TEST_CASE("beta0 must be the completeness point") {
    auto d = game_data(200, Eigen::Vector2d(0.4, -0.3), 5);
    CHECK_THROWS_AS(rmle(d, Eigen::Vector2d(-0.1, 0.0)), Error);
    CHECK_THROWS_AS(rmle(d, Eigen::VectorXd::Zero(1)), Error);
}

TEST_CASE("iteration cap reports non-convergence") {
    auto d = game_data(2000, Eigen::Vector2d(1.5, -0.8), 5);
    RmleOptions o;
    o.max_iter = 1;
    auto r = rmle(d, Eigen::VectorXd::Zero(2), o);
    CHECK(!r.converged);
    CHECK(r.iterations == 1);
}

TEST_CASE("triangular rmle recovers both equations") {
    ModelSpec spec{ModelKind::Triangular, 1, 1, false};
    Eigen::Vector3d delta(0.6, -0.4, 1.2);
    RngStream rng(31, 0);
    const long n = 20000;
    Eigen::MatrixXd x(n, 3);
    for (long i = 0; i < n; ++i) {
        double w = rng.normal(), z = rng.normal();
        double d = (z * delta(2) + rng.normal() >= 0) ? 1.0 : 0.0;
        x.row(i) << d, w, z;
    }
    auto data = simulate_null(spec, delta, x, rng);
    auto r = rmle(data, Eigen::VectorXd::Zero(1));
    REQUIRE(r.converged);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(r.delta_hat(j) - delta(j)) < 4 * r.se()(j));
    CHECK(std::abs(r.loglik - null_loglik(data, r.delta_hat)) < 1e-6 * std::abs(r.loglik));
}

TEST_CASE("panel rmle recovers eta and the random-effect scale") {
    ModelSpec spec{ModelKind::Panel2, 1, 0, true};
    Eigen::Vector3d delta(-0.2, 0.7, 0.8);
    RngStream rng(32, 0);
    const long n = 4000;
    Eigen::MatrixXd x(n, 2);
    for (long i = 0; i < n; ++i) x.row(i) << rng.normal(), rng.normal();
    auto data = simulate_null(spec, delta, x, rng);
    auto r = rmle(data, Eigen::VectorXd::Zero(1));
    REQUIRE(r.converged);
    CHECK(r.delta_hat(2) >= 0.0);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(r.delta_hat(j) - delta(j)) < 4 * r.se()(j));
    CHECK(std::abs(r.loglik - null_loglik(data, r.delta_hat)) < 1e-8 * std::abs(r.loglik));
}

TEST_CASE("consistency across simulated null datasets") {
    Eigen::Vector2d delta(2.0, 1.5);
    double err = 0, se = 0;
    const int reps = 200;
    for (int rep = 0; rep < reps; ++rep) {
        auto d = game_data(5000, delta, 1000 + rep);
        auto r = rmle(d, Eigen::VectorXd::Zero(2));
        REQUIRE(r.converged);
        err += (r.delta_hat - delta).norm();
        se += std::sqrt(r.vcov.trace());
    }
    CHECK(err / reps <= 3 * se / reps);
}

TEST_CASE("separated outcome is reported instead of a diverging fit") {
    auto d = game_data(400, Eigen::Vector2d(0.4, -0.3), 6);
    for (long i = 0; i < d.n(); ++i) d.y[i] = 2 * int(d.x(i, 0) > 0) + (d.y[i] & 1);
    try {
        rmle(d, Eigen::VectorXd::Zero(2));
        FAIL("expected a separation error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Numerical);
        CHECK(e.code() == "separation");
    }
}
