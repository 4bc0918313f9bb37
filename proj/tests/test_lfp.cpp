#include <doctest.h>

#include "lfscore/error.hpp"
#include "lfscore/lfp.hpp"
#include "lfscore/numcore.hpp"

#include <cmath>

using namespace lfs;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd x(v.size());
    int i = 0;
    for (double e : v) x(i++) = e;
    return x;
}

Theta theta(Eigen::VectorXd b, Eigen::VectorXd d) { return Theta{std::move(b), std::move(d)}; }

ModelSpec game_spec() { return ModelSpec{ModelKind::Game2x2, 1, 1, false}; }
ModelSpec tri_spec() { return ModelSpec{ModelKind::Triangular, 1, 1, false}; }
ModelSpec panel_spec() { return ModelSpec{ModelKind::Panel2, 1, 0, false}; }

GenericLfp generic_for(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& th) {
    Theta t0 = th;
    t0.beta.setZero();
    return lfp_generic(bounds_row(spec, x, t0).lower, bounds_row(spec, x, th).lower);
}

double max_diff(const DensityRow& r, const std::vector<double>& q) {
    double m = 0;
    for (int y = 0; y < r.n; ++y) m = std::max(m, std::abs(r.q[y] - q[y]));
    return m;
}

struct Point {
    Eigen::VectorXd x;
    Theta th;
};

Point random_point(const ModelSpec& spec, RngStream& rng) {
    switch (spec.kind) {
        case ModelKind::Game2x2:
            return {vec({rng.normal(), rng.normal()}),
                    theta(vec({-2.5 * rng.uniform(), -2.5 * rng.uniform()}), vec({rng.normal(), rng.normal()}))};
        case ModelKind::Triangular:
            return {vec({double(rng.uniform() < 0.5), rng.normal(), rng.normal()}),
                    theta(vec({2.0 * rng.uniform()}), vec({rng.normal(), rng.normal(), rng.normal()}))};
        case ModelKind::Panel2:
            return {vec({rng.normal(), rng.normal()}),
                    theta(vec({2.0 * rng.uniform()}), vec({rng.normal(), 1.5 * rng.uniform()}))};
    }
    return {};
}

}  // namespace

TEST_CASE("game lfp at beta = 0 is the product probit") {
    auto spec = game_spec();
    auto x = vec({0.7, -0.2});
    auto r = lfp_game(spec, x, theta(vec({0, 0}), vec({1.1, 0.4})));
    double a = normal_cdf(0.77), b = normal_cdf(-0.08);
    CHECK(std::abs(r.q[3] - a * b) < 1e-15);
    CHECK(std::abs(r.q[0] - (1 - a) * (1 - b)) < 1e-15);
    CHECK(std::abs(r.q[2] - a * (1 - b)) < 1e-15);
    CHECK(std::abs(r.q[1] - (1 - a) * b) < 1e-15);
    CHECK(r.region == RegionLabel::Theta1);
}

TEST_CASE("game Theta2 branch formula") {
    auto spec = game_spec();
    auto x = vec({1, 1});
    // player 1 barely affected, player 2 strongly affected
    auto th = theta(vec({-0.01, -3.0}), vec({0.2, 0.5}));
    auto r = lfp_game(spec, x, th);
    REQUIRE(r.region == RegionLabel::Theta2);
    double a = normal_cdf(0.2), ab = normal_cdf(0.19), b = normal_cdf(0.5), bb = normal_cdf(-2.5);
    CHECK(std::abs(r.q[2] - (a * (1 - b) + ab * (b - bb))) < 1e-15);
    double s = 0;
    for (int y = 0; y < 4; ++y) s += r.q[y];
    CHECK(std::abs(s - 1) < 1e-12);
}

TEST_CASE("game Theta3 branch") {
    auto r = lfp_game(game_spec(), vec({1, 1}), theta(vec({-3.0, -0.01}), vec({0.5, 0.2})));
    CHECK(r.region == RegionLabel::Theta3);
}

TEST_CASE("triangular lfp examples") {
    auto spec = tri_spec();
    // beta = 0: probit in alpha d + w eta
    auto r0 = lfp_triangular(spec, vec({1, 0.5, 0.3}), theta(vec({0}), vec({0.4, -0.6, 1.0})));
    CHECK(std::abs(r0.q[1] - normal_cdf(0.4 - 0.3)) < 1e-15);
    // d = 0, z gamma > 0
    auto r1 = lfp_triangular(spec, vec({0, 0.5, 0.3}), theta(vec({0.7}), vec({0.4, -0.6, 1.0})));
    CHECK(std::abs(r1.q[0] - normal_cdf(0.3 + 0.7 * 0.3)) < 1e-15);
    // d = 0, z gamma <= 0 keeps the probit
    auto r2 = lfp_triangular(spec, vec({0, 0.5, -0.3}), theta(vec({0.7}), vec({0.4, -0.6, 1.0})));
    CHECK(std::abs(r2.q[0] - normal_cdf(0.3)) < 1e-15);
}

TEST_CASE("panel lfp examples") {
    auto spec = panel_spec();
    auto x = vec({0.3, -0.5});
    auto r = lfp_panel(spec, x, theta(vec({0}), vec({0.8, 0})));
    double p1 = normal_cdf(0.24), p2 = normal_cdf(-0.4);
    CHECK(std::abs(r.q[3] - p1 * p2) < 1e-13);
    CHECK(std::abs(r.q[0] - (1 - p1) * (1 - p2)) < 1e-13);

    // beta = 0 with a random effect: the integrals of the complete model
    auto rule = gauss_hermite(32);
    auto r2 = lfp_panel(spec, x, theta(vec({0}), vec({0.8, 0.9})));
    double q11 = expect_normal(rule, [](double a) { return normal_cdf(0.24 + 0.9 * a) * normal_cdf(-0.4 + 0.9 * a); });
    CHECK(std::abs(r2.q[3] - q11) < 1e-13);

    ModelSpec low = spec;
    low.quad_order = 6;
    CHECK_THROWS_AS(lfp_panel(low, x, theta(vec({0.1}), vec({0.8, 0.9}))), Error);
}

TEST_CASE("panel Theta2 density against the proportional formula") {
    auto spec = panel_spec();
    auto x = vec({0.3, -0.5});
    auto th = theta(vec({0.4}), vec({0.8, 0.9}));
    auto r = lfp_panel(spec, x, th);
    REQUIRE(r.region == RegionLabel::Theta2);
    auto rule = gauss_hermite(32);
    auto F = [](double i) { return [i](double a) { return normal_cdf(i + 0.9 * a); }; };
    double n00 = expect_normal(rule, [&](double a) { return (1 - F(0.24)(a)) * (1 - F(-0.4)(a)); });
    double n1m2 = expect_normal(rule, [&](double a) { return 1 - F(-0.4)(a); });
    double k = n1m2 - expect_normal(rule, [&](double a) { return F(0.24)(a) * (F(0.0)(a) - F(-0.4)(a)); });
    CHECK(std::abs(r.q[0] - n00 / n1m2 * k) < 1e-13);
    auto g = generic_for(spec, x, th);
    CHECK(max_diff(r, g.q1) < 1e-6);
}

TEST_CASE("generic solver: complete model returns q1 = q0") {
    auto spec = game_spec();
    auto x = vec({0.4, 0.9});
    auto t0 = theta(vec({0, 0}), vec({0.3, -0.2}));
    auto lower = bounds_row(spec, x, t0).lower;
    auto g = lfp_generic(lower, lower);
    for (int y = 0; y < 4; ++y) CHECK(std::abs(g.q1[y] - g.q0[y]) < 1e-12);
    CHECK(std::abs(g.objective - 2 * std::log(2.0)) < 1e-12);
}

TEST_CASE("generic solver reproduces the interior omega") {
    auto spec = game_spec();
    auto x = vec({1, 1});
    auto th = theta(vec({-0.3, -0.3}), vec({0.2, 0.1}));
    REQUIRE(classify_region(spec, x, th) == RegionLabel::Theta1);
    auto g = generic_for(spec, x, th);
    double a = normal_cdf(0.2), b = normal_cdf(0.1);
    double ab = normal_cdf(-0.1), bb = normal_cdf(-0.2);
    double z1 = a * (1 - b), z2 = 1 - (1 - a) * (1 - b) - ab * bb;
    double omega = (z1 * z2) / (b + a - 2 * a * b);
    CHECK(std::abs(g.q1[2] - omega) < 1e-9);
    CHECK(g.kkt_residual <= 1e-10);
}

TEST_CASE("generic solver beats random feasible points") {
    RngStream rng(21, 0);
    for (auto spec : {game_spec(), panel_spec()}) {
        for (int rep = 0; rep < 5; ++rep) {
            auto p = random_point(spec, rng);
            auto g = generic_for(spec, p.x, p.th);
            auto foc = focal_masses(spec, p.x, p.th);
            for (int k = 0; k < 1000; ++k) {
                // spread each focal mass over its elements with random weights: a point of the core
                std::vector<double> q(4, 0.0);
                for (const auto& f : foc) {
                    std::vector<double> w;
                    double tot = 0;
                    for (int y = 0; y < 4; ++y)
                        if (f.set >> y & 1u) {
                            w.push_back(-std::log(1 - rng.uniform()));
                            tot += w.back();
                        }
                    int j = 0;
                    for (int y = 0; y < 4; ++y)
                        if (f.set >> y & 1u) q[y] += f.mass * w[j++] / tot;
                }
                CHECK(lfp_objective(g.q0, q) >= g.objective - 1e-12);
            }
        }
    }
}

TEST_CASE("generic solver reports infeasible events") {
    std::vector<double> lower0 = {0, 0.4, 0.6, 1};
    std::vector<double> bad = {0, 0.7, 0.6, 1};
    try {
        lfp_generic(lower0, bad);
        FAIL("expected an infeasibility error");
    } catch (const Error& e) {
        CHECK(e.code() == "infeasible");
        CHECK(std::string(e.what()).find("{") != std::string::npos);
    }
}

TEST_CASE("analytic lfp agrees with the generic solver on 1000 points per model") {
    RngStream rng(2024, 0);
    for (auto spec : {game_spec(), tri_spec(), panel_spec()}) {
        double tol = spec.kind == ModelKind::Panel2 ? 1e-6 : 1e-7;
        double worst = 0, worst_kkt = 0;
        for (int i = 0; i < 1000; ++i) {
            auto p = random_point(spec, rng);
            auto r = lfp(spec, p.x, p.th);
            auto g = generic_for(spec, p.x, p.th);
            worst = std::max(worst, max_diff(r, g.q1));
            worst_kkt = std::max(worst_kkt, g.kkt_residual);
            // feasibility of the analytic density
            auto low = bounds_row(spec, p.x, p.th).lower;
            for (unsigned a = 0; a < low.size(); ++a) {
                double s = 0;
                for (int y = 0; y < r.n; ++y)
                    if (a >> y & 1u) s += r.q[y];
                CHECK(s >= low[a] - 1e-8);
            }
        }
        INFO(to_string(spec.kind));
        CHECK(worst <= tol);
        CHECK(worst_kkt <= 1e-10);
    }
}

TEST_CASE("game regions are exclusive and match the binding constraints") {
    auto spec = game_spec();
    RngStream rng(7, 0);
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < 1000; ++i) {
        auto p = random_point(spec, rng);
        auto label = classify_region(spec, p.x, p.th);
        counts[int(label)]++;
        auto r = lfp_game(spec, p.x, p.th);
        auto low = bounds_row(spec, p.x, p.th);
        double slack_lo = r.q[2] - low.lower[0b0100];
        double slack_hi = low.upper[0b0100] - r.q[2];
        switch (label) {
            case RegionLabel::Theta1:
                CHECK(slack_lo >= -1e-15);
                CHECK(slack_hi >= -1e-15);
                break;
            case RegionLabel::Theta2: CHECK(std::abs(slack_lo) < 1e-14); break;
            case RegionLabel::Theta3: CHECK(std::abs(slack_hi) < 1e-14); break;
        }
        // the generic solver's active set agrees away from the boundaries
        if (label != RegionLabel::Theta1 && std::min(slack_lo, slack_hi) == 0.0) {
            auto g = generic_for(spec, p.x, p.th);
            Event expect = label == RegionLabel::Theta2 ? 0b0100u : 0b1011u;
            bool found = false;
            for (Event e : g.binding) found = found || e == expect;
            double gap = std::abs(g.q1[2] - (label == RegionLabel::Theta2 ? low.lower[0b0100] : low.upper[0b0100]));
            CHECK((found || gap < 1e-9));
        }
    }
    CHECK(counts[0] > 0);
    CHECK(counts[1] > 0);
    CHECK(counts[2] > 0);
}

TEST_CASE("lfp is continuous at the null") {
    RngStream rng(3, 0);
    for (auto spec : {game_spec(), tri_spec(), panel_spec()}) {
        for (int i = 0; i < 20; ++i) {
            auto p = random_point(spec, rng);
            Theta t0 = p.th;
            t0.beta.setZero();
            auto base = lfp(spec, p.x, t0);
            Eigen::VectorXd h = p.th.beta / std::max(p.th.beta.cwiseAbs().maxCoeff(), 1e-3);
            double prev_ratio = -1;
            for (double t : {1e-2, 1e-3, 1e-4}) {
                Theta tt = t0;
                tt.beta = t * h;
                auto r = lfp(spec, p.x, tt);
                double d = 0;
                for (int y = 0; y < r.n; ++y) d = std::max(d, std::abs(r.q[y] - base.q[y]));
                double ratio = d / t;
                CHECK(ratio < 10.0);
                if (prev_ratio > 1e-6) CHECK(std::abs(ratio - prev_ratio) < 0.1 * prev_ratio + 1e-3);
                prev_ratio = ratio;
            }
        }
    }
}
