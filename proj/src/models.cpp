#include "lfscore/models.hpp"

#include "lfscore/error.hpp"
#include "lfscore/numcore.hpp"

#include <sstream>

namespace lfs {

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::Game2x2: return "game2x2";
        case ModelKind::Triangular: return "triangular";
        case ModelKind::Panel2: return "panel2";
    }
    return "?";
}

ModelKind parse_model_kind(const std::string& s) {
    if (s == "game2x2" || s == "game") return ModelKind::Game2x2;
    if (s == "triangular") return ModelKind::Triangular;
    if (s == "panel2" || s == "panel") return ModelKind::Panel2;
    invalid("unknown model '" + s + "' (expected game2x2, triangular or panel2)");
}

int ModelSpec::d_beta() const { return kind == ModelKind::Game2x2 ? 2 : 1; }

int ModelSpec::d_delta() const {
    int c = intercept ? 1 : 0;
    switch (kind) {
        case ModelKind::Game2x2: return k1 + k2 + 2 * c;
        case ModelKind::Triangular: return 1 + k1 + k2 + 2 * c;
        case ModelKind::Panel2: return k1 + c + 1;
    }
    return 0;
}

int ModelSpec::x_dim() const {
    switch (kind) {
        case ModelKind::Game2x2: return k1 + k2;
        case ModelKind::Triangular: return 1 + k1 + k2;
        case ModelKind::Panel2: return 2 * k1;
    }
    return 0;
}

std::vector<std::string> ModelSpec::outcome_labels() const {
    if (kind == ModelKind::Triangular) return {"0", "1"};
    return {"00", "01", "10", "11"};
}

std::vector<std::string> ModelSpec::delta_names() const {
    std::vector<std::string> out;
    auto block = [&](const std::string& p, int k) {
        if (intercept) out.push_back(p + "_const");
        for (int j = 1; j <= k; ++j) out.push_back(p + "_" + std::to_string(j));
    };
    switch (kind) {
        case ModelKind::Game2x2:
            block("delta1", k1);
            block("delta2", k2);
            break;
        case ModelKind::Triangular:
            out.push_back("alpha");
            block("eta", k1);
            block("gamma", k2);
            break;
        case ModelKind::Panel2:
            block("eta", k1);
            out.push_back("gamma_re");
            break;
    }
    return out;
}

void ModelSpec::validate() const {
    if (k1 < 0 || k2 < 0) invalid("covariate counts must be nonnegative");
    if (kind == ModelKind::Panel2 && quad_order < 8) invalid("panel2 needs quadrature order >= 8");
    if (quad_order < 1 || quad_order > 128) invalid("quadrature order must be in [1,128]");
}

std::string event_label(const ModelSpec& spec, Event a) {
    auto labels = spec.outcome_labels();
    std::ostringstream os;
    os << "{";
    bool first = true;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (a >> i & 1u) {
            os << (first ? "" : ",") << labels[i];
            first = false;
        }
    os << "}";
    return os.str();
}

// ---- index helpers ----

Eigen::VectorXd game_regressors(const ModelSpec& spec, const Eigen::VectorXd& x, int player) {
    int k = player == 0 ? spec.k1 : spec.k2;
    int off = player == 0 ? 0 : spec.k1;
    int c = spec.intercept ? 1 : 0;
    Eigen::VectorXd r(k + c);
    if (c) r(0) = 1.0;
    r.tail(k) = x.segment(off, k);
    return r;
}

double game_index(const ModelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& delta, int player) {
    int c = spec.intercept ? 1 : 0;
    int k = player == 0 ? spec.k1 : spec.k2;
    int xoff = player == 0 ? 0 : spec.k1;
    int doff = player == 0 ? 0 : spec.k1 + c;
    double s = c ? delta(doff) : 0.0;
    for (int j = 0; j < k; ++j) s += x(xoff + j) * delta(doff + c + j);
    return s;
}

TriangularParts triangular_parts(const ModelSpec& spec, const Eigen::VectorXd& x) {
    int c = spec.intercept ? 1 : 0;
    TriangularParts p;
    p.d = x(0);
    p.w.resize(spec.k1 + c);
    p.z.resize(spec.k2 + c);
    if (c) p.w(0) = p.z(0) = 1.0;
    p.w.tail(spec.k1) = x.segment(1, spec.k1);
    p.z.tail(spec.k2) = x.segment(1 + spec.k1, spec.k2);
    return p;
}

Eigen::VectorXd panel_regressors(const ModelSpec& spec, const Eigen::VectorXd& x, int period) {
    int c = spec.intercept ? 1 : 0;
    Eigen::VectorXd r(spec.k1 + c);
    if (c) r(0) = 1.0;
    r.tail(spec.k1) = x.segment(period * spec.k1, spec.k1);
    return r;
}

namespace {

void check_dims(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta) {
    if (x.size() != spec.x_dim()) invalid("covariate vector has wrong dimension for " + to_string(spec.kind));
    if (theta.beta.size() != spec.d_beta() || theta.delta.size() != spec.d_delta())
        invalid("theta has wrong dimension for " + to_string(spec.kind));
}

struct TriIdx {
    double d, outcome;  // alpha*d + w'eta
    double zg;          // z'gamma
};

TriIdx tri_index(const ModelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& delta) {
    auto p = triangular_parts(spec, x);
    int kw = int(p.w.size()), kz = int(p.z.size());
    TriIdx t;
    t.d = p.d;
    t.outcome = delta(0) * p.d + p.w.dot(delta.segment(1, kw));
    t.zg = p.z.dot(delta.segment(1 + kw, kz));
    return t;
}

}  // namespace

void check_sign_region(const ModelSpec& spec, const Theta& theta) {
    for (int j = 0; j < theta.beta.size(); ++j) {
        double b = theta.beta(j);
        if (!std::isfinite(b)) invalid("beta must be finite");
        if (spec.kind == ModelKind::Game2x2 && b > 0) invalid("game2x2 requires beta <= 0 componentwise");
        if (spec.kind != ModelKind::Game2x2 && b < 0) invalid(to_string(spec.kind) + " requires beta >= 0");
    }
}

std::vector<Focal> focal_masses(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta) {
    check_dims(spec, x, theta);
    check_sign_region(spec, theta);
    std::vector<Focal> out;
    switch (spec.kind) {
        case ModelKind::Game2x2: {
            double i1 = game_index(spec, x, theta.delta, 0), i2 = game_index(spec, x, theta.delta, 1);
            double b1 = theta.beta(0), b2 = theta.beta(1);
            double a = normal_cdf(i1), ab = normal_cdf(i1 + b1), na = normal_cdf(-i1);
            double b = normal_cdf(i2), bb = normal_cdf(i2 + b2), nb = normal_cdf(-i2);
            double nbb = normal_cdf(-i2 - b2);
            double m1 = a - ab, m2 = b - bb;  // middle bands
            out.push_back({1u << 0, na * nb});
            out.push_back({1u << 1, na * b + m1 * bb});
            out.push_back({1u << 2, ab * nbb + m1 * nb});
            out.push_back({1u << 3, ab * bb});
            if (m1 > 0 && m2 > 0) out.push_back({(1u << 1) | (1u << 2), m1 * m2});
            break;
        }
        case ModelKind::Triangular: {
            auto t = tri_index(spec, x, theta.delta);
            double beta = theta.beta(0);
            if (t.d != 0.0 && t.d != 1.0) invalid("triangular: d must be 0 or 1");
            if (beta == 0.0) {
                double p0 = normal_cdf(-t.outcome);
                out.push_back({1u, p0});
                out.push_back({2u, normal_cdf(t.outcome)});
            } else if (t.d == 0.0) {
                double p0 = normal_cdf(-t.outcome + beta * t.zg);
                out.push_back({1u, p0});
                out.push_back({3u, normal_cdf(t.outcome - beta * t.zg)});
            } else {
                double p01 = normal_cdf(-t.outcome + beta * t.zg);
                out.push_back({2u, normal_cdf(t.outcome - beta * t.zg)});
                out.push_back({3u, p01});
            }
            break;
        }
        case ModelKind::Panel2: {
            spec.validate();
            const auto& rule = gauss_hermite_cached(spec.quad_order);
            int kk = spec.k1 + (spec.intercept ? 1 : 0);
            Eigen::VectorXd eta = theta.delta.head(kk);
            double gam = theta.delta(kk), beta = theta.beta(0);
            double i1 = panel_regressors(spec, x, 0).dot(eta), i2 = panel_regressors(spec, x, 1).dot(eta);
            std::array<double, 7> acc{};
            constexpr double s2 = 1.4142135623730950488;
            for (std::size_t n = 0; n < rule.nodes.size(); ++n) {
                double a = s2 * rule.nodes[n], w = rule.weights[n] / kSqrtPi;
                double F1 = normal_cdf(i1 + gam * a), F2 = normal_cdf(i2 + gam * a);
                double nF1b = normal_cdf(-i1 - beta - gam * a), nF2 = normal_cdf(-i2 - gam * a);
                double F2b = normal_cdf(i2 + beta + gam * a), nF2b = normal_cdf(-i2 - beta - gam * a);
                double band = normal_cdf_diff(i1 + beta + gam * a, i1 + gam * a);
                acc[0] += w * nF1b * nF2;
                acc[1] += w * nF1b * F2;
                acc[2] += w * F1 * nF2b;
                acc[3] += w * F1 * F2b;
                acc[4] += w * band * nF2b;
                acc[5] += w * band * normal_cdf_diff(i2 + beta + gam * a, i2 + gam * a);
                acc[6] += w * band * F2;
            }
            out.push_back({1u << 0, acc[0]});
            out.push_back({1u << 1, acc[1]});
            out.push_back({1u << 2, acc[2]});
            out.push_back({1u << 3, acc[3]});
            if (beta > 0) {
                out.push_back({(1u << 0) | (1u << 2), acc[4]});
                out.push_back({(1u << 0) | (1u << 3), acc[5]});
                out.push_back({(1u << 1) | (1u << 3), acc[6]});
            }
            break;
        }
    }
    return out;
}

Event predicted_set(const ModelSpec& spec, const Eigen::VectorXd& u, const Eigen::VectorXd& x, const Theta& theta) {
    check_dims(spec, x, theta);
    check_sign_region(spec, theta);
    switch (spec.kind) {
        case ModelKind::Game2x2: {
            if (u.size() != 2) invalid("game2x2 needs a 2-dimensional u");
            double i1 = game_index(spec, x, theta.delta, 0), i2 = game_index(spec, x, theta.delta, 1);
            Event g = 0;
            for (int y1 = 0; y1 < 2; ++y1)
                for (int y2 = 0; y2 < 2; ++y2) {
                    bool br1 = (i1 + theta.beta(0) * y2 + u(0) >= 0) == (y1 == 1);
                    bool br2 = (i2 + theta.beta(1) * y1 + u(1) >= 0) == (y2 == 1);
                    if (br1 && br2) g |= 1u << (2 * y1 + y2);
                }
            return g;
        }
        case ModelKind::Triangular: {
            if (u.size() != 1) invalid("triangular needs a scalar u");
            auto t = tri_index(spec, x, theta.delta);
            double beta = theta.beta(0);
            if (beta == 0.0) return t.outcome + u(0) >= 0 ? 2u : 1u;
            if (t.d == 0.0) return u(0) > -t.outcome + beta * t.zg ? 3u : 1u;
            return u(0) < -t.outcome + beta * t.zg ? 3u : 2u;
        }
        case ModelKind::Panel2: {
            if (u.size() != 2) invalid("panel2 needs a 2-dimensional u");
            int kk = spec.k1 + (spec.intercept ? 1 : 0);
            Eigen::VectorXd eta = theta.delta.head(kk);
            double i1 = panel_regressors(spec, x, 0).dot(eta), i2 = panel_regressors(spec, x, 1).dot(eta);
            Event g = 0;
            for (int y0 = 0; y0 < 2; ++y0) {
                int y1 = i1 + theta.beta(0) * y0 + u(0) >= 0;
                int y2 = i2 + theta.beta(0) * y1 + u(1) >= 0;
                g |= 1u << (2 * y1 + y2);
            }
            return g;
        }
    }
    return 0;
}

namespace {

double containment_from(const std::vector<Focal>& m, Event a, Event full) {
    if (a == full) return 1.0;
    if (a == 0) return 0.0;
    CompensatedSum s;
    for (const auto& f : m)
        if ((f.set & ~a) == 0) s.add(f.mass);
    return s.value();
}

}  // namespace

double containment(const ModelSpec& spec, Event a, const Eigen::VectorXd& x, const Theta& theta) {
    Event full = (1u << spec.n_outcomes()) - 1;
    if (a > full) invalid("event outside the outcome space");
    return containment_from(focal_masses(spec, x, theta), a, full);
}

double capacity(const ModelSpec& spec, Event a, const Eigen::VectorXd& x, const Theta& theta) {
    Event full = (1u << spec.n_outcomes()) - 1;
    if (a > full) invalid("event outside the outcome space");
    return 1.0 - containment(spec, full & ~a, x, theta);
}

BoundsRow bounds_row(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta) {
    auto m = focal_masses(spec, x, theta);
    int ne = spec.n_events();
    Event full = Event(ne - 1);
    BoundsRow r;
    r.lower.resize(ne);
    r.upper.resize(ne);
    for (int a = 0; a < ne; ++a) r.lower[a] = containment_from(m, Event(a), full);
    for (int a = 0; a < ne; ++a) r.upper[a] = 1.0 - r.lower[full & ~Event(a)];
    return r;
}

BoundsTable bounds_table(const ModelSpec& spec, const std::vector<CovariateCell>& cells, const Theta& theta) {
    BoundsTable t;
    t.rows.reserve(cells.size());
    for (const auto& c : cells) t.rows.push_back(bounds_row(spec, c.x, theta));
    return t;
}

}  // namespace lfs
