#include "lfscore/numcore.hpp"

#include "lfscore/error.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <map>
#include <mutex>

namespace lfs {

double normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.70710678118654752440); }

double normal_cdf_diff(double u, double v) {
    if (u > 0 && v > 0) return normal_cdf(-v) - normal_cdf(-u);
    return normal_cdf(u) - normal_cdf(v);
}

double normal_pdf(double z) { return 0.39894228040143267794 * std::exp(-0.5 * z * z); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) invalid("normal_quantile: p must lie in (0,1)");
    return -1.4142135623730950488 * boost::math::erfc_inv(2.0 * p);
}

double log_prob(double p) { return std::log(std::clamp(p, kLogFloor, 1.0 - kLogFloor)); }

QuadratureRule gauss_hermite(int order) {
    if (order < 1 || order > 128) invalid("gauss_hermite: order must be in [1,128]");
    const int n = order;
    QuadratureRule rule;
    if (n == 1) {
        rule.nodes = {0.0};
        rule.weights = {kSqrtPi};
        return rule;
    }
    // Golub-Welsch for starting values
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(0.5 * k);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    rule.nodes.resize(n);
    rule.weights.resize(n);
    // Newton polish on the orthonormal recurrence; weight = 2 / p'_n(x)^2
    const double pim4 = 0.75112554446494248286;  // pi^{-1/4}
    for (int i = 0; i < n; ++i) {
        double x = es.eigenvalues()(i);
        double pp = 0.0;
        for (int it = 0; it < 10; ++it) {
            double p1 = pim4, p2 = 0.0, p3;
            for (int j = 0; j < n; ++j) {
                p3 = p2;
                p2 = p1;
                p1 = x * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(double(j) / (j + 1)) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            double dx = p1 / pp;
            x -= dx;
            if (std::abs(dx) <= 1e-15 * std::max(1.0, std::abs(x))) break;
        }
        rule.nodes[i] = x;
        rule.weights[i] = 2.0 / (pp * pp);
    }
    // exact symmetry
    for (int i = 0; i < n / 2; ++i) {
        double x = 0.5 * (rule.nodes[n - 1 - i] - rule.nodes[i]);
        double w = 0.5 * (rule.weights[i] + rule.weights[n - 1 - i]);
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        rule.weights[i] = rule.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
    return rule;
}

const QuadratureRule& gauss_hermite_cached(int order) {
    static std::mutex mu;
    static std::map<int, QuadratureRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(order);
    if (it == cache.end()) it = cache.emplace(order, gauss_hermite(order)).first;
    return it->second;
}

// ---- Philox4x32-10 ----

namespace {

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    std::uint64_t p = std::uint64_t(a) * b;
    hi = std::uint32_t(p >> 32);
    lo = std::uint32_t(p);
}

std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> c, std::array<std::uint32_t, 2> k) {
    for (int r = 0; r < 10; ++r) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(0xD2511F53u, c[0], hi0, lo0);
        mulhilo(0xCD9E8D57u, c[2], hi1, lo1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
        k[0] += 0x9E3779B9u;
        k[1] += 0xBB67AE85u;
    }
    return c;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint32_t substream)
    : seed_(seed), stream_(stream_id), sub_(substream) {}

void RngStream::refill() {
    buf_ = philox({block_, sub_, std::uint32_t(stream_), std::uint32_t(stream_ >> 32)},
                  {std::uint32_t(seed_), std::uint32_t(seed_ >> 32)});
    ++block_;
    pos_ = 0;
}

RngStream::result_type RngStream::operator()() {
    if (pos_ >= 4) refill();
    std::uint64_t v = (std::uint64_t(buf_[pos_]) << 32) | buf_[pos_ + 1];
    pos_ += 2;
    return v;
}

double RngStream::uniform() { return double((*this)() >> 11) * 0x1.0p-53; }

double RngStream::normal() { return gauss_(*this); }

// ---- covariance helpers ----

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols()) invalid("matrix must be square");
    double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) invalid("covariance matrix is not symmetric");
    return 0.5 * (a + a.transpose());
}

Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov) {
    Eigen::MatrixXd s = symmetrized(cov);
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    Eigen::VectorXd ev = es.eigenvalues();
    double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -1e-10 * scale)
        fail(ErrorKind::Numerical, "covariance_repair", "covariance has a materially negative eigenvalue");
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal();
}

RepairedMatrix repair_covariance(const Eigen::MatrixXd& cov) {
    RepairedMatrix out;
    out.m = symmetrized(cov);
    const int d = int(out.m.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.m, Eigen::EigenvaluesOnly);
    double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    out.condition = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
    Eigen::LLT<Eigen::MatrixXd> llt(out.m);
    if (llt.info() != Eigen::Success || out.condition > 1e12) {
        double ridge = 1e-10 * out.m.trace() / d;
        if (!(ridge > 0))
            fail(ErrorKind::Numerical, "covariance_repair", "cannot repair a covariance with zero trace");
        out.m.diagonal().array() += ridge;
        out.ridge_applied = true;
        if (Eigen::LLT<Eigen::MatrixXd>(out.m).info() != Eigen::Success)
            fail(ErrorKind::Numerical, "covariance_repair", "covariance not positive definite after ridge repair");
    }
    return out;
}

Eigen::MatrixXd sample_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int n_draws, RngStream& rng) {
    const int d = int(mean.size());
    if (cov.rows() != d) invalid("sample_mvn: dimension mismatch");
    if (n_draws < 0) invalid("sample_mvn: negative draw count");
    Eigen::MatrixXd L = psd_factor(cov);
    Eigen::MatrixXd out(n_draws, d);
    Eigen::VectorXd z(d);
    for (int i = 0; i < n_draws; ++i) {
        for (int j = 0; j < d; ++j) z(j) = rng.normal();
        out.row(i) = (mean + L * z).transpose();
    }
    return out;
}

}  // namespace lfs
