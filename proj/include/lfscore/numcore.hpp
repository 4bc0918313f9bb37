#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace lfs {

constexpr double kSqrtPi = 1.7724538509055160273;
constexpr double kLogFloor = 1e-12;

double normal_cdf(double z);
// Phi(u) - Phi(v), taken on the upper tails when both are positive so nothing cancels
double normal_cdf_diff(double u, double v);
double normal_pdf(double z);
double normal_quantile(double p);

// log of a probability, clamped to [1e-12, 1-1e-12] first
double log_prob(double p);

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// physicists' Gauss-Hermite rule, weight exp(-t^2)
QuadratureRule gauss_hermite(int order);
// memoized copy, safe to call from several threads
const QuadratureRule& gauss_hermite_cached(int order);

// E[f(a)] for a ~ N(0,1) via a Gauss-Hermite rule
template <class F>
double expect_normal(const QuadratureRule& rule, F&& f) {
    constexpr double s2 = 1.4142135623730950488;
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) acc += rule.weights[i] * f(s2 * rule.nodes[i]);
    return acc / kSqrtPi;
}

// Neumaier compensated sum
class CompensatedSum {
public:
    void add(double x) {
        double t = s_ + x;
        if (std::abs(s_) >= std::abs(x))
            c_ += (s_ - t) + x;
        else
            c_ += (x - t) + s_;
        s_ = t;
    }
    double value() const { return s_ + c_; }

private:
    double s_ = 0.0, c_ = 0.0;
};

// Philox4x32-10 counter-based generator.  key = seed, counter = (stream_id, substream, block).
class RngStream {
public:
    using result_type = std::uint64_t;

    RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0, std::uint32_t substream = 0);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()();

    double uniform();  // [0,1)
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }
    std::uint32_t substream_id() const { return sub_; }
    RngStream substream(std::uint32_t k) const { return RngStream(seed_, stream_, k); }

private:
    void refill();

    std::uint64_t seed_, stream_;
    std::uint32_t sub_;
    std::uint32_t block_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    int pos_ = 4;
    std::normal_distribution<double> gauss_;
};

// symmetrize; error if asymmetric beyond tolerance
Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a);

// L with L L' = cov.  Cholesky when possible, otherwise eigen-decomposition with small
// negative eigenvalues (>= -1e-10 * scale) clipped to zero.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov);

struct RepairedMatrix {
    Eigen::MatrixXd m;
    bool ridge_applied = false;
    double condition = 1.0;
};

// symmetrize, then add 1e-10*trace/dim to the diagonal if Cholesky fails
RepairedMatrix repair_covariance(const Eigen::MatrixXd& cov);

Eigen::MatrixXd sample_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int n_draws,
                           RngStream& rng);

}  // namespace lfs
