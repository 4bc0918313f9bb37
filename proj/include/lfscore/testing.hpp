#pragma once

#include "lfscore/estimation.hpp"
#include "lfscore/numcore.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lfs {

enum class ConeConstraint { NonPositive, NonNegative, Free };

struct ConeSpec {
    std::vector<ConeConstraint> c;

    int dim() const { return int(c.size()); }
    std::string str() const;
    // "nonpos", "nonneg", "free" (one value for every coordinate, or a comma list)
    static ConeSpec parse(const std::string& s, int dim);
    static ConeSpec all(ConeConstraint k, int dim) { return ConeSpec{std::vector<ConeConstraint>(dim, k)}; }
    // the local alternative cone of a model: beta <= 0 for the game, beta >= 0 otherwise
    static ConeSpec for_model(const ModelSpec& spec);
};

struct Projection {
    Eigen::VectorXd h_star;
    double qform_min = 0.0;
};

// min over the closed cone of (z-h)' V^-1 (z-h), by enumerating which constrained coordinates sit at 0
Projection cone_project(const Eigen::VectorXd& z, const Eigen::MatrixXd& V, const ConeSpec& cone);

struct Statistic {
    double S_hat = 0.0;
    double T_hat = 0.0;
};

Statistic s_statistic(const Eigen::VectorXd& g, const Eigen::MatrixXd& V, const ConeSpec& cone);

// S computed for Z ~ N(0, V).  Draws come in fixed blocks, block b from substream 1+b of
// (seed, stream), so the vector does not depend on the thread count.
std::vector<double> simulate_statistics(const Eigen::MatrixXd& V, const ConeSpec& cone, long n_draws,
                                        const RngStream& rng, int threads = 0);

// empirical (1-alpha) quantile: the k-th smallest draw with k = ceil((1-alpha) n)
double quantile_upper(std::vector<double> draws, double alpha);

double critical_value(const Eigen::MatrixXd& V, const ConeSpec& cone, double alpha, long n_draws,
                      const RngStream& rng, int threads = 0);

// (1 + #{draws >= S}) / (1 + n)
double p_value(double S_hat, const std::vector<double>& draws);

enum class HybridBranch { RobustCIRequired, WaldCI };
std::string to_string(HybridBranch b);

struct WaldInterval {
    std::string name;
    double estimate, lower, upper;
};

struct HybridDecision {
    HybridBranch branch = HybridBranch::WaldCI;
    double kappa = 1.0;
    double c_n = 0.0;
    std::vector<WaldInterval> wald_ci;  // filled in the WaldCI branch only
};

// kappa_n = (ln n)^-1/2, c_n = min(kappa_n, 1) c_alpha; robust CIs are needed when S_hat > c_n
HybridDecision hybrid_decide(double S_hat, double c_alpha, double n);
HybridDecision hybrid_decide(double S_hat, double c_alpha, double n, double alpha, const Eigen::VectorXd& delta_hat,
                             const Eigen::VectorXd& se, const std::vector<std::string>& names);

// n^-1/2 sum_i s_beta(y_i|x_i; beta0, delta_hat)
Eigen::VectorXd score_vector_gn(const Dataset& data, const Eigen::VectorXd& beta0, const Eigen::VectorXd& delta_hat);

enum class Decision { Reject, FailToReject };

struct TestOptions {
    std::optional<ConeSpec> cone;  // default: ConeSpec::for_model
    double alpha = 0.05;
    long draws = 100000;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;  // critical-value draws use substreams 1.. of (seed, stream)
    int threads = 0;
    RmleOptions rmle;
};

struct TestReport {
    std::string model;
    long n = 0;
    long dropped = 0;
    Eigen::VectorXd beta0;
    std::string cone;
    Eigen::VectorXd g_n;
    Eigen::MatrixXd V_hat;
    double S_hat = 0.0, T_hat = 0.0, c_alpha = 0.0, p_value = 1.0, alpha = 0.05;
    Decision decision = Decision::FailToReject;
    HybridDecision hybrid;
    Eigen::VectorXd delta_hat, se;
    std::vector<std::string> delta_names;
    double loglik = 0.0;
    bool converged = false;
    long draws = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

// rmle -> g_n -> V_hat -> S_hat -> c_alpha -> p-value -> hybrid branch
TestReport run_test(const Dataset& data, const Eigen::VectorXd& beta0, const TestOptions& opt);

// stable JSON; config is echoed verbatim as (key, value) string pairs
std::string report_json(const TestReport& r, const std::vector<std::pair<std::string, std::string>>& config = {});

}  // namespace lfs
