#pragma once

#include "lfscore/models.hpp"
#include "lfscore/scores.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace lfs {

// y holds outcome indices (2*y1+y2 for pairs, y for triangular); x rows follow the model layout
struct Dataset {
    ModelSpec spec;
    std::vector<int> y;
    Eigen::MatrixXd x;
    long dropped = 0;  // rows removed at ingestion

    long n() const { return long(y.size()); }
    void validate() const;
};

// distinct (y, x) rows with multiplicities, sorted so every sum is evaluated in a fixed order
struct DataCell {
    int y;
    Eigen::VectorXd x;
    long count;
};
std::vector<DataCell> collapse(const Dataset& data);

struct MleResult {
    Eigen::VectorXd delta_hat;
    double loglik = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    Eigen::MatrixXd vcov;
    std::vector<std::string> warnings;

    Eigen::VectorXd se() const { return vcov.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

struct RmleOptions {
    int max_iter = 500;
    bool multistart = false;  // 5 extra N(0,1) starts, best log-likelihood wins
    std::uint64_t seed = 0;
};

// maximizes sum_i ln q_{beta0,delta}(y_i|x_i).  beta0 must be the completeness point 0.
MleResult rmle(const Dataset& data, const Eigen::VectorXd& beta0, const RmleOptions& opt = {});

// total log-likelihood of the null model at delta (clamped logs)
double null_loglik(const Dataset& data, const Eigen::VectorXd& delta);

struct VarianceEstimate {
    Eigen::MatrixXd V;  // n^-1 sum s_beta s_beta', before any repair
    double condition = 1.0;
    std::vector<std::string> warnings;
};

VarianceEstimate variance_hat(const Dataset& data, const Eigen::VectorXd& beta0, const Eigen::VectorXd& delta_hat);

// per-cell s_beta at (beta0, delta_hat), aligned with collapse(data)
std::vector<Eigen::VectorXd> cell_beta_scores(const std::vector<DataCell>& cells, const ModelSpec& spec,
                                              const Theta& theta0);

}  // namespace lfs
