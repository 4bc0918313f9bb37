#pragma once

#include "lfscore/models.hpp"

namespace lfs {

struct ScoreRecord {
    Eigen::VectorXd s_beta;
    Eigen::VectorXd s_delta;
};

// log of the least favorable density at (y, x); degenerate-support error below 1e-12
double log_lfp(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta);

// closed forms at beta = 0
ScoreRecord score_game(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta0);
// s_delta = (alpha, eta) from the outcome probit, gamma from the selection probit of d on z
ScoreRecord score_triangular(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta0);

// one-sided difference quotient D(t) of ln q along zeta = (zeta_beta, zeta_delta), Richardson
// extrapolated over t in {tau, tau/2, tau/4} so the truncation error is O(tau^3)
double directional_derivative(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta0,
                              const Eigen::VectorXd& zeta, double tau = 1e-4);

// coordinatewise finite-difference score.  beta coordinates are probed along the admissible
// direction (-e_j for the game, +e_j otherwise) and the sign is folded back in.
ScoreRecord score_fd(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta0,
                     double tau = 1e-4);

// closed form where available, finite differences for panel2
ScoreRecord score(const ModelSpec& spec, int y, const Eigen::VectorXd& x, const Theta& theta0);

}  // namespace lfs
