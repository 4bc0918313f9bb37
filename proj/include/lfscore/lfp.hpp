#pragma once

#include "lfscore/models.hpp"

#include <array>
#include <vector>

namespace lfs {

// Theta1: interior / mixed solution, Theta2: lower bound on q(1,0) binds, Theta3: upper bound binds.
// panel2 reuses the labels for its three KKT branches (see lfp_panel).
enum class RegionLabel { Theta1, Theta2, Theta3 };

std::string to_string(RegionLabel r);

struct DensityRow {
    std::array<double, 4> q{};  // first n_outcomes entries are used
    int n = 4;
    RegionLabel region = RegionLabel::Theta1;
};

RegionLabel classify_region(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta);

DensityRow lfp_game(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta);
DensityRow lfp_triangular(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta);
// Three branches on the (1,0) cell after the forced allocations q(0,1)=q0(0,1), q(1,1)=nu({(1,1)}):
//   Theta2  q(0,0), q(1,0) proportional to their null values (interior)
//   Theta1  q(1,0) at its upper bound
//   Theta3  q(1,0) at its lower bound
DensityRow lfp_panel(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta);

// analytic least favorable density for any model
DensityRow lfp(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta);

// q at beta = 0 (the complete null model)
DensityRow null_density(const ModelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& delta);

struct GenericLfp {
    std::vector<double> q0;
    std::vector<double> q1;
    double objective = 0.0;
    double kkt_residual = 0.0;
    std::vector<Event> binding;  // inequality events active at the solution
    bool polished = false;
};

// Solves min sum_y (q0+q1) ln((q0+q1)/q0) over q0 in core(lower0), q1 in core(lower1).
// Rows are indexed by event mask over |Y| = log2(size) outcomes; lower0 must pin q0 down.
GenericLfp lfp_generic(const std::vector<double>& lower0, const std::vector<double>& lower1);

double lfp_objective(const std::vector<double>& q0, const std::vector<double>& q1);

}  // namespace lfs
