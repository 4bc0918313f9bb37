#pragma once

#include <Eigen/Dense>

#include <array>
#include <string>
#include <vector>

namespace lfs {

enum class ModelKind { Game2x2, Triangular, Panel2 };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

// Flat covariate layout per observation (intercepts are not stored, the flag prepends them):
//   game2x2    x = [x1 (k1), x2 (k2)]        delta = [delta1, delta2]
//   triangular x = [d, w (k1), z (k2)]       delta = [alpha, eta, gamma]
//   panel2     x = [x_t1 (k1), x_t2 (k1)]    delta = [eta, gamma_re]
// Outcomes are indexed 0..|Y|-1; pairs (y1,y2) map to 2*y1+y2.
struct ModelSpec {
    ModelKind kind = ModelKind::Game2x2;
    int k1 = 1;
    int k2 = 1;
    bool intercept = false;
    int quad_order = 32;  // panel only

    int d_beta() const;
    int d_delta() const;
    int n_outcomes() const { return kind == ModelKind::Triangular ? 2 : 4; }
    int n_events() const { return 1 << n_outcomes(); }
    int x_dim() const;
    std::vector<std::string> outcome_labels() const;
    std::vector<std::string> delta_names() const;
    void validate() const;
};

struct Theta {
    Eigen::VectorXd beta;
    Eigen::VectorXd delta;
};

// events are bitmasks over outcome indices
using Event = unsigned;

std::string event_label(const ModelSpec& spec, Event a);

struct Focal {
    Event set;
    double mass;
};

// Mobius masses of the random set G(U|x; theta): probability of each predicted set.
std::vector<Focal> focal_masses(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta);

Event predicted_set(const ModelSpec& spec, const Eigen::VectorXd& u, const Eigen::VectorXd& x, const Theta& theta);

double containment(const ModelSpec& spec, Event a, const Eigen::VectorXd& x, const Theta& theta);
double capacity(const ModelSpec& spec, Event a, const Eigen::VectorXd& x, const Theta& theta);

// lower/upper over all 2^|Y| events, indexed by the event mask
struct BoundsRow {
    std::vector<double> lower;
    std::vector<double> upper;
};

struct CovariateCell {
    Eigen::VectorXd x;
    long count = 1;
};

struct BoundsTable {
    std::vector<BoundsRow> rows;
};

BoundsRow bounds_row(const ModelSpec& spec, const Eigen::VectorXd& x, const Theta& theta);
BoundsTable bounds_table(const ModelSpec& spec, const std::vector<CovariateCell>& cells, const Theta& theta);

// ---- index helpers shared by lfp / scores / estimation ----

// game: x_j' delta_j for player j in {0,1}
double game_index(const ModelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& delta, int player);
// regressor vector (with intercept if enabled) for game player j
Eigen::VectorXd game_regressors(const ModelSpec& spec, const Eigen::VectorXd& x, int player);

struct TriangularParts {
    double d;
    Eigen::VectorXd w;  // with intercept if enabled
    Eigen::VectorXd z;  // with intercept if enabled
};
TriangularParts triangular_parts(const ModelSpec& spec, const Eigen::VectorXd& x);

// panel: period-t regressors (with intercept if enabled)
Eigen::VectorXd panel_regressors(const ModelSpec& spec, const Eigen::VectorXd& x, int period);

// validate beta lies in the admissible sign region
void check_sign_region(const ModelSpec& spec, const Theta& theta);

}  // namespace lfs
