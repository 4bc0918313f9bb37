#pragma once

#include "lfscore/estimation.hpp"
#include "lfscore/testing.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lfs {

enum class CovariateLaw { Rademacher, Normal };
std::string to_string(CovariateLaw c);
CovariateLaw parse_covariate_law(const std::string& s);

struct SelectionMechanism {
    enum class Kind { BernoulliPick, LeastFavorable } kind = Kind::BernoulliPick;
    // BernoulliPick: when G has two or more elements, take the last one (in outcome-index
    // order) with probability p, otherwise the first.  For the game that is (1,0) vs (0,1).
    double p = 0.5;

    std::string str() const;
    static SelectionMechanism parse(const std::string& s);  // "bernoulli", "bernoulli:0.3", "lfp"
};

struct DgpSpec {
    ModelSpec model;
    Theta theta_true;
    long n = 0;
    CovariateLaw covariates = CovariateLaw::Rademacher;
    SelectionMechanism selection;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
};

// Covariates are drawn iid from the law; for triangular the treatment comes from the selection
// probit d = 1{z'gamma + v >= 0}.  Rows use substream 0 of (seed, stream).
Dataset simulate_dgp(const DgpSpec& spec);

struct McOptions {
    ModelSpec model;
    Eigen::VectorXd delta;  // default: (2, 1.5) for the game
    std::vector<long> n_values;
    std::vector<double> h_values;
    SelectionMechanism selection;
    CovariateLaw covariates = CovariateLaw::Rademacher;
    std::optional<ConeSpec> cone;
    long reps = 1000;
    double alpha = 0.05;
    long draws = 100000;
    std::uint64_t seed = 0;
    int threads = 0;
};

struct McRow {
    long n = 0;
    double h = 0.0;
    std::string design;
    long reps = 0;
    long failures = 0;
    double rejection_rate = 0.0;
    double binomial_se = 0.0;
};

struct McResult {
    std::vector<McRow> rows;
    double seconds = 0.0;  // wall clock, not written to the CSV
};

// beta = -(h/sqrt n) for every coordinate, sign flipped for models whose alternative is beta >= 0.
// Rep r of grid point g simulates with seed mix(seed, g) and stream r, and draws its critical
// value from the same stream.
McResult mc_size_power(const McOptions& opt);

void write_mc_csv(std::ostream& os, const McResult& r);

// ---- ingestion ----

struct ColumnMap {
    std::vector<std::string> y;  // two columns (y1, y2) for pair models, one for triangular
    std::vector<std::string> x;  // in the model's flat x order
};

// Named layouts: "airline", "catholic", or "generic" (prefix matching on the header:
// y1,y2,x1_*,x2_* for game2x2 / panel2 and y,d,w_*,z_* for triangular).
// Sets k1/k2 (and the intercept flag for the named layouts) on spec.
ColumnMap layout_columns(const std::string& layout, const std::vector<std::string>& header, ModelSpec& spec);

std::vector<std::string> csv_split(const std::string& line);
std::vector<std::string> csv_header(const std::string& path);

// Rows with a missing mapped value (empty, NA, NaN, ".") are dropped and counted.
Dataset ingest_csv(const std::string& path, const ModelSpec& spec, const ColumnMap& map);

void write_dataset_csv(std::ostream& os, const Dataset& d);

// lfp over a covariate list and a beta grid: one row per (beta, x)
void write_density_csv(std::ostream& os, const ModelSpec& spec, const std::vector<Eigen::VectorXd>& betas,
                       const Eigen::VectorXd& delta, const std::vector<Eigen::VectorXd>& xs);

// shortest round-trip representation, used by every writer
std::string fmt_double(double v);

}  // namespace lfs
