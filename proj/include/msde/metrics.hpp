#pragma once

#include "msde/core.hpp"
#include "msde/simulate.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace msde {

// Empirical occupation measure: every stored state (m, l) with weight 1/(M L).
struct OccupationMeasure {
    Matrix points;   // one state per row
    Vector weights;  // sums to 1

    static OccupationMeasure from_ensemble(const TrajectoryEnsemble &ensemble);
};

struct L2RhoError {
    double absolute = 0.0;
    double relative = 0.0;
    // False when the reference drift vanishes on every sample; relative is then 0.
    bool relative_defined = true;
};

// sqrt(sum_i w_i |h(z_i) - h_hat(z_i)|^2), and that divided by the L2(rho) norm of h.
L2RhoError l2_rho_error(const VectorFn &true_h, const VectorFn &est_h, const OccupationMeasure &rho);

struct TrajectoryError {
    double mean = 0.0;  // relative, the reported default
    double std = 0.0;
    std::vector<double> per_trajectory;
    double absolute_mean = 0.0;  // time-averaged squared distance, ensemble mean
    double absolute_std = 0.0;
};

// Per trajectory e_m = [sum_l |z_l - z^_l|^2 dt / sum_l |z_l|^2 dt]^(1/2).
TrajectoryError trajectory_error(const TrajectoryEnsemble &reference, const TrajectoryEnsemble &replayed);

struct Assignment {
    std::vector<std::size_t> column_for_row;
    double cost = 0.0;
};

// Minimum-cost perfect matching on a square cost matrix (Hungarian method with
// potentials, O(n^3)).
Assignment solve_assignment(const Matrix &cost);

struct WassersteinOptions {
    std::size_t exact_max = 2000;        // largest M solved exactly
    double epsilon_factor = 1e-3;        // entropic scale relative to the median cost
    std::size_t max_iterations = 5000;   // Sinkhorn iterations per annealing stage
    double tolerance = 1e-9;             // marginal violation stopping rule
};

struct WassersteinResult {
    double distance = 0.0;
    bool approximate = false;
};

// W2 between the uniform empirical measures on the rows of a and b. Exact by
// assignment for M <= exact_max; otherwise the debiased Sinkhorn divergence
// S = OT_e(a,b) - (OT_e(a,a) + OT_e(b,b))/2, reported as sqrt(max(S, 0)).
WassersteinResult wasserstein2(const Matrix &a, const Matrix &b, const WassersteinOptions &options = {});

// Debiased entropic estimate, exposed for testing against the exact solver.
double sinkhorn_w2(const Matrix &a, const Matrix &b, const WassersteinOptions &options = {});

struct WassersteinPoint {
    double time = 0.0;
    double distance = 0.0;
    bool approximate = false;
};

std::vector<WassersteinPoint> wasserstein_curve(const TrajectoryEnsemble &reference,
                                                const TrajectoryEnsemble &comparison,
                                                const std::vector<double> &snapshot_times,
                                                const WassersteinOptions &options = {});

struct MetricReport {
    L2RhoError l2_rho;
    TrajectoryError trajectory;
    std::vector<WassersteinPoint> wasserstein;
    std::string coupling_note;

    nlohmann::json to_json() const;
    // Header and row in the layout of a drift-estimation summary table.
    std::string csv_header() const;
    std::string csv_row(int precision = 4) const;
};

}  // namespace msde
