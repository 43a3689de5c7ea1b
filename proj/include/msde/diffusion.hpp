#pragma once

#include "msde/basis.hpp"
#include "msde/core.hpp"
#include "msde/drift.hpp"
#include "msde/regression.hpp"
#include "msde/simulate.hpp"

#include "json.hpp"

#include <optional>

namespace msde {

struct QuadraticVariationRecord {
    std::vector<Matrix> per_trajectory_Q;  // M matrices, D_y x D_y
    double horizon = 0.0;

    Matrix mean() const;
};

// Optional drift removed from each increment before it enters the quadratic
// variation: dy_l - drift(z_l) dt_l. Takes the full state, returns D_y values.
using DriftCompensation = std::function<Vector(const Vector &)>;

// Q^(m) = sum_l dy_l dy_l^T over the y-block.
QuadraticVariationRecord empirical_qv(const TrajectoryEnsemble &ensemble, const DriftCompensation &compensation = {});

enum class DiffusionClass { constant_matrix, diagonal_state_dependent };

std::string to_string(DiffusionClass c);
DiffusionClass diffusion_class_from_string(const std::string &name);

struct DiffusionEstimate {
    DiffusionClass model_class = DiffusionClass::constant_matrix;
    // Constant class: the estimate itself. Diagonal class: the data average of
    // the fitted variance field, kept for display and as the fit_g weight.
    Matrix Sigma_hat;
    Matrix sigma_hat;
    // Diagonal class only: one variance output per y-coordinate over a y-basis.
    std::optional<DriftEstimate> variance_field;
    bool degenerate = false;

    // sigma_y(y); for the diagonal class, per-entry square roots of the
    // clipped variance field.
    Matrix sigma_at(const Vector &y) const;

    // Per-coordinate sigma values for reports (sqrt of the diagonal of Sigma_hat).
    Vector sigma_diagonal() const;

    nlohmann::json to_json() const;
    static DiffusionEstimate from_json(const nlohmann::json &j);
};

// Sigma_hat = sym(mean_m Q^(m)) / T with eigenvalues clipped at zero.
DiffusionEstimate fit_sigma_constant(const QuadraticVariationRecord &qv);

// Regresses the per-step local quadratic variation diag(dy dy^T)/dt on `lib`
// (defined over the y-block) and clips negative variances to zero.
DiffusionEstimate fit_sigma_state_dependent(const TrajectoryEnsemble &ensemble, const BasisLibrary &lib,
                                            const Regularization &reg = {},
                                            const DriftCompensation &compensation = {}, std::size_t threads = 0);

// Symmetric PSD square root U sqrt(D) U^T.
Matrix matrix_sqrt_psd(const Matrix &sigma);

// SPD weight for fit_g built from an estimate, eigenvalues floored at `floor`.
Matrix fit_g_weight(const DiffusionEstimate &est, double floor = 1e-12);

}  // namespace msde
