#pragma once

#include "msde/basis.hpp"
#include "msde/core.hpp"
#include "msde/regression.hpp"
#include "msde/simulate.hpp"

#include "json.hpp"

namespace msde {

// A drift in span(library): evaluates coefficients^T * phi(point).
struct DriftEstimate {
    BasisLibrary library;
    Matrix coefficients;  // n_total x output_dim
    std::size_t output_dim = 0;
    Regularization regularization;

    Vector operator()(const Vector &point) const;

    nlohmann::json to_json() const;
    static DriftEstimate from_json(const nlohmann::json &j);
};

Vector evaluate_drift(const DriftEstimate &est, const Vector &point);

// Rows of the returned matrix are feature(z) for every stored state.
Matrix feature_cloud(const TrajectoryEnsemble &ensemble, const FeatureMap &feature);

// Library over the inferred box of the ensemble's features.
BasisLibrary library_for(const TrajectoryEnsemble &ensemble, const FeatureMap &feature, const BasisConfig &config);

// Minimizes sum_{m,l} |f~(xi_f(z_l)) - dx_l/dt_l|^2 dt_l.
DriftEstimate fit_f(const TrajectoryEnsemble &ensemble, const FeatureMap &feature_f, const BasisLibrary &lib,
                    const Regularization &reg = {}, std::size_t threads = 0);

// Minimizes the discretized quadratic loss
//   1/2 sum_{m,l} [ <g~, W^-1 g~> dt_l - 2 <g~, W^-1 dy_l> ]
// with W = weight (an estimate of Sigma_y, or the identity).
DriftEstimate fit_g(const TrajectoryEnsemble &ensemble, const FeatureMap &feature_g, const BasisLibrary &lib,
                    const Matrix &weight, const Regularization &reg = {}, std::size_t threads = 0);

// Discretized losses at an arbitrary estimate, normalized by M and T.
double drift_f_loss(const TrajectoryEnsemble &ensemble, const FeatureMap &feature_f, const DriftEstimate &est);
double drift_g_loss(const TrajectoryEnsemble &ensemble, const FeatureMap &feature_g, const DriftEstimate &est,
                    const Matrix &weight);

// Normal equations behind fit_f / fit_g (identity weight); exposed so callers
// can check residual orthogonality.
NormalEquations drift_normal_equations(const TrajectoryEnsemble &ensemble, const FeatureMap &feature,
                                       const BasisLibrary &lib, bool y_block, std::size_t threads = 0);

}  // namespace msde
