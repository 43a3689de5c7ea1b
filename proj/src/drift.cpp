#include "msde/drift.hpp"

#include <cmath>

namespace msde {

namespace {

void check_feature(const FeatureMap &feature, const BasisLibrary &lib) {
    if (feature.dim != lib.dims_in()) {
        throw ContractViolation("drift fit: feature dimension differs from the basis library input dimension");
    }
}

// Cholesky factor L with W^-1 = L L^T, after checking W is SPD.
Matrix inverse_weight_factor(const Matrix &weight, std::size_t dy) {
    const auto n = static_cast<Eigen::Index>(dy);
    if (weight.rows() != n || weight.cols() != n) throw ContractViolation("fit_g: weight must be D_y x D_y");
    if ((weight - weight.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, weight.cwiseAbs().maxCoeff())) {
        throw ContractViolation("fit_g: weight matrix is not symmetric");
    }
    Eigen::LLT<Matrix> llt(weight);
    if (llt.info() != Eigen::Success) throw NumericalError("fit_g: weight matrix is not positive definite");
    const Matrix inv = llt.solve(Matrix::Identity(n, n));
    Eigen::LLT<Matrix> inv_llt(0.5 * (inv + inv.transpose()));
    if (inv_llt.info() != Eigen::Success) throw NumericalError("fit_g: weight matrix is not positive definite");
    return inv_llt.matrixL();
}

}  // namespace

Vector DriftEstimate::operator()(const Vector &point) const {
    std::vector<BasisEntry> phi;
    library.eval_sparse({point.data(), static_cast<std::size_t>(point.size())}, phi);
    Vector out = Vector::Zero(static_cast<Eigen::Index>(output_dim));
    for (const auto &e : phi) out += e.value * coefficients.row(static_cast<Eigen::Index>(e.index)).transpose();
    return out;
}

Vector evaluate_drift(const DriftEstimate &est, const Vector &point) { return est(point); }

nlohmann::json DriftEstimate::to_json() const {
    const auto box = library.box();
    nlohmann::json coef = nlohmann::json::array();
    for (Eigen::Index i = 0; i < coefficients.rows(); ++i) {
        std::vector<double> row;
        for (Eigen::Index k = 0; k < coefficients.cols(); ++k) row.push_back(coefficients(i, k));
        coef.push_back(row);
    }
    return {{"basis", library.to_json()},
            {"box", {{"lower", box.lower}, {"upper", box.upper}}},
            {"output_dim", output_dim},
            {"coefficients", coef},
            {"regularization", regularization.to_json()}};
}

DriftEstimate DriftEstimate::from_json(const nlohmann::json &j) {
    DriftEstimate est;
    est.library = BasisLibrary::from_json(j.at("basis"));
    est.output_dim = j.at("output_dim").get<std::size_t>();
    const auto &rows = j.at("coefficients");
    if (rows.size() != est.library.size()) throw ContractViolation("drift estimate: coefficient rows != basis size");
    est.coefficients.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(est.output_dim));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto row = rows[i].get<std::vector<double>>();
        if (row.size() != est.output_dim) throw ContractViolation("drift estimate: ragged coefficient array");
        for (std::size_t k = 0; k < row.size(); ++k) {
            est.coefficients(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
        }
    }
    est.regularization = Regularization::from_json(j.at("regularization"));
    return est;
}

Matrix feature_cloud(const TrajectoryEnsemble &ensemble, const FeatureMap &feature) {
    Matrix cloud(static_cast<Eigen::Index>(ensemble.M * ensemble.L), static_cast<Eigen::Index>(feature.dim));
    for (std::size_t m = 0; m < ensemble.M; ++m) {
        for (std::size_t l = 0; l < ensemble.L; ++l) {
            cloud.row(static_cast<Eigen::Index>(m * ensemble.L + l)) = feature(ensemble.state_vector(m, l)).transpose();
        }
    }
    return cloud;
}

BasisLibrary library_for(const TrajectoryEnsemble &ensemble, const FeatureMap &feature, const BasisConfig &config) {
    return build_library(config, infer_box(feature_cloud(ensemble, feature), config.padding_fraction));
}

NormalEquations drift_normal_equations(const TrajectoryEnsemble &ensemble, const FeatureMap &feature,
                                       const BasisLibrary &lib, bool y_block, std::size_t threads) {
    check_feature(feature, lib);
    if (ensemble.L < 2) throw ContractViolation("drift fit: need at least two time points");
    const std::size_t offset = y_block ? ensemble.dims.x : 0;
    const std::size_t width = y_block ? ensemble.dims.y : ensemble.dims.x;

    return accumulate_ordered(lib.size(), width, ensemble.M, threads, [&](std::size_t m, NormalEquations &acc) {
        std::vector<BasisEntry> phi;
        std::vector<double> target(width);
        for (std::size_t l = 0; l + 1 < ensemble.L; ++l) {
            const double dt = ensemble.step(l);
            const auto now = ensemble.state(m, l);
            const auto next = ensemble.state(m, l + 1);
            for (std::size_t k = 0; k < width; ++k) target[k] = (next[offset + k] - now[offset + k]) / dt;
            const Vector xi = feature(ensemble.state_vector(m, l));
            lib.eval_sparse({xi.data(), static_cast<std::size_t>(xi.size())}, phi);
            acc.add(phi, target, dt);
        }
    });
}

DriftEstimate fit_f(const TrajectoryEnsemble &ensemble, const FeatureMap &feature_f, const BasisLibrary &lib,
                    const Regularization &reg, std::size_t threads) {
    const auto ne = drift_normal_equations(ensemble, feature_f, lib, false, threads);
    return DriftEstimate{lib, ne.solve(reg), ensemble.dims.x, reg};
}

DriftEstimate fit_g(const TrajectoryEnsemble &ensemble, const FeatureMap &feature_g, const BasisLibrary &lib,
                    const Matrix &weight, const Regularization &reg, std::size_t threads) {
    const Matrix factor = inverse_weight_factor(weight, ensemble.dims.y);
    const auto ne = drift_normal_equations(ensemble, feature_g, lib, true, threads);
    // With L L^T = W^-1 the loss is |(Phi C - Y) L|^2, an ordinary least-squares
    // problem in C L with targets Y L.
    const Matrix coef_white = ne.with_outputs_mixed(factor).solve(reg);
    const Matrix coef = factor.transpose().triangularView<Eigen::Upper>().solve(coef_white.transpose()).transpose();
    return DriftEstimate{lib, coef, ensemble.dims.y, reg};
}

double drift_f_loss(const TrajectoryEnsemble &ensemble, const FeatureMap &feature_f, const DriftEstimate &est) {
    double total = 0.0;
    for (std::size_t m = 0; m < ensemble.M; ++m) {
        for (std::size_t l = 0; l + 1 < ensemble.L; ++l) {
            const double dt = ensemble.step(l);
            const Vector z = ensemble.state_vector(m, l);
            const Vector dx = (ensemble.state_vector(m, l + 1) - z).head(static_cast<Eigen::Index>(ensemble.dims.x));
            total += (est(feature_f(z)) - dx / dt).squaredNorm() * dt;
        }
    }
    return total / (static_cast<double>(ensemble.M) * ensemble.horizon());
}

double drift_g_loss(const TrajectoryEnsemble &ensemble, const FeatureMap &feature_g, const DriftEstimate &est,
                    const Matrix &weight) {
    const Matrix inv = weight.inverse();
    const auto dy_n = static_cast<Eigen::Index>(ensemble.dims.y);
    double total = 0.0;
    for (std::size_t m = 0; m < ensemble.M; ++m) {
        for (std::size_t l = 0; l + 1 < ensemble.L; ++l) {
            const double dt = ensemble.step(l);
            const Vector z = ensemble.state_vector(m, l);
            const Vector dy = (ensemble.state_vector(m, l + 1) - z).tail(dy_n);
            const Vector g = est(feature_g(z));
            total += 0.5 * (g.dot(inv * g) * dt - 2.0 * g.dot(inv * dy));
        }
    }
    return total / (static_cast<double>(ensemble.M) * ensemble.horizon());
}

}  // namespace msde
