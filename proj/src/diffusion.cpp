#include "msde/diffusion.hpp"

#include <cmath>

namespace msde {

namespace {

Matrix clip_psd(const Matrix &s) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (s + s.transpose()));
    const Vector lambda = eig.eigenvalues().cwiseMax(0.0);
    return eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
}

nlohmann::json matrix_json(const Matrix &m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> row;
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

Matrix matrix_from_json(const nlohmann::json &j) {
    const auto n = static_cast<Eigen::Index>(j.size());
    Matrix m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto row = j[static_cast<std::size_t>(i)].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(row.size()) != n) throw ContractViolation("diffusion estimate: matrix not square");
        for (Eigen::Index k = 0; k < n; ++k) m(i, k) = row[static_cast<std::size_t>(k)];
    }
    return m;
}

}  // namespace

Matrix QuadraticVariationRecord::mean() const {
    if (per_trajectory_Q.empty()) throw ContractViolation("quadratic variation record is empty");
    Matrix acc = Matrix::Zero(per_trajectory_Q.front().rows(), per_trajectory_Q.front().cols());
    for (const auto &q : per_trajectory_Q) acc += q;
    return acc / static_cast<double>(per_trajectory_Q.size());
}

QuadraticVariationRecord empirical_qv(const TrajectoryEnsemble &ensemble, const DriftCompensation &compensation) {
    if (ensemble.L < 2) throw ContractViolation("empirical_qv: need at least two time points");
    const auto dx = static_cast<Eigen::Index>(ensemble.dims.x);
    const auto dy = static_cast<Eigen::Index>(ensemble.dims.y);
    QuadraticVariationRecord rec;
    rec.horizon = ensemble.horizon();
    rec.per_trajectory_Q.reserve(ensemble.M);
    Vector inc(dy);
    for (std::size_t m = 0; m < ensemble.M; ++m) {
        Matrix q = Matrix::Zero(dy, dy);
        for (std::size_t l = 0; l + 1 < ensemble.L; ++l) {
            const auto now = ensemble.state(m, l);
            const auto next = ensemble.state(m, l + 1);
            for (Eigen::Index k = 0; k < dy; ++k) {
                const auto idx = static_cast<std::size_t>(dx + k);
                inc[k] = next[idx] - now[idx];
            }
            if (compensation) inc -= compensation(ensemble.state_vector(m, l)) * ensemble.step(l);
            q.selfadjointView<Eigen::Lower>().rankUpdate(inc);
        }
        q.triangularView<Eigen::StrictlyUpper>() = q.transpose();
        rec.per_trajectory_Q.push_back(std::move(q));
    }
    return rec;
}

std::string to_string(DiffusionClass c) {
    return c == DiffusionClass::constant_matrix ? "constant_matrix" : "diagonal_state_dependent";
}

DiffusionClass diffusion_class_from_string(const std::string &name) {
    if (name == "constant_matrix") return DiffusionClass::constant_matrix;
    if (name == "diagonal_state_dependent") return DiffusionClass::diagonal_state_dependent;
    throw ConfigError("unknown diffusion model class '" + name + "'");
}

Matrix DiffusionEstimate::sigma_at(const Vector &y) const {
    if (model_class == DiffusionClass::constant_matrix) return sigma_hat;
    const Vector var = (*variance_field)(y).cwiseMax(0.0);
    return var.cwiseSqrt().asDiagonal();
}

Vector DiffusionEstimate::sigma_diagonal() const { return Sigma_hat.diagonal().cwiseMax(0.0).cwiseSqrt(); }

nlohmann::json DiffusionEstimate::to_json() const {
    const Vector diag = sigma_diagonal();
    nlohmann::json j = {{"model_class", to_string(model_class)},
                        {"Sigma_hat", matrix_json(Sigma_hat)},
                        {"sigma_hat", matrix_json(sigma_hat)},
                        {"sigma_diagonal", std::vector<double>(diag.data(), diag.data() + diag.size())},
                        {"degenerate", degenerate}};
    if (variance_field) j["variance_field"] = variance_field->to_json();
    return j;
}

DiffusionEstimate DiffusionEstimate::from_json(const nlohmann::json &j) {
    DiffusionEstimate est;
    est.model_class = diffusion_class_from_string(j.at("model_class").get<std::string>());
    est.Sigma_hat = matrix_from_json(j.at("Sigma_hat"));
    est.sigma_hat = matrix_from_json(j.at("sigma_hat"));
    est.degenerate = j.value("degenerate", false);
    if (j.contains("variance_field")) est.variance_field = DriftEstimate::from_json(j.at("variance_field"));
    if (est.model_class == DiffusionClass::diagonal_state_dependent && !est.variance_field) {
        throw ContractViolation("diffusion estimate: diagonal class needs a variance field");
    }
    return est;
}

DiffusionEstimate fit_sigma_constant(const QuadraticVariationRecord &qv) {
    if (!(qv.horizon > 0.0)) throw ContractViolation("fit_sigma_constant: horizon must be positive");
    DiffusionEstimate est;
    est.model_class = DiffusionClass::constant_matrix;
    est.Sigma_hat = clip_psd(qv.mean() / qv.horizon);
    est.degenerate = est.Sigma_hat.cwiseAbs().maxCoeff() == 0.0;
    est.sigma_hat = matrix_sqrt_psd(est.Sigma_hat);
    return est;
}

DiffusionEstimate fit_sigma_state_dependent(const TrajectoryEnsemble &ensemble, const BasisLibrary &lib,
                                            const Regularization &reg, const DriftCompensation &compensation,
                                            std::size_t threads) {
    const std::size_t dy = ensemble.dims.y;
    const std::size_t dx = ensemble.dims.x;
    if (lib.dims_in() != dy) throw ContractViolation("fit_sigma_state_dependent: basis must be defined over the y-block");
    if (ensemble.L < 2) throw ContractViolation("fit_sigma_state_dependent: need at least two time points");

    const auto ne = accumulate_ordered(lib.size(), dy, ensemble.M, threads, [&](std::size_t m, NormalEquations &acc) {
        std::vector<BasisEntry> phi;
        std::vector<double> target(dy);
        Vector inc(static_cast<Eigen::Index>(dy));
        for (std::size_t l = 0; l + 1 < ensemble.L; ++l) {
            const double dt = ensemble.step(l);
            const auto now = ensemble.state(m, l);
            const auto next = ensemble.state(m, l + 1);
            for (std::size_t k = 0; k < dy; ++k) inc[static_cast<Eigen::Index>(k)] = next[dx + k] - now[dx + k];
            if (compensation) inc -= compensation(ensemble.state_vector(m, l)) * dt;
            for (std::size_t k = 0; k < dy; ++k) target[k] = inc[static_cast<Eigen::Index>(k)] * inc[static_cast<Eigen::Index>(k)] / dt;
            lib.eval_sparse(now.subspan(dx, dy), phi);
            acc.add(phi, target, dt);
        }
    });

    DiffusionEstimate est;
    est.model_class = DiffusionClass::diagonal_state_dependent;
    est.variance_field = DriftEstimate{lib, ne.solve(reg), dy, reg};

    // Data average of the clipped field.
    Vector mean_var = Vector::Zero(static_cast<Eigen::Index>(dy));
    double weight = 0.0;
    for (std::size_t m = 0; m < ensemble.M; ++m) {
        for (std::size_t l = 0; l + 1 < ensemble.L; ++l) {
            const Vector y = ensemble.state_vector(m, l).tail(static_cast<Eigen::Index>(dy));
            mean_var += (*est.variance_field)(y).cwiseMax(0.0) * ensemble.step(l);
            weight += ensemble.step(l);
        }
    }
    mean_var /= weight;
    est.Sigma_hat = mean_var.asDiagonal();
    est.sigma_hat = mean_var.cwiseSqrt().asDiagonal();
    est.degenerate = mean_var.cwiseAbs().maxCoeff() == 0.0;
    return est;
}

Matrix matrix_sqrt_psd(const Matrix &sigma) {
    if (sigma.rows() != sigma.cols()) throw ContractViolation("matrix_sqrt_psd: matrix must be square");
    const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
        throw ContractViolation("matrix_sqrt_psd: matrix is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (sigma + sigma.transpose()));
    if (eig.eigenvalues().minCoeff() < -1e-12 * scale) {
        throw ContractViolation("matrix_sqrt_psd: matrix has a negative eigenvalue");
    }
    const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Matrix r = eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
    return 0.5 * (r + r.transpose());
}

Matrix fit_g_weight(const DiffusionEstimate &est, double floor) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (est.Sigma_hat + est.Sigma_hat.transpose()));
    const Vector lambda = eig.eigenvalues().cwiseMax(floor);
    Matrix w = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
    return 0.5 * (w + w.transpose());
}

}  // namespace msde
