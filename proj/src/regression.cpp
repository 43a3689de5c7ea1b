#include "msde/regression.hpp"

#include "msde/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace msde {

namespace {

constexpr double kMaxCondition = 1e12;
constexpr std::size_t kMaxChunks = 64;

struct Equilibrated {
    Vector scale;                 // 1/sqrt(G_ii), zero for unsupported columns
    Matrix gram;                  // D G D
    std::vector<Eigen::Index> unsupported;
};

Equilibrated equilibrate(const Matrix &g) {
    Equilibrated e;
    e.scale = Vector::Zero(g.rows());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        if (g(i, i) > 0.0) {
            e.scale[i] = 1.0 / std::sqrt(g(i, i));
        } else {
            e.unsupported.push_back(i);
        }
    }
    e.gram = e.scale.asDiagonal() * g * e.scale.asDiagonal();
    return e;
}

Matrix ridge_solution(const Eigen::SelfAdjointEigenSolver<Matrix> &eig, const Matrix &rhs, double lambda) {
    const Vector inv = (eig.eigenvalues().array() + lambda).inverse();
    return eig.eigenvectors() * inv.asDiagonal() * (eig.eigenvectors().transpose() * rhs);
}

// Smallest ridge penalty that brings the coefficient norm inside `radius`.
Matrix project_to_ball(const Matrix &g, const Matrix &b, const Matrix &coef, double radius) {
    if (coef.norm() <= radius) return coef;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
    double lo = 0.0;
    double hi = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    while (ridge_solution(eig, b, hi).norm() > radius) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (ridge_solution(eig, b, mid).norm() > radius) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return ridge_solution(eig, b, hi);
}

}  // namespace

std::string to_string(Regularization::Kind kind) {
    switch (kind) {
    case Regularization::Kind::none: return "none";
    case Regularization::Kind::ridge: return "ridge";
    case Regularization::Kind::truncated_svd: return "truncated_svd";
    }
    return "unknown";
}

nlohmann::json Regularization::to_json() const {
    nlohmann::json j = {{"kind", to_string(kind)}, {"strength", strength}};
    if (coefficient_radius) j["coefficient_radius"] = *coefficient_radius;
    return j;
}

Regularization Regularization::from_json(const nlohmann::json &j) {
    Regularization r;
    const auto kind = j.value("kind", std::string("truncated_svd"));
    if (kind == "none") {
        r.kind = Kind::none;
    } else if (kind == "ridge") {
        r.kind = Kind::ridge;
    } else if (kind == "truncated_svd") {
        r.kind = Kind::truncated_svd;
    } else {
        throw ConfigError("unknown regularization kind '" + kind + "'");
    }
    r.strength = j.value("strength", r.kind == Kind::ridge ? 1e-8 : 1e-10);
    if (!(r.strength >= 0.0)) throw ConfigError("regularization strength must be nonnegative");
    if (j.contains("coefficient_radius")) r.coefficient_radius = j.at("coefficient_radius").get<double>();
    return r;
}

NormalEquations::NormalEquations(std::size_t n_basis, std::size_t n_outputs)
    : gram_(Matrix::Zero(static_cast<Eigen::Index>(n_basis), static_cast<Eigen::Index>(n_basis))),
      moments_(Matrix::Zero(static_cast<Eigen::Index>(n_basis), static_cast<Eigen::Index>(n_outputs))),
      target_cross_(Matrix::Zero(static_cast<Eigen::Index>(n_outputs), static_cast<Eigen::Index>(n_outputs))) {}

void NormalEquations::add(std::span<const BasisEntry> phi, std::span<const double> targets, double weight) {
    const auto n_out = moments_.cols();
    for (const auto &a : phi) {
        const auto ia = static_cast<Eigen::Index>(a.index);
        const double wa = weight * a.value;
        for (const auto &b : phi) gram_(ia, static_cast<Eigen::Index>(b.index)) += wa * b.value;
        for (Eigen::Index k = 0; k < n_out; ++k) moments_(ia, k) += wa * targets[static_cast<std::size_t>(k)];
    }
    for (Eigen::Index a = 0; a < n_out; ++a) {
        const double ya = weight * targets[static_cast<std::size_t>(a)];
        for (Eigen::Index b = 0; b < n_out; ++b) target_cross_(a, b) += ya * targets[static_cast<std::size_t>(b)];
    }
    rows_ += weight;
}

void NormalEquations::add_dense(const Vector &phi, std::span<const double> targets, double weight) {
    gram_.noalias() += weight * phi * phi.transpose();
    const Eigen::Map<const Eigen::RowVectorXd> y(targets.data(), static_cast<Eigen::Index>(targets.size()));
    moments_.noalias() += weight * phi * y;
    target_cross_.noalias() += weight * y.transpose() * y;
    rows_ += weight;
}

void NormalEquations::merge(const NormalEquations &other) {
    gram_ += other.gram_;
    moments_ += other.moments_;
    target_cross_ += other.target_cross_;
    rows_ += other.rows_;
}

NormalEquations NormalEquations::with_outputs_mixed(const Matrix &right) const {
    if (right.rows() != moments_.cols()) throw ContractViolation("with_outputs_mixed: shape mismatch");
    NormalEquations out;
    out.gram_ = gram_;
    out.moments_ = moments_ * right;
    out.target_cross_ = right.transpose() * target_cross_ * right;
    out.rows_ = rows_;
    return out;
}

Matrix NormalEquations::solve(const Regularization &reg) const {
    if (rows_ <= 0.0) throw IllConditionedError("least squares: no data rows were accumulated");
    const Matrix g = gram_ / rows_;
    const Matrix b = moments_ / rows_;
    if (!g.allFinite() || !b.allFinite()) throw NumericalError("least squares: non-finite Gram or moment entries");
    const auto n = g.rows();

    Matrix coef;
    switch (reg.kind) {
    case Regularization::Kind::none: {
        const auto eq = equilibrate(g);
        if (!eq.unsupported.empty()) {
            std::ostringstream os;
            os << "least squares: Gram matrix is singular (basis function " << eq.unsupported.front()
               << " has no data support); use ridge or truncated_svd regularization";
            throw IllConditionedError(os.str());
        }
        Eigen::SelfAdjointEigenSolver<Matrix> eig(eq.gram, Eigen::EigenvaluesOnly);
        const double lmax = eig.eigenvalues().maxCoeff();
        const double lmin = eig.eigenvalues().minCoeff();
        if (!(lmin > 0.0) || lmax / lmin > kMaxCondition) {
            std::ostringstream os;
            os << "least squares: Gram matrix is ill-conditioned (condition ~ " << (lmin > 0.0 ? lmax / lmin : INFINITY)
               << "); use ridge or truncated_svd regularization";
            throw IllConditionedError(os.str());
        }
        const Matrix scaled_b = eq.scale.asDiagonal() * b;
        coef = eq.scale.asDiagonal() * Eigen::LLT<Matrix>(eq.gram).solve(scaled_b);
        break;
    }
    case Regularization::Kind::ridge: {
        Matrix reg_g = g;
        reg_g.diagonal().array() += reg.strength;
        Eigen::LDLT<Matrix> ldlt(reg_g);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
            throw IllConditionedError("least squares: ridge system is not positive definite; increase the strength");
        }
        coef = ldlt.solve(b);
        break;
    }
    case Regularization::Kind::truncated_svd: {
        const auto eq = equilibrate(g);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(eq.gram);
        const Vector &lambda = eig.eigenvalues();
        const double lmax = std::max(lambda.maxCoeff(), 0.0);
        // Squared singular values are resolved only down to the Gram matrix's
        // rounding level, so the cutoff is floored there.
        const double floor = 64.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(n);
        const double threshold = std::max(reg.strength * reg.strength, floor) * lmax;
        Vector inv = Vector::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (lambda[i] > threshold && lambda[i] > 0.0) inv[i] = 1.0 / lambda[i];
        }
        const Matrix scaled_b = eq.scale.asDiagonal() * b;
        coef = eq.scale.asDiagonal() *
               (eig.eigenvectors() * inv.asDiagonal() * (eig.eigenvectors().transpose() * scaled_b));
        break;
    }
    }
    if (reg.coefficient_radius) coef = project_to_ball(g, b, coef, *reg.coefficient_radius);
    if (!coef.allFinite()) throw NumericalError("least squares: solution has non-finite coefficients");
    return coef;
}

Vector NormalEquations::loss(const Matrix &coef) const {
    Vector out(moments_.cols());
    for (Eigen::Index k = 0; k < moments_.cols(); ++k) {
        const auto c = coef.col(k);
        out[k] = (target_cross_(k, k) - 2.0 * c.dot(moments_.col(k)) + c.dot(gram_ * c)) / rows_;
    }
    return out;
}

Matrix NormalEquations::gradient(const Matrix &coef) const { return 2.0 * (gram_ * coef - moments_) / rows_; }

NormalEquations accumulate_ordered(std::size_t n_basis, std::size_t n_outputs, std::size_t n_items,
                                   std::size_t threads,
                                   const std::function<void(std::size_t, NormalEquations &)> &add_item) {
    const std::size_t chunks = std::max<std::size_t>(1, std::min(n_items, kMaxChunks));
    std::vector<NormalEquations> partial(chunks, NormalEquations(n_basis, n_outputs));
    parallel_for(chunks, threads, [&](std::size_t c) {
        const std::size_t begin = c * n_items / chunks;
        const std::size_t end = (c + 1) * n_items / chunks;
        for (std::size_t i = begin; i < end; ++i) add_item(i, partial[c]);
    });
    NormalEquations total(n_basis, n_outputs);
    for (const auto &p : partial) total.merge(p);
    return total;
}

}  // namespace msde
