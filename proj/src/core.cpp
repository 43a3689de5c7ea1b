#include "msde/core.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace msde {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void expect_size(const Vector &v, std::size_t n, const char *what) {
    if (static_cast<std::size_t>(v.size()) != n) {
        std::ostringstream os;
        os << what << ": expected length " << n << ", got " << v.size();
        throw ContractViolation(os.str());
    }
}

}  // namespace

void SystemDimensions::validate() const {
    if (x < 1 || y < 1) {
        throw ContractViolation("SystemDimensions: D_x and D_y must both be at least 1");
    }
    if (total != x + y) {
        throw ContractViolation("SystemDimensions: D_total must equal D_x + D_y");
    }
    if (feature_f < 1 || feature_g < 1) {
        throw ContractViolation("SystemDimensions: feature dimensions must be positive");
    }
}

SystemDimensions make_dimensions(std::size_t dx, std::size_t dy, std::size_t df, std::size_t dg) {
    SystemDimensions dims{dx + dy, dx, dy, df, dg};
    dims.validate();
    return dims;
}

FeatureMap identity_features(std::size_t total_dim) {
    return FeatureMap{total_dim, [](const Vector &z) { return z; }, std::vector<bool>(total_dim, false)};
}

FeatureMap coordinate_features(std::vector<std::size_t> indices, std::vector<bool> periodic) {
    const std::size_t dim = indices.size();
    if (periodic.empty()) periodic.assign(dim, false);
    if (periodic.size() != dim) {
        throw ContractViolation("coordinate_features: periodic flags must match index count");
    }
    auto map = [idx = std::move(indices)](const Vector &z) {
        Vector out(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = z[static_cast<Eigen::Index>(idx[k])];
        return out;
    };
    return FeatureMap{dim, std::move(map), std::move(periodic)};
}

void ModelSystem::validate() const {
    dims.validate();
    if (!drift_f || !drift_g || !feature_f.map || !feature_g.map || !diffusion_sigma_y) {
        throw ContractViolation("ModelSystem '" + name + "': every component callable must be set");
    }
    if (feature_f.dim != dims.feature_f || feature_g.dim != dims.feature_g) {
        throw ContractViolation("ModelSystem '" + name + "': feature map dimensions disagree with dims");
    }
}

StateVector StateVector::split(const Vector &z, const SystemDimensions &dims) {
    expect_size(z, dims.total, "state");
    const auto dx = static_cast<Eigen::Index>(dims.x);
    const auto dy = static_cast<Eigen::Index>(dims.y);
    return StateVector{z.head(dx), z.tail(dy)};
}

Vector StateVector::joined() const {
    Vector z(x_block.size() + y_block.size());
    z << x_block, y_block;
    return z;
}

Vector full_drift(const ModelSystem &model, const StateVector &state) {
    expect_size(state.x_block, model.dims.x, "full_drift x_block");
    expect_size(state.y_block, model.dims.y, "full_drift y_block");
    return full_drift(model, state.joined());
}

Vector full_drift(const ModelSystem &model, const Vector &z) {
    expect_size(z, model.dims.total, "full_drift state");
    const Vector fx = model.drift_f(model.feature_f(z));
    const Vector gy = model.drift_g(model.feature_g(z));
    expect_size(fx, model.dims.x, "drift_f output");
    expect_size(gy, model.dims.y, "drift_g output");
    Vector h(z.size());
    h << fx, gy;
    return h;
}

Matrix checked_sigma_y(const ModelSystem &model, const Vector &y) {
    Matrix s = model.diffusion_sigma_y(y);
    const auto dy = static_cast<Eigen::Index>(model.dims.y);
    if (s.rows() != dy || s.cols() != dy) {
        throw ContractViolation("diffusion_sigma_y: output shape does not match D_y");
    }
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw ContractViolation("diffusion_sigma_y: output is not symmetric");
    }
    return s;
}

Matrix full_diffusion(const ModelSystem &model, const StateVector &state) {
    expect_size(state.x_block, model.dims.x, "full_diffusion x_block");
    expect_size(state.y_block, model.dims.y, "full_diffusion y_block");
    const auto dx = static_cast<Eigen::Index>(model.dims.x);
    const auto dy = static_cast<Eigen::Index>(model.dims.y);
    Matrix out = Matrix::Zero(dx + dy, dx + dy);
    out.bottomRightCorner(dy, dy) = checked_sigma_y(model, state.y_block);
    return out;
}

Rng trajectory_stream(std::uint64_t seed, std::uint64_t trajectory) {
    return Rng(splitmix64(splitmix64(seed) ^ splitmix64(trajectory + 0x632be59bd9b4e019ULL)));
}

std::string to_string(InitialKind kind) {
    switch (kind) {
    case InitialKind::uniform_box: return "uniform_box";
    case InitialKind::uniform_angle: return "uniform_angle";
    case InitialKind::gaussian: return "gaussian";
    case InitialKind::custom_sampler: return "custom_sampler";
    }
    return "unknown";
}

InitialKind initial_kind_from_string(const std::string &name) {
    if (name == "uniform_box") return InitialKind::uniform_box;
    if (name == "uniform_angle") return InitialKind::uniform_angle;
    if (name == "gaussian") return InitialKind::gaussian;
    if (name == "custom_sampler") return InitialKind::custom_sampler;
    throw ConfigError("unknown initial distribution kind '" + name + "'");
}

InitialDistribution InitialDistribution::uniform(std::size_t dim, double lo, double hi) {
    InitialDistribution d;
    d.kind = InitialKind::uniform_box;
    d.lower.assign(dim, lo);
    d.upper.assign(dim, hi);
    return d;
}

Vector InitialDistribution::sample(Rng &rng, std::size_t dim) const {
    if (kind == InitialKind::custom_sampler) {
        if (!sampler) throw ContractViolation("custom initial distribution has no sampler");
        Vector z = sampler(rng);
        expect_size(z, dim, "custom sampler output");
        return z;
    }
    if (lower.size() != dim || upper.size() != dim) {
        throw ConfigError("initial distribution: bounds must have one entry per state coordinate");
    }
    Vector z(static_cast<Eigen::Index>(dim));
    if (kind == InitialKind::gaussian) {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t i = 0; i < dim; ++i) z[static_cast<Eigen::Index>(i)] = lower[i] + upper[i] * normal(rng);
        return z;
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < dim; ++i) {
        double lo = lower[i];
        double hi = upper[i];
        if (kind == InitialKind::uniform_angle) {
            for (auto a : angle_coordinates) {
                if (a == i) {
                    lo = 0.0;
                    hi = 2.0 * std::numbers::pi;
                }
            }
        }
        z[static_cast<Eigen::Index>(i)] = lo + (hi - lo) * unit(rng);
    }
    return z;
}

}  // namespace msde
