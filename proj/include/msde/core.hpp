#pragma once

// Data model for mixed SDEs with singular noise:
//
//   dx = f(xi_f(x, y)) dt
//   dy = g(xi_g(x, y)) dt + sigma_y(y) dw_y
//
// The full state z = [x; y] has D = D_x + D_y components; only the y-block
// is driven by Brownian noise.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace msde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error taxonomy. The CLI maps these onto exit codes.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SimulationError : public NumericalError {
public:
    SimulationError(const std::string &what, std::size_t trajectory, double time)
        : NumericalError(what), trajectory_(trajectory), time_(time) {}
    std::size_t trajectory() const noexcept { return trajectory_; }
    double time() const noexcept { return time_; }

private:
    std::size_t trajectory_;
    double time_;
};

class IllConditionedError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

struct SystemDimensions {
    std::size_t total = 0;  // D
    std::size_t x = 0;      // D_x, noise-free block
    std::size_t y = 0;      // D_y, noisy block
    std::size_t feature_f = 0;
    std::size_t feature_g = 0;

    // Throws ContractViolation unless D = D_x + D_y and every entry is positive.
    void validate() const;
    bool operator==(const SystemDimensions &) const = default;
};

SystemDimensions make_dimensions(std::size_t dx, std::size_t dy, std::size_t df, std::size_t dg);

using VectorFn = std::function<Vector(const Vector &)>;
using MatrixFn = std::function<Matrix(const Vector &)>;

// A feature map xi: R^D -> R^d, with per-output periodicity flags used to
// pick a periodic basis for angular coordinates.
struct FeatureMap {
    std::size_t dim = 0;
    VectorFn map;
    std::vector<bool> periodic;

    Vector operator()(const Vector &state) const { return map(state); }
};

FeatureMap identity_features(std::size_t total_dim);
// Selects the listed coordinates of the full state, in order.
FeatureMap coordinate_features(std::vector<std::size_t> indices, std::vector<bool> periodic = {});

struct ModelSystem {
    std::string name;
    SystemDimensions dims;
    VectorFn drift_f;          // R^{d_f} -> R^{D_x}
    VectorFn drift_g;          // R^{d_g} -> R^{D_y}
    FeatureMap feature_f;      // R^D -> R^{d_f}
    FeatureMap feature_g;      // R^D -> R^{d_g}
    MatrixFn diffusion_sigma_y;  // R^{D_y} -> D_y x D_y, symmetric PSD

    // Checks dimensions of the callables' declared shapes.
    void validate() const;
};

struct StateVector {
    Vector x_block;
    Vector y_block;

    static StateVector split(const Vector &z, const SystemDimensions &dims);
    Vector joined() const;
};

// Assembles h(z) = [f(xi_f(z)); g(xi_g(z))].
Vector full_drift(const ModelSystem &model, const StateVector &state);
Vector full_drift(const ModelSystem &model, const Vector &z);

// Block matrix with a zero x-block and sigma_y(y) in the bottom-right corner.
Matrix full_diffusion(const ModelSystem &model, const StateVector &state);

// sigma_y evaluated with its symmetry contract enforced (|S - S^T| <= 1e-12).
Matrix checked_sigma_y(const ModelSystem &model, const Vector &y);

using Rng = std::mt19937_64;

// Independent, reproducible stream for one trajectory of a seeded ensemble.
Rng trajectory_stream(std::uint64_t seed, std::uint64_t trajectory);

enum class InitialKind { uniform_box, uniform_angle, gaussian, custom_sampler };

std::string to_string(InitialKind kind);
InitialKind initial_kind_from_string(const std::string &name);

// mu_0. For uniform_box, lower/upper are per-coordinate bounds. uniform_angle is
// a box whose listed angle coordinates are drawn from [0, 2*pi) instead.
// gaussian uses lower as the mean and upper as the standard deviation.
struct InitialDistribution {
    InitialKind kind = InitialKind::uniform_box;
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<std::size_t> angle_coordinates;
    std::function<Vector(Rng &)> sampler;

    static InitialDistribution uniform(std::size_t dim, double lo = 0.0, double hi = 1.0);

    Vector sample(Rng &rng, std::size_t dim) const;
};

}  // namespace msde
