#pragma once

#include "msde/core.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace msde {

struct SimulationConfig {
    double T = 1.0;
    double dt = 1e-3;
    std::size_t M = 1;
    std::uint64_t seed = 0;
    InitialDistribution initial;

    // Number of time points L = round(T/dt) + 1; validates the grid.
    std::size_t time_points() const;
};

// M sample paths on a shared uniform grid, stored row-major as
// states[(m * L + l) * D + k] and noise[(m * (L-1) + l) * D_y + k].
struct TrajectoryEnsemble {
    SystemDimensions dims;
    std::uint64_t seed = 0;
    double dt = 0.0;
    std::size_t M = 0;
    std::size_t L = 0;
    std::vector<double> times;
    std::vector<double> states;
    std::vector<double> noise;

    static TrajectoryEnsemble allocate(const SystemDimensions &dims, std::size_t M, std::size_t L, double dt,
                                       std::uint64_t seed);

    double horizon() const { return times.back(); }
    double step(std::size_t l) const { return times[l + 1] - times[l]; }

    std::span<const double> state(std::size_t m, std::size_t l) const {
        return {states.data() + (m * L + l) * dims.total, dims.total};
    }
    std::span<double> state(std::size_t m, std::size_t l) {
        return {states.data() + (m * L + l) * dims.total, dims.total};
    }
    std::span<const double> increment(std::size_t m, std::size_t l) const {
        return {noise.data() + (m * (L - 1) + l) * dims.y, dims.y};
    }
    std::span<double> increment(std::size_t m, std::size_t l) {
        return {noise.data() + (m * (L - 1) + l) * dims.y, dims.y};
    }
    Vector state_vector(std::size_t m, std::size_t l) const;

    // Nearest grid index to t; throws ContractViolation if |t_l - t| > dt/2.
    std::size_t nearest_index(double t) const;

    // Extracts all M states at grid index l as an M x D matrix.
    Matrix snapshot(std::size_t l) const;
};

// Euler-Maruyama with dw_y ~ N(0, dt I). Each trajectory draws its initial
// state and increments from its own seeded stream, so the output does not
// depend on the thread count.
TrajectoryEnsemble simulate_ensemble(const ModelSystem &model, const SimulationConfig &config,
                                     std::size_t threads = 0);

// Re-integrates `model` from the reference's initial states using the
// reference's recorded Brownian increments.
TrajectoryEnsemble replay_ensemble(const ModelSystem &model, const TrajectoryEnsemble &reference,
                                   std::size_t threads = 0);

// Binary format (little-endian, see README): magic, header, times, states, noise.
void save_ensemble(const TrajectoryEnsemble &ensemble, const std::filesystem::path &path);
TrajectoryEnsemble load_ensemble(const std::filesystem::path &path);

// CSV with columns trajectory,time,state_0..state_{D-1}.
void write_ensemble_csv(const TrajectoryEnsemble &ensemble, const std::filesystem::path &path);

inline constexpr double kBlowUpThreshold = 1e8;

}  // namespace msde
