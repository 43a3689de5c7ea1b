#include "msde/models.hpp"
#include "msde/simulate.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace msde;

namespace {

ModelSystem zero_model(double sigma) {
    ModelSystem m;
    m.name = "zero";
    m.dims = make_dimensions(1, 1, 2, 2);
    m.feature_f = identity_features(2);
    m.feature_g = identity_features(2);
    m.drift_f = [](const Vector &) { return Vector::Zero(1); };
    m.drift_g = [](const Vector &) { return Vector::Zero(1); };
    m.diffusion_sigma_y = [sigma](const Vector &) { return Matrix::Constant(1, 1, sigma); };
    return m;
}

SimulationConfig config(double T, double dt, std::size_t M, std::uint64_t seed) {
    SimulationConfig c;
    c.T = T;
    c.dt = dt;
    c.M = M;
    c.seed = seed;
    c.initial = InitialDistribution::uniform(2);
    return c;
}

bool same_bytes(const std::vector<double> &a, const std::vector<double> &b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::filesystem::path temp_path(const std::string &name) {
    return std::filesystem::temp_directory_path() / ("msde_test_" + name);
}

}  // namespace

TEST_CASE("zero drift and zero noise leave the state frozen") {
    const auto ens = simulate_ensemble(zero_model(0.0), config(1.0, 0.01, 5, 3));
    for (std::size_t m = 0; m < ens.M; ++m) {
        for (std::size_t l = 1; l < ens.L; ++l) {
            CHECK(ens.state_vector(m, l) == ens.state_vector(m, 0));
        }
    }
}

TEST_CASE("pure Brownian y has variance sigma^2 T") {
    const double sigma = 0.1, T = 1.0;
    const std::size_t M = 3000;
    const auto ens = simulate_ensemble(zero_model(sigma), config(T, 0.01, M, 17));
    double mean = 0.0, sq = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double d = ens.state(m, ens.L - 1)[1] - ens.state(m, 0)[1];
        mean += d;
        sq += d * d;
    }
    mean /= static_cast<double>(M);
    const double var = sq / static_cast<double>(M);
    const double expected = sigma * sigma * T;
    // Var of the sample second moment of N(0, v) is 2 v^2 / M.
    const double se = std::sqrt(2.0 / static_cast<double>(M)) * expected;
    CHECK(std::abs(var - expected) <= 3.0 * se);
    CHECK(std::abs(mean) <= 3.0 * std::sqrt(expected / static_cast<double>(M)));
}

TEST_CASE("toy ensemble has the documented shape") {
    const auto toy = make_builtin("toy");
    const auto ens = simulate_ensemble(toy, config(1.0, 1e-3, 3000, 1));
    CHECK(ens.M == 3000);
    CHECK(ens.L == 1001);
    CHECK(ens.dims.total == 2);
    CHECK(ens.states.size() == 3000u * 1001u * 2u);
    CHECK(ens.noise.size() == 3000u * 1000u * 1u);
    CHECK(ens.times.front() == 0.0);
    CHECK(ens.horizon() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("replaying the true model on recorded noise reproduces the ensemble bit for bit") {
    for (const auto &name : {"toy", "van_der_pol", "vicsek", "henon_heiles"}) {
        const auto model = make_builtin(name);
        SimulationConfig c = config(1.0, 1e-2, 20, 5);
        c.initial = default_initial(name, model);
        const auto ens = simulate_ensemble(model, c);
        const auto again = replay_ensemble(model, ens);
        CHECK(same_bytes(ens.states, again.states));
        CHECK(same_bytes(ens.noise, again.noise));
    }
}

TEST_CASE("replay with a zero, noiseless model keeps the initial states") {
    const auto ens = simulate_ensemble(make_builtin("toy"), config(0.5, 1e-2, 10, 2));
    const auto frozen = replay_ensemble(zero_model(0.0), ens);
    for (std::size_t m = 0; m < ens.M; ++m) {
        for (std::size_t l = 0; l < ens.L; ++l) CHECK(frozen.state_vector(m, l) == ens.state_vector(m, 0));
    }
}

TEST_CASE("seeds determine the ensemble") {
    const auto toy = make_builtin("toy");
    const auto a = simulate_ensemble(toy, config(0.2, 1e-2, 50, 9));
    const auto b = simulate_ensemble(toy, config(0.2, 1e-2, 50, 9));
    const auto c = simulate_ensemble(toy, config(0.2, 1e-2, 50, 10));
    CHECK(same_bytes(a.states, b.states));
    CHECK(!same_bytes(a.states, c.states));
}

TEST_CASE("property: the x-block update is exactly x + f dt") {
    oracle::Gen gen(23);
    for (const auto &name : {"toy", "van_der_pol", "vicsek", "henon_heiles"}) {
        const auto model = make_builtin(name);
        SimulationConfig c = config(1.0, 1e-2, 10, gen.index(0, 1000));
        c.initial = default_initial(name, model);
        const auto ens = simulate_ensemble(model, c);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t m = gen.index(0, ens.M - 1);
            const std::size_t l = gen.index(0, ens.L - 2);
            const Vector z = ens.state_vector(m, l);
            const Vector f = model.drift_f(model.feature_f(z));
            for (std::size_t k = 0; k < model.dims.x; ++k) {
                const double expected = z[static_cast<Eigen::Index>(k)] + f[static_cast<Eigen::Index>(k)] * ens.dt;
                REQUIRE(ens.state(m, l + 1)[k] == expected);
            }
        }
    }
}

TEST_CASE("ensemble does not depend on the thread count") {
    const auto hh = make_builtin("henon_heiles");
    SimulationConfig c = config(0.5, 1e-2, 37, 4);
    c.initial = InitialDistribution::uniform(4);
    const auto one = simulate_ensemble(hh, c, 1);
    const auto four = simulate_ensemble(hh, c, 4);
    CHECK(same_bytes(one.states, four.states));
    CHECK(same_bytes(one.noise, four.noise));
}

TEST_CASE("binary ensemble files round trip exactly") {
    const auto ens = simulate_ensemble(make_builtin("toy"), config(0.1, 1e-2, 7, 8));
    const auto path = temp_path("roundtrip.bin");
    save_ensemble(ens, path);
    const auto back = load_ensemble(path);
    CHECK(back.dims == ens.dims);
    CHECK(back.M == ens.M);
    CHECK(back.L == ens.L);
    CHECK(back.seed == ens.seed);
    CHECK(back.dt == ens.dt);
    CHECK(same_bytes(back.times, ens.times));
    CHECK(same_bytes(back.states, ens.states));
    CHECK(same_bytes(back.noise, ens.noise));

    {
        std::ofstream junk(path, std::ios::binary | std::ios::app);
        junk << 'x';
    }
    CHECK_THROWS_AS(load_ensemble(path), ContractViolation);
    {
        std::ofstream bad(path, std::ios::binary | std::ios::trunc);
        bad << "not an ensemble";
    }
    CHECK_THROWS_AS(load_ensemble(path), ContractViolation);
    std::filesystem::remove(path);
}

TEST_CASE("CSV export has one row per stored state") {
    const auto ens = simulate_ensemble(make_builtin("toy"), config(0.05, 1e-2, 3, 8));
    const auto path = temp_path("ens.csv");
    write_ensemble_csv(ens, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "trajectory,time,state_0,state_1");
    std::size_t rows = 0;
    std::string last;
    while (std::getline(in, line)) {
        ++rows;
        last = line;
    }
    CHECK(rows == ens.M * ens.L);
    std::stringstream ss(last);
    std::string cell;
    std::getline(ss, cell, ',');
    CHECK(cell == "2");
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    CHECK(std::stod(cell) == ens.state(2, ens.L - 1)[0]);
    std::filesystem::remove(path);
}

TEST_CASE("a diverging model raises SimulationError with its location") {
    ModelSystem m = zero_model(0.0);
    m.drift_g = [](const Vector &z) { return Vector::Constant(1, z[1] * z[1] * z[1]); };
    SimulationConfig c = config(10.0, 0.01, 2, 1);
    c.initial = InitialDistribution::uniform(2, 5.0, 6.0);
    try {
        simulate_ensemble(m, c, 1);
        FAIL("expected a SimulationError");
    } catch (const SimulationError &e) {
        CHECK(e.time() > 0.0);
        CHECK(e.time() < 10.0);
        CHECK(e.trajectory() < 2);
    }
}

TEST_CASE("grid validation") {
    CHECK_THROWS_AS(config(1.0, 0.3, 1, 0).time_points(), ConfigError);
    CHECK_THROWS_AS(config(-1.0, 0.1, 1, 0).time_points(), ConfigError);
    CHECK_THROWS_AS(config(1.0, 0.1, 0, 0).time_points(), ConfigError);
    CHECK(config(1.0, 0.25, 1, 0).time_points() == 5);

    const auto ens = simulate_ensemble(make_builtin("toy"), config(1.0, 0.25, 1, 0));
    CHECK(ens.nearest_index(0.5) == 2);
    CHECK(ens.nearest_index(0.52) == 2);
    CHECK_THROWS_AS(ens.nearest_index(1.5), ContractViolation);
    CHECK_THROWS_AS(ens.nearest_index(-0.5), ContractViolation);
}

TEST_CASE("a single trajectory ensemble is valid") {
    const auto ens = simulate_ensemble(make_builtin("toy"), config(0.1, 0.01, 1, 0));
    CHECK(ens.M == 1);
    CHECK(ens.snapshot(0).rows() == 1);
}
