#include "msde/drift.hpp"
#include "msde/models.hpp"
#include "msde/simulate.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <cstring>

using namespace msde;

namespace {

const BasisConfig kQuadratic{{BasisDimConfig{BasisFamily::bspline, 2, 1}}, 0.05};

TrajectoryEnsemble toy_data(double sigma, std::size_t M, double T, double dt, std::uint64_t seed) {
    SimulationConfig c;
    c.T = T;
    c.dt = dt;
    c.M = M;
    c.seed = seed;
    c.initial = InitialDistribution::uniform(2);
    return simulate_ensemble(make_builtin("toy", {{"sigma", sigma}}), c);
}

// Least-squares coefficients of `est` (scalar output k) on the given monomials,
// sampled on a grid inside the data box.
Vector monomial_fit(const DriftEstimate &est, Eigen::Index k,
                    const std::vector<std::function<double(double, double)>> &monomials) {
    const auto box = est.library.box();
    const int n = 30;
    Matrix design(n * n, static_cast<Eigen::Index>(monomials.size()));
    Matrix target(n * n, 1);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double x = box.lower[0] + (box.upper[0] - box.lower[0]) * (i + 0.5) / n;
            const double y = box.lower[1] + (box.upper[1] - box.lower[1]) * (j + 0.5) / n;
            Vector p(2);
            p << x, y;
            for (std::size_t c = 0; c < monomials.size(); ++c) design(i * n + j, static_cast<Eigen::Index>(c)) = monomials[c](x, y);
            target(i * n + j, 0) = est(p)[k];
        }
    }
    return oracle::dense_least_squares(design, target, Vector::Ones(n * n)).col(0);
}

double l2_error_g(const DriftEstimate &est, const TrajectoryEnsemble &probe) {
    double num = 0.0;
    for (std::size_t m = 0; m < probe.M; ++m) {
        for (std::size_t l = 0; l < probe.L; ++l) {
            const Vector z = probe.state_vector(m, l);
            const double truth = -0.8 * z[1] + 0.2 * z[0] * z[0];
            num += std::pow(est(z)[0] - truth, 2);
        }
    }
    return std::sqrt(num / static_cast<double>(probe.M * probe.L));
}

}  // namespace

TEST_CASE("noise-free toy data: the x-drift is 0.4 x - 0.1 x y") {
    const auto ens = toy_data(0.0, 50, 1.0, 1e-2, 1);
    const auto toy = make_builtin("toy");
    const auto lib = library_for(ens, toy.feature_f, kQuadratic);
    const auto est = fit_f(ens, toy.feature_f, lib);
    const Vector c = monomial_fit(est, 0, {[](double x, double) { return x; }, [](double x, double y) { return x * y; }});
    CHECK(c[0] == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(c[1] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("noise-free toy data: the y-drift is -0.8 y + 0.2 x^2") {
    const auto ens = toy_data(0.0, 50, 1.0, 1e-2, 2);
    const auto toy = make_builtin("toy");
    const auto lib = library_for(ens, toy.feature_g, kQuadratic);
    const auto est = fit_g(ens, toy.feature_g, lib, Matrix::Identity(1, 1));
    const Vector c = monomial_fit(est, 0, {[](double, double y) { return y; }, [](double x, double) { return x * x; }});
    CHECK(c[0] == doctest::Approx(-0.8).epsilon(1e-6));
    CHECK(c[1] == doctest::Approx(0.2).epsilon(1e-6));
}

TEST_CASE("a constant drift is recovered exactly") {
    ModelSystem m = make_builtin("toy", {{"sigma", 0.0}});
    m.drift_f = [](const Vector &) { return Vector::Constant(1, 0.7); };
    m.drift_g = [](const Vector &) { return Vector::Constant(1, -1.3); };
    SimulationConfig c;
    c.T = 1.0;
    c.dt = 0.01;
    c.M = 20;
    c.seed = 4;
    c.initial = InitialDistribution::uniform(2);
    const auto ens = simulate_ensemble(m, c);
    const auto lib = library_for(ens, m.feature_f, kQuadratic);
    const auto f = fit_f(ens, m.feature_f, lib);
    const auto g = fit_g(ens, m.feature_g, lib, Matrix::Identity(1, 1));
    oracle::Gen gen(4);
    for (int i = 0; i < 100; ++i) {
        Vector p(2);
        p << gen.uniform(0, 1.5), gen.uniform(-1.3, 1);
        CHECK(std::abs(f(p)[0] - 0.7) <= 1e-10);
        CHECK(std::abs(g(p)[0] + 1.3) <= 1e-10);
    }
}

TEST_CASE("residuals of the fit are orthogonal to the basis") {
    const auto ens = toy_data(0.1, 100, 1.0, 1e-2, 3);
    const auto toy = make_builtin("toy");
    const auto lib = library_for(ens, toy.feature_g, kQuadratic);
    const auto est = fit_g(ens, toy.feature_g, lib, Matrix::Identity(1, 1));
    const auto ne = drift_normal_equations(ens, toy.feature_g, lib, true);
    CHECK(ne.gradient(est.coefficients).cwiseAbs().maxCoeff() <= 1e-9);

    const double best = drift_g_loss(ens, toy.feature_g, est, Matrix::Identity(1, 1));
    DriftEstimate moved = est;
    moved.coefficients.array() += 1e-2;
    CHECK(drift_g_loss(ens, toy.feature_g, moved, Matrix::Identity(1, 1)) > best);

    const auto f = fit_f(ens, toy.feature_f, lib);
    DriftEstimate f_moved = f;
    f_moved.coefficients(0, 0) += 1e-2;
    CHECK(drift_f_loss(ens, toy.feature_f, f_moved) > drift_f_loss(ens, toy.feature_f, f));
}

TEST_CASE("property: scaling the fit_g weight leaves the estimate unchanged") {
    const auto ens = toy_data(0.1, 60, 1.0, 1e-2, 5);
    const auto toy = make_builtin("toy");
    const auto lib = library_for(ens, toy.feature_g, kQuadratic);
    const auto a = fit_g(ens, toy.feature_g, lib, Matrix::Identity(1, 1));
    oracle::Gen gen(5);
    for (int trial = 0; trial < 10; ++trial) {
        const double s = std::exp(gen.uniform(-6, 6));
        const auto b = fit_g(ens, toy.feature_g, lib, s * Matrix::Identity(1, 1));
        REQUIRE((b.coefficients - a.coefficients).norm() <= 1e-10 * std::max(1.0, a.coefficients.norm()));
    }
}

TEST_CASE("a full weight matrix whitens the outputs without changing a separable fit") {
    const auto hh = make_builtin("henon_heiles");
    SimulationConfig c;
    c.T = 1.0;
    c.dt = 1e-2;
    c.M = 40;
    c.seed = 6;
    c.initial = InitialDistribution::uniform(4);
    const auto ens = simulate_ensemble(hh, c);
    const auto lib = library_for(ens, hh.feature_g, kQuadratic);
    Matrix w(2, 2);
    w << 2.0, 0.5, 0.5, 1.0;
    // Both outputs share one design, so the weighted minimizer is the
    // per-output least-squares solution for any SPD weight.
    const auto a = fit_g(ens, hh.feature_g, lib, Matrix::Identity(2, 2));
    const auto b = fit_g(ens, hh.feature_g, lib, w);
    CHECK((a.coefficients - b.coefficients).norm() <= 1e-9 * a.coefficients.norm());
}

TEST_CASE("invalid weights") {
    const auto ens = toy_data(0.1, 5, 0.1, 1e-2, 7);
    const auto toy = make_builtin("toy");
    const auto lib = library_for(ens, toy.feature_g, kQuadratic);
    CHECK_THROWS_AS(fit_g(ens, toy.feature_g, lib, Matrix::Constant(1, 1, -1.0)), NumericalError);
    CHECK_THROWS_AS(fit_g(ens, toy.feature_g, lib, Matrix::Identity(2, 2)), ContractViolation);
    BasisLibrary wrong({BasisSpec1D::uniform(BasisFamily::bspline, 2, 1, 0, 1)});
    CHECK_THROWS_AS(fit_f(ens, toy.feature_f, wrong), ContractViolation);
}

TEST_CASE("an over-resolved library is ill-conditioned without regularization") {
    const auto ens = toy_data(0.1, 2, 0.1, 1e-2, 8);
    const auto toy = make_builtin("toy");
    Regularization none;
    none.kind = Regularization::Kind::none;
    BasisLibrary big({BasisSpec1D::uniform(BasisFamily::bspline, 2, 12, -5.0, 5.0),
                      BasisSpec1D::uniform(BasisFamily::bspline, 2, 12, -5.0, 5.0)});
    CHECK_THROWS_AS(fit_g(ens, toy.feature_g, big, Matrix::Identity(1, 1), none), IllConditionedError);
    const auto est = fit_g(ens, toy.feature_g, big, Matrix::Identity(1, 1));
    CHECK(est.coefficients.allFinite());
    Regularization ridge;
    ridge.kind = Regularization::Kind::ridge;
    ridge.strength = 1e-6;
    CHECK(fit_g(ens, toy.feature_g, big, Matrix::Identity(1, 1), ridge).coefficients.allFinite());
}

TEST_CASE("more trajectories give a better y-drift in most seeds") {
    const auto toy = make_builtin("toy");
    const auto probe = toy_data(0.0, 50, 1.0, 1e-2, 999);
    int better = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto small = toy_data(0.1, 50, 1.0, 1e-2, 100 + seed);
        const auto large = toy_data(0.1, 2000, 1.0, 1e-2, 200 + seed);
        const auto e_small = fit_g(small, toy.feature_g, library_for(small, toy.feature_g, kQuadratic), Matrix::Identity(1, 1));
        const auto e_large = fit_g(large, toy.feature_g, library_for(large, toy.feature_g, kQuadratic), Matrix::Identity(1, 1));
        if (l2_error_g(e_large, probe) < l2_error_g(e_small, probe)) ++better;
    }
    CHECK(better >= 4);
}

TEST_CASE("fits do not depend on the thread count") {
    const auto ens = toy_data(0.1, 130, 0.5, 1e-2, 9);
    const auto toy = make_builtin("toy");
    const auto lib = library_for(ens, toy.feature_g, kQuadratic);
    const auto a = fit_g(ens, toy.feature_g, lib, Matrix::Identity(1, 1), {}, 1);
    const auto b = fit_g(ens, toy.feature_g, lib, Matrix::Identity(1, 1), {}, 5);
    CHECK(std::memcmp(a.coefficients.data(), b.coefficients.data(), sizeof(double) * a.coefficients.size()) == 0);
}

TEST_CASE("drift estimate JSON round trip") {
    const auto ens = toy_data(0.1, 10, 0.5, 1e-2, 10);
    const auto toy = make_builtin("toy");
    const auto est = fit_f(ens, toy.feature_f, library_for(ens, toy.feature_f, kQuadratic));
    const auto back = DriftEstimate::from_json(nlohmann::json::parse(est.to_json().dump(17)));
    CHECK(back.output_dim == 1);
    Vector p(2);
    p << 0.3, 0.6;
    CHECK(back(p)[0] == doctest::Approx(est(p)[0]).epsilon(1e-15));
    auto j = est.to_json();
    j["coefficients"].erase(0);
    CHECK_THROWS_AS(DriftEstimate::from_json(j), ContractViolation);
}
