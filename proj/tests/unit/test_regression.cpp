#include "msde/regression.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <cstring>

using namespace msde;

namespace {

struct Problem {
    BasisLibrary lib;
    Matrix design;
    Matrix targets;
    Vector weights;
};

Problem random_problem(oracle::Gen &gen, std::size_t rows, std::size_t outputs) {
    Problem p;
    p.lib = BasisLibrary({BasisSpec1D::uniform(BasisFamily::bspline, 2, gen.index(1, 4), 0.0, 1.0),
                          BasisSpec1D::uniform(BasisFamily::bspline, 1, gen.index(1, 3), -1.0, 1.0)});
    Matrix pts(static_cast<Eigen::Index>(rows), 2);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) pts.row(i) << gen.uniform(0, 1), gen.uniform(-1, 1);
    p.design = design_matrix(p.lib, pts);
    p.targets = gen.cloud(rows, outputs);
    p.weights.resize(static_cast<Eigen::Index>(rows));
    for (Eigen::Index i = 0; i < p.weights.size(); ++i) p.weights[i] = gen.uniform(0.1, 2.0);
    return p;
}

NormalEquations accumulate(const Problem &p, double weight_scale = 1.0) {
    NormalEquations ne(p.lib.size(), static_cast<std::size_t>(p.targets.cols()));
    for (Eigen::Index i = 0; i < p.design.rows(); ++i) {
        std::vector<BasisEntry> phi;
        for (Eigen::Index k = 0; k < p.design.cols(); ++k) {
            if (p.design(i, k) != 0.0) phi.push_back({static_cast<std::size_t>(k), p.design(i, k)});
        }
        const Vector y = p.targets.row(i).transpose();
        ne.add(phi, {y.data(), static_cast<std::size_t>(y.size())}, weight_scale * p.weights[i]);
    }
    return ne;
}

double rel_diff(const Matrix &a, const Matrix &b) { return (a - b).norm() / std::max(1.0, b.norm()); }

Regularization kind(Regularization::Kind k, double strength = 1e-10) {
    Regularization r;
    r.kind = k;
    r.strength = strength;
    return r;
}

}  // namespace

TEST_CASE("property: sparse accumulation plus solve matches a dense QR oracle") {
    oracle::Gen gen(5);
    for (int trial = 0; trial < 30; ++trial) {
        const auto p = random_problem(gen, 400, gen.index(1, 3));
        const auto ne = accumulate(p);
        const Matrix expected = oracle::dense_least_squares(p.design, p.targets, p.weights);
        REQUIRE(rel_diff(ne.solve(kind(Regularization::Kind::none)), expected) <= 1e-9);
        REQUIRE(rel_diff(ne.solve(kind(Regularization::Kind::truncated_svd)), expected) <= 1e-9);
    }
}

TEST_CASE("dense rows accumulate like sparse rows") {
    oracle::Gen gen(6);
    const auto p = random_problem(gen, 100, 2);
    const auto sparse = accumulate(p);
    NormalEquations dense(p.lib.size(), 2);
    for (Eigen::Index i = 0; i < p.design.rows(); ++i) {
        const Vector y = p.targets.row(i).transpose();
        dense.add_dense(p.design.row(i).transpose(), {y.data(), 2}, p.weights[i]);
    }
    CHECK((dense.gram() - sparse.gram()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((dense.moments() - sparse.moments()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(dense.rows() == doctest::Approx(sparse.rows()));
}

TEST_CASE("property: the gradient vanishes at the solution") {
    oracle::Gen gen(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = random_problem(gen, 300, 2);
        const auto ne = accumulate(p);
        const Matrix coef = ne.solve({});
        REQUIRE(ne.gradient(coef).cwiseAbs().maxCoeff() <= 1e-9);
        // Any perturbation increases the loss.
        const Matrix other = coef + 1e-3 * gen.cloud(static_cast<std::size_t>(coef.rows()), 2);
        REQUIRE(ne.loss(other).sum() > ne.loss(coef).sum());
    }
}

TEST_CASE("loss equals the weighted mean squared residual") {
    oracle::Gen gen(8);
    const auto p = random_problem(gen, 200, 1);
    const auto ne = accumulate(p);
    const Matrix c = gen.cloud(p.lib.size(), 1);
    const Vector r = p.design * c - p.targets;
    const double expected = (p.weights.array() * r.array().square()).sum() / p.weights.sum();
    CHECK(ne.loss(c)[0] == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("property: a uniform rescaling of the row weights leaves the solution unchanged") {
    oracle::Gen gen(9);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = random_problem(gen, 200, 2);
        const double scale = std::exp(gen.uniform(-5, 5));
        const Matrix a = accumulate(p).solve({});
        const Matrix b = accumulate(p, scale).solve({});
        REQUIRE(rel_diff(b, a) <= 1e-10);
    }
}

TEST_CASE("constant targets are recovered by a partition-of-unity basis") {
    oracle::Gen gen(10);
    auto p = random_problem(gen, 500, 1);
    p.targets.setConstant(2.5);
    const auto ne = accumulate(p);
    const Matrix c = ne.solve({});
    CHECK(((p.design * c).array() - 2.5).abs().maxCoeff() <= 1e-10);
}

TEST_CASE("unsupported basis functions") {
    BasisLibrary lib({BasisSpec1D::uniform(BasisFamily::bspline, 0, 4, 0.0, 1.0)});
    NormalEquations ne(4, 1);
    for (double x : {0.1, 0.2, 0.6, 0.8}) {  // nothing in [0.25, 0.5)
        std::vector<BasisEntry> phi;
        lib.eval_sparse({&x, 1}, phi);
        const double y = 3.0 * x;
        ne.add(phi, {&y, 1});
    }
    CHECK_THROWS_AS(ne.solve(kind(Regularization::Kind::none)), IllConditionedError);
    const Matrix c = ne.solve(kind(Regularization::Kind::truncated_svd));
    CHECK(c(1, 0) == 0.0);
    CHECK(c(0, 0) == doctest::Approx(0.45));
    const Matrix r = ne.solve(kind(Regularization::Kind::ridge, 1e-6));
    CHECK(std::abs(r(1, 0)) < 1e-12);
    CHECK(r(3, 0) == doctest::Approx(2.4).epsilon(1e-5));

    NormalEquations empty(4, 1);
    CHECK_THROWS_AS(empty.solve({}), IllConditionedError);
}

TEST_CASE("ridge matches the closed form") {
    oracle::Gen gen(11);
    const auto p = random_problem(gen, 100, 2);
    const auto ne = accumulate(p);
    const double lambda = 0.3;
    const Matrix g = ne.gram() / ne.rows();
    const Matrix b = ne.moments() / ne.rows();
    const Matrix expected = (g + lambda * Matrix::Identity(g.rows(), g.cols())).ldlt().solve(b);
    CHECK(rel_diff(ne.solve(kind(Regularization::Kind::ridge, lambda)), expected) <= 1e-10);
}

TEST_CASE("the coefficient radius is respected") {
    oracle::Gen gen(12);
    auto p = random_problem(gen, 200, 1);
    p.targets *= 100.0;
    const auto ne = accumulate(p);
    Regularization reg;
    const double free_norm = ne.solve(reg).norm();
    reg.coefficient_radius = 0.25 * free_norm;
    const Matrix c = ne.solve(reg);
    CHECK(c.norm() <= 0.25 * free_norm * (1 + 1e-9));
    CHECK(c.norm() >= 0.25 * free_norm * (1 - 1e-6));
    reg.coefficient_radius = 2.0 * free_norm;
    CHECK(rel_diff(ne.solve(reg), ne.solve({})) <= 1e-14);
}

TEST_CASE("mixing outputs commutes with solving") {
    oracle::Gen gen(13);
    const auto p = random_problem(gen, 300, 2);
    const auto ne = accumulate(p);
    Matrix r(2, 2);
    r << 1.5, 0.2, -0.3, 0.7;
    CHECK(rel_diff(ne.with_outputs_mixed(r).solve({}), ne.solve({}) * r) <= 1e-10);
    CHECK_THROWS_AS(ne.with_outputs_mixed(Matrix::Identity(3, 3)), ContractViolation);
}

TEST_CASE("ordered accumulation is bit-identical for any thread count") {
    oracle::Gen gen(14);
    const auto p = random_problem(gen, 997, 2);
    auto run = [&](std::size_t threads) {
        return accumulate_ordered(p.lib.size(), 2, static_cast<std::size_t>(p.design.rows()), threads,
                                  [&](std::size_t i, NormalEquations &acc) {
                                      const auto row = static_cast<Eigen::Index>(i);
                                      const Vector y = p.targets.row(row).transpose();
                                      acc.add_dense(p.design.row(row).transpose(), {y.data(), 2}, p.weights[row]);
                                  });
    };
    const auto one = run(1);
    for (std::size_t t : {2, 3, 8}) {
        const auto other = run(t);
        REQUIRE(std::memcmp(one.gram().data(), other.gram().data(), sizeof(double) * one.gram().size()) == 0);
        REQUIRE(std::memcmp(one.moments().data(), other.moments().data(), sizeof(double) * one.moments().size()) == 0);
    }
}

TEST_CASE("regularization JSON") {
    auto r = Regularization::from_json(nlohmann::json{{"kind", "ridge"}});
    CHECK(r.kind == Regularization::Kind::ridge);
    CHECK(r.strength == 1e-8);
    r = Regularization::from_json(Regularization{}.to_json());
    CHECK(r.kind == Regularization::Kind::truncated_svd);
    CHECK(r.strength == 1e-10);
    CHECK_THROWS_AS(Regularization::from_json(nlohmann::json{{"kind", "lasso"}}), ConfigError);
    CHECK_THROWS_AS(Regularization::from_json(nlohmann::json{{"kind", "ridge"}, {"strength", -1}}), ConfigError);
}
