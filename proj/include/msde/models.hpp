#pragma once

#include "msde/basis.hpp"
#include "msde/core.hpp"
#include "msde/regression.hpp"
#include "msde/simulate.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace msde {

// Built-in systems, addressable by name:
//
//   toy           dx = (0.4 x - 0.1 x y) dt,  dy = (-0.8 y + 0.2 x^2) dt + sigma dw
//   van_der_pol   dx = y dt,  dy = (mu (1 - x^2) y - x) dt + sigma dw
//   vicsek        d(x, y) = v (cos th, sin th) dt,  d th = k (x - y) dt + sigma dw
//   henon_heiles  d(x, y) = (p_x, p_y) dt,
//                 dp_x = (-x - 2 lam x y) dt + sigma1 dw1,
//                 dp_y = (-y - lam (x^2 - y^2)) dt + sigma2 dw2
//   cucker_smale  dx_i = v_i dt,  dv_i = (1/N) sum_j phi(|x_j - x_i|)(v_j - v_i) dt + sigma dw_i
//
// Missing parameters take their defaults; unknown keys are rejected.
ModelSystem make_builtin(const std::string &name, const nlohmann::json &params = nlohmann::json::object());

std::vector<std::string> builtin_names();

// Initial law used when an experiment does not specify one: Uniform(0,1) per
// coordinate, with the Vicsek heading uniform on [0, 2 pi).
InitialDistribution default_initial(const std::string &name, const ModelSystem &model);

struct CuckerSmaleSpec {
    std::size_t N = 20;
    std::size_t d = 2;
    std::function<double(double)> kernel_phi;
    double sigma = 0.1;

    static CuckerSmaleSpec from_params(const nlohmann::json &params);
};

// (1+r^2)^exponent, the default alignment kernel uses exponent -0.25.
std::function<double(double)> power_kernel(double exponent);

// Row i is (1/N) sum_{j != i} phi(|x_j - x_i|)(v_j - v_i). O(N^2 d).
Matrix cs_drift(const CuckerSmaleSpec &spec, const Matrix &positions, const Matrix &velocities);

ModelSystem make_cucker_smale(const CuckerSmaleSpec &spec);

// Agent-major views of a flat Cucker-Smale state [x_1..x_N, v_1..v_N].
Matrix cs_positions(const Vector &z, std::size_t N, std::size_t d);
Matrix cs_velocities(const Vector &z, std::size_t N, std::size_t d);

struct KernelEstimate {
    BasisLibrary library;  // one dimension, r in [0, r_max]
    Vector coefficients;

    // Clamped at the library's interval.
    double operator()(double r) const;

    nlohmann::json to_json() const;
    static KernelEstimate from_json(const nlohmann::json &j);
};

// Rows (agent i, coordinate c) of the reduced design at state z:
//   A(i d + c, k) = (1/N) sum_{j != i} B_k(|x_j - x_i|) (v_j - v_i)_c.
Matrix cs_design_block(const BasisLibrary &lib, const Vector &z, std::size_t N, std::size_t d);

// Normal equations of the reduced least-squares problem, with targets dv/dt
// and row weight dt.
NormalEquations cs_feature_design(const TrajectoryEnsemble &ensemble, std::size_t N, std::size_t d,
                                  const BasisLibrary &lib, std::size_t threads = 0);

KernelEstimate fit_cs_kernel(const TrajectoryEnsemble &ensemble, std::size_t N, std::size_t d,
                             const BasisLibrary &lib, const Regularization &reg = {}, std::size_t threads = 0);

// Pairwise distances |x_j - x_i|, i < j, over the stored states of every
// `stride`-th time point. These are samples of the measure rho_r.
std::vector<double> pairwise_distances(const TrajectoryEnsemble &ensemble, std::size_t N, std::size_t d,
                                       std::size_t stride = 1);

struct KernelDomain {
    double quantile = 0.99;
    double padding_fraction = 0.05;
};

// [0, r_max], r_max = padded quantile of the observed distances.
BasisLibrary cs_kernel_library(const std::vector<double> &distances, const BasisDimConfig &basis,
                               const KernelDomain &domain);

// Relative L2(rho_r) error over the samples that fall inside the estimate's interval.
double kernel_relative_error(const std::function<double(double)> &phi, const KernelEstimate &est,
                             const std::vector<double> &distances);

// CSV with columns r,phi,phi_hat on `points` uniform nodes of the estimate's interval.
void write_kernel_csv(const std::filesystem::path &path, const std::function<double(double)> &phi,
                      const KernelEstimate &est, std::size_t points = 201);

// Same ensemble with agent labels permuted: agent i of the output is agent perm[i] of the input.
TrajectoryEnsemble permute_agents(const TrajectoryEnsemble &ensemble, std::size_t N, std::size_t d,
                                  const std::vector<std::size_t> &perm);

}  // namespace msde
