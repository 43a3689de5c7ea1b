#include "msde/models.hpp"

#include "msde/io.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace msde {

namespace {

using nlohmann::json;

// Reads parameters with defaults and rejects keys the model does not know.
class Params {
public:
    Params(const std::string &model, const json &params, std::set<std::string> known)
        : model_(model), params_(params.is_null() ? json::object() : params) {
        if (!params_.is_object()) throw ConfigError("model '" + model + "': params must be an object");
        for (const auto &item : params_.items()) {
            if (!known.count(item.key())) {
                throw ConfigError("model '" + model + "': unknown parameter '" + item.key() + "'");
            }
        }
    }

    double number(const std::string &key, double fallback) const {
        if (!params_.contains(key)) return fallback;
        const auto &v = params_.at(key);
        if (!v.is_number()) throw ConfigError("model '" + model_ + "': parameter '" + key + "' must be a number");
        return v.get<double>();
    }

    std::size_t count(const std::string &key, std::size_t fallback) const {
        if (!params_.contains(key)) return fallback;
        const auto &v = params_.at(key);
        if (!v.is_number_integer() || v.get<std::int64_t>() <= 0) {
            throw ConfigError("model '" + model_ + "': parameter '" + key + "' must be a positive integer");
        }
        return v.get<std::size_t>();
    }

private:
    std::string model_;
    json params_;
};

MatrixFn constant_sigma(Matrix sigma) {
    return [s = std::move(sigma)](const Vector &) { return s; };
}

Vector vec2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

ModelSystem toy(const json &p) {
    const Params pr("toy", p, {"sigma"});
    const double sigma = pr.number("sigma", 0.1);
    ModelSystem m;
    m.name = "toy";
    m.dims = make_dimensions(1, 1, 2, 2);
    m.feature_f = identity_features(2);
    m.feature_g = identity_features(2);
    m.drift_f = [](const Vector &z) { return Vector::Constant(1, 0.4 * z[0] - 0.1 * z[0] * z[1]); };
    m.drift_g = [](const Vector &z) { return Vector::Constant(1, -0.8 * z[1] + 0.2 * z[0] * z[0]); };
    m.diffusion_sigma_y = constant_sigma(Matrix::Constant(1, 1, sigma));
    return m;
}

ModelSystem van_der_pol(const json &p) {
    const Params pr("van_der_pol", p, {"mu", "sigma"});
    const double mu = pr.number("mu", 1.0);
    const double sigma = pr.number("sigma", 0.1);
    ModelSystem m;
    m.name = "van_der_pol";
    m.dims = make_dimensions(1, 1, 2, 2);
    m.feature_f = identity_features(2);
    m.feature_g = identity_features(2);
    m.drift_f = [](const Vector &z) { return Vector::Constant(1, z[1]); };
    m.drift_g = [mu](const Vector &z) { return Vector::Constant(1, mu * (1.0 - z[0] * z[0]) * z[1] - z[0]); };
    m.diffusion_sigma_y = constant_sigma(Matrix::Constant(1, 1, sigma));
    return m;
}

// State (x, y, theta). f reads the heading only, g the position only.
ModelSystem vicsek(const json &p) {
    const Params pr("vicsek", p, {"v", "k", "sigma"});
    const double v = pr.number("v", 0.03);
    const double k = pr.number("k", 0.05);
    const double sigma = pr.number("sigma", 0.08);
    ModelSystem m;
    m.name = "vicsek";
    m.dims = make_dimensions(2, 1, 1, 2);
    m.feature_f = coordinate_features({2}, {true});
    m.feature_g = coordinate_features({0, 1});
    m.drift_f = [v](const Vector &th) { return vec2(v * std::cos(th[0]), v * std::sin(th[0])); };
    m.drift_g = [k](const Vector &q) { return Vector::Constant(1, k * (q[0] - q[1])); };
    m.diffusion_sigma_y = constant_sigma(Matrix::Constant(1, 1, sigma));
    return m;
}

// State (x, y, p_x, p_y). f reads the momenta, g the positions.
ModelSystem henon_heiles(const json &p) {
    const Params pr("henon_heiles", p, {"lambda", "sigma1", "sigma2"});
    const double lam = pr.number("lambda", 1.0);
    const double s1 = pr.number("sigma1", 0.07);
    const double s2 = pr.number("sigma2", 0.05);
    ModelSystem m;
    m.name = "henon_heiles";
    m.dims = make_dimensions(2, 2, 2, 2);
    m.feature_f = coordinate_features({2, 3});
    m.feature_g = coordinate_features({0, 1});
    m.drift_f = [](const Vector &pm) { return vec2(pm[0], pm[1]); };
    m.drift_g = [lam](const Vector &q) {
        const double x = q[0], y = q[1];
        return vec2(-x - 2.0 * lam * x * y, -y - lam * (x * x - y * y));
    };
    m.diffusion_sigma_y = constant_sigma(vec2(s1, s2).asDiagonal());
    return m;
}

std::vector<double> pair_distances_at(const Vector &z, std::size_t N, std::size_t d) {
    std::vector<double> r(N * N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = i + 1; j < N; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = z[static_cast<Eigen::Index>(j * d + c)] - z[static_cast<Eigen::Index>(i * d + c)];
                s += diff * diff;
            }
            r[i * N + j] = r[j * N + i] = std::sqrt(s);
        }
    }
    return r;
}

}  // namespace

std::function<double(double)> power_kernel(double exponent) {
    return [exponent](double r) { return std::pow(1.0 + r * r, exponent); };
}

CuckerSmaleSpec CuckerSmaleSpec::from_params(const json &p) {
    const Params pr("cucker_smale", p, {"N", "d", "sigma", "kernel_exponent"});
    CuckerSmaleSpec spec;
    spec.N = pr.count("N", 20);
    spec.d = pr.count("d", 2);
    spec.sigma = pr.number("sigma", 0.1);
    spec.kernel_phi = power_kernel(pr.number("kernel_exponent", -0.25));
    if (spec.N < 2) throw ConfigError("model 'cucker_smale': N must be at least 2");
    return spec;
}

Matrix cs_positions(const Vector &z, std::size_t N, std::size_t d) {
    if (static_cast<std::size_t>(z.size()) != 2 * N * d) throw ContractViolation("cucker_smale: state has wrong length");
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        z.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
}

Matrix cs_velocities(const Vector &z, std::size_t N, std::size_t d) {
    if (static_cast<std::size_t>(z.size()) != 2 * N * d) throw ContractViolation("cucker_smale: state has wrong length");
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        z.data() + N * d, static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
}

Matrix cs_drift(const CuckerSmaleSpec &spec, const Matrix &positions, const Matrix &velocities) {
    const auto N = positions.rows();
    if (velocities.rows() != N || velocities.cols() != positions.cols()) {
        throw ContractViolation("cs_drift: positions and velocities differ in shape");
    }
    Matrix out = Matrix::Zero(N, positions.cols());
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index j = 0; j < N; ++j) {
            if (j == i) continue;
            const double r = (positions.row(j) - positions.row(i)).norm();
            out.row(i) += spec.kernel_phi(r) * (velocities.row(j) - velocities.row(i));
        }
    }
    return out / static_cast<double>(N);
}

ModelSystem make_cucker_smale(const CuckerSmaleSpec &spec) {
    const std::size_t n = spec.N * spec.d;
    ModelSystem m;
    m.name = "cucker_smale";
    m.dims = make_dimensions(n, n, n, 2 * n);
    std::vector<std::size_t> vel(n);
    for (std::size_t k = 0; k < n; ++k) vel[k] = n + k;
    m.feature_f = coordinate_features(vel);
    m.feature_g = identity_features(2 * n);
    m.drift_f = [](const Vector &v) { return v; };
    m.drift_g = [spec](const Vector &z) {
        const Matrix a = cs_drift(spec, cs_positions(z, spec.N, spec.d), cs_velocities(z, spec.N, spec.d));
        Vector out(a.size());
        for (Eigen::Index i = 0; i < a.rows(); ++i) out.segment(i * a.cols(), a.cols()) = a.row(i).transpose();
        return out;
    };
    m.diffusion_sigma_y = constant_sigma(Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) * spec.sigma);
    return m;
}

ModelSystem make_builtin(const std::string &name, const json &params) {
    ModelSystem m;
    if (name == "toy") {
        m = toy(params);
    } else if (name == "van_der_pol") {
        m = van_der_pol(params);
    } else if (name == "vicsek") {
        m = vicsek(params);
    } else if (name == "henon_heiles") {
        m = henon_heiles(params);
    } else if (name == "cucker_smale") {
        m = make_cucker_smale(CuckerSmaleSpec::from_params(params));
    } else {
        throw ConfigError("unknown model '" + name + "'");
    }
    m.validate();
    return m;
}

std::vector<std::string> builtin_names() { return {"toy", "van_der_pol", "vicsek", "henon_heiles", "cucker_smale"}; }

InitialDistribution default_initial(const std::string &name, const ModelSystem &model) {
    auto init = InitialDistribution::uniform(model.dims.total, 0.0, 1.0);
    if (name == "vicsek") {
        init.kind = InitialKind::uniform_angle;
        init.angle_coordinates = {2};
    }
    return init;
}

double KernelEstimate::operator()(double r) const {
    std::vector<BasisEntry> phi;
    library.eval_sparse({&r, 1}, phi);
    double s = 0.0;
    for (const auto &e : phi) s += e.value * coefficients[static_cast<Eigen::Index>(e.index)];
    return s;
}

json KernelEstimate::to_json() const {
    return {{"basis", library.to_json()},
            {"coefficients", std::vector<double>(coefficients.data(), coefficients.data() + coefficients.size())}};
}

KernelEstimate KernelEstimate::from_json(const json &j) {
    KernelEstimate est;
    est.library = BasisLibrary::from_json(j.at("basis"));
    if (est.library.dims_in() != 1) throw ContractViolation("kernel estimate: basis must be one-dimensional");
    const auto c = j.at("coefficients").get<std::vector<double>>();
    if (c.size() != est.library.size()) throw ContractViolation("kernel estimate: coefficient count != basis size");
    est.coefficients = Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size()));
    return est;
}

Matrix cs_design_block(const BasisLibrary &lib, const Vector &z, std::size_t N, std::size_t d) {
    if (lib.dims_in() != 1) throw ContractViolation("cs_design_block: kernel basis must be one-dimensional");
    if (static_cast<std::size_t>(z.size()) != 2 * N * d) throw ContractViolation("cs_design_block: state has wrong length");
    const auto r = pair_distances_at(z, N, d);
    Matrix a = Matrix::Zero(static_cast<Eigen::Index>(N * d), static_cast<Eigen::Index>(lib.size()));
    std::vector<BasisEntry> phi;
    const double inv_n = 1.0 / static_cast<double>(N);
    const std::size_t v0 = N * d;
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            if (j == i) continue;
            lib.eval_sparse({&r[i * N + j], 1}, phi);
            for (std::size_t c = 0; c < d; ++c) {
                const double dv = (z[static_cast<Eigen::Index>(v0 + j * d + c)] - z[static_cast<Eigen::Index>(v0 + i * d + c)]) * inv_n;
                for (const auto &e : phi) a(static_cast<Eigen::Index>(i * d + c), static_cast<Eigen::Index>(e.index)) += e.value * dv;
            }
        }
    }
    return a;
}

NormalEquations cs_feature_design(const TrajectoryEnsemble &ensemble, std::size_t N, std::size_t d,
                                  const BasisLibrary &lib, std::size_t threads) {
    if (ensemble.dims.total != 2 * N * d || ensemble.dims.y != N * d) {
        throw ContractViolation("cs_feature_design: ensemble dimensions do not match N and d");
    }
    if (ensemble.L < 2) throw ContractViolation("cs_feature_design: need at least two time points");
    const std::size_t v0 = N * d;
    return accumulate_ordered(lib.size(), 1, ensemble.M, threads, [&](std::size_t m, NormalEquations &acc) {
        for (std::size_t l = 0; l + 1 < ensemble.L; ++l) {
            const double dt = ensemble.step(l);
            const auto now = ensemble.state(m, l);
            const auto next = ensemble.state(m, l + 1);
            const Matrix a = cs_design_block(lib, ensemble.state_vector(m, l), N, d);
            for (std::size_t row = 0; row < N * d; ++row) {
                const double target = (next[v0 + row] - now[v0 + row]) / dt;
                acc.add_dense(a.row(static_cast<Eigen::Index>(row)).transpose(), {&target, 1}, dt);
            }
        }
    });
}

KernelEstimate fit_cs_kernel(const TrajectoryEnsemble &ensemble, std::size_t N, std::size_t d,
                             const BasisLibrary &lib, const Regularization &reg, std::size_t threads) {
    const auto ne = cs_feature_design(ensemble, N, d, lib, threads);
    KernelEstimate est;
    est.library = lib;
    est.coefficients = ne.solve(reg).col(0);
    return est;
}

std::vector<double> pairwise_distances(const TrajectoryEnsemble &ensemble, std::size_t N, std::size_t d,
                                       std::size_t stride) {
    if (ensemble.dims.total != 2 * N * d) throw ContractViolation("pairwise_distances: ensemble is not N x d agents");
    stride = std::max<std::size_t>(stride, 1);
    std::vector<double> out;
    out.reserve(ensemble.M * (ensemble.L / stride + 1) * N * (N - 1) / 2);
    for (std::size_t m = 0; m < ensemble.M; ++m) {
        for (std::size_t l = 0; l < ensemble.L; l += stride) {
            const auto z = ensemble.state(m, l);
            for (std::size_t i = 0; i < N; ++i) {
                for (std::size_t j = i + 1; j < N; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        const double diff = z[j * d + c] - z[i * d + c];
                        s += diff * diff;
                    }
                    out.push_back(std::sqrt(s));
                }
            }
        }
    }
    return out;
}

BasisLibrary cs_kernel_library(const std::vector<double> &distances, const BasisDimConfig &basis,
                               const KernelDomain &domain) {
    if (distances.empty()) throw ContractViolation("cs_kernel_library: no distance samples");
    if (!(domain.quantile > 0.0 && domain.quantile <= 1.0)) throw ConfigError("kernel domain quantile must lie in (0, 1]");
    if (basis.family == BasisFamily::trig) throw ConfigError("kernel basis cannot be trigonometric");
    std::vector<double> sorted = distances;
    const auto k = static_cast<std::size_t>(std::ceil(domain.quantile * static_cast<double>(sorted.size()))) - 1;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    const double q = sorted[k];
    if (!std::isfinite(q)) throw NumericalError("cs_kernel_library: non-finite distances");
    const double r_max = std::max(q * (1.0 + domain.padding_fraction), 1e-8);
    return BasisLibrary({BasisSpec1D::uniform(basis.family, basis.degree, basis.segments, 0.0, r_max)});
}

double kernel_relative_error(const std::function<double(double)> &phi, const KernelEstimate &est,
                             const std::vector<double> &distances) {
    const double hi = est.library.specs().front().upper();
    double err = 0.0;
    double ref = 0.0;
    for (double r : distances) {
        if (r > hi) continue;
        const double p = phi(r);
        err += (p - est(r)) * (p - est(r));
        ref += p * p;
    }
    if (!(ref > 0.0)) throw NumericalError("kernel_relative_error: reference kernel vanishes on the samples");
    return std::sqrt(err / ref);
}

void write_kernel_csv(const std::filesystem::path &path, const std::function<double(double)> &phi,
                      const KernelEstimate &est, std::size_t points) {
    const auto &spec = est.library.specs().front();
    std::ostringstream os;
    os.precision(17);
    os << "r,phi,phi_hat\n";
    for (std::size_t k = 0; k < points; ++k) {
        const double r = spec.lower() + (spec.upper() - spec.lower()) * static_cast<double>(k) /
                                            static_cast<double>(std::max<std::size_t>(points - 1, 1));
        os << r << ',' << phi(r) << ',' << est(r) << '\n';
    }
    write_file_atomic(path, os.str());
}

TrajectoryEnsemble permute_agents(const TrajectoryEnsemble &ensemble, std::size_t N, std::size_t d,
                                  const std::vector<std::size_t> &perm) {
    if (perm.size() != N || ensemble.dims.total != 2 * N * d) throw ContractViolation("permute_agents: bad permutation");
    TrajectoryEnsemble out = ensemble;
    for (std::size_t m = 0; m < ensemble.M; ++m) {
        for (std::size_t l = 0; l < ensemble.L; ++l) {
            const auto src = ensemble.state(m, l);
            auto dst = out.state(m, l);
            for (std::size_t i = 0; i < N; ++i) {
                for (std::size_t c = 0; c < d; ++c) {
                    dst[i * d + c] = src[perm[i] * d + c];
                    dst[N * d + i * d + c] = src[N * d + perm[i] * d + c];
                }
            }
            if (l + 1 < ensemble.L) {
                const auto isrc = ensemble.increment(m, l);
                auto idst = out.increment(m, l);
                for (std::size_t i = 0; i < N; ++i) {
                    for (std::size_t c = 0; c < d; ++c) idst[i * d + c] = isrc[perm[i] * d + c];
                }
            }
        }
    }
    return out;
}

}  // namespace msde
