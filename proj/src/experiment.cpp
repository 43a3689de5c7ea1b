#include "msde/experiment.hpp"

#include "msde/io.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace msde {

using nlohmann::json;

namespace {

// Runs `parse`, prefixing any configuration or JSON error with `path`.
template <typename F>
auto at_path(const std::string &path, F &&parse) -> decltype(parse()) {
    try {
        return parse();
    } catch (const json::exception &e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const ConfigError &e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const ContractViolation &e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void reject_unknown(const json &j, const std::string &path, const std::set<std::string> &known) {
    if (!j.is_object()) throw ConfigError(path + ": expected an object");
    for (const auto &item : j.items()) {
        if (!known.count(item.key())) {
            throw ConfigError((path.empty() ? "" : path + ".") + item.key() + ": unknown field");
        }
    }
}

std::vector<double> expand(const json &j, std::size_t dim, const std::string &path) {
    if (j.is_number()) return std::vector<double>(dim, j.get<double>());
    auto v = at_path(path, [&] { return j.get<std::vector<double>>(); });
    if (v.size() != dim) throw ConfigError(path + ": expected " + std::to_string(dim) + " entries");
    return v;
}

json optional_number(const std::optional<double> &v) { return v ? json(*v) : json(nullptr); }

std::string format_fixed(double v, int precision) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

std::string format_general(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

// The Cucker-Smale spec (N, d, kernel) behind an experiment's model params.
CuckerSmaleSpec cs_spec(const Experiment &exp) { return CuckerSmaleSpec::from_params(exp.config.model_params); }

Vector stacked(const Matrix &agent_rows) {
    Vector out(agent_rows.size());
    for (Eigen::Index i = 0; i < agent_rows.rows(); ++i) {
        out.segment(i * agent_rows.cols(), agent_rows.cols()) = agent_rows.row(i).transpose();
    }
    return out;
}

std::vector<std::size_t> y_indices(const SystemDimensions &dims) {
    std::vector<std::size_t> idx(dims.y);
    std::iota(idx.begin(), idx.end(), dims.x);
    return idx;
}

void write_json(const std::filesystem::path &path, const json &j) { write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const std::filesystem::path &path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception &e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// Two-column plot data: the true and fitted y-drift on a grid over its 2-D feature box.
void write_drift_grid(const std::filesystem::path &path, const ModelSystem &truth, const DriftEstimate &g,
                      std::size_t n = 41) {
    const Box box = g.library.box();
    if (box.dims() != 2) return;
    std::ostringstream os;
    os.precision(10);
    os << "feature_0,feature_1";
    for (std::size_t k = 0; k < g.output_dim; ++k) os << ",g_" << k << ",g_hat_" << k;
    os << '\n';
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            Vector p(2);
            p[0] = box.lower[0] + (box.upper[0] - box.lower[0]) * static_cast<double>(a) / static_cast<double>(n - 1);
            p[1] = box.lower[1] + (box.upper[1] - box.lower[1]) * static_cast<double>(b) / static_cast<double>(n - 1);
            const Vector t = truth.drift_g(p);
            const Vector e = g(p);
            os << p[0] << ',' << p[1];
            for (Eigen::Index k = 0; k < t.size(); ++k) os << ',' << t[k] << ',' << e[k];
            os << '\n';
        }
    }
    write_file_atomic(path, os.str());
}

void write_sample_paths(const std::filesystem::path &path, const TrajectoryEnsemble &ref, const TrajectoryEnsemble &est) {
    std::ostringstream os;
    os.precision(10);
    os << "time";
    for (std::size_t k = 0; k < ref.dims.total; ++k) os << ",state_" << k;
    for (std::size_t k = 0; k < ref.dims.total; ++k) os << ",replayed_" << k;
    os << '\n';
    for (std::size_t l = 0; l < ref.L; ++l) {
        os << ref.times[l];
        for (double v : ref.state(0, l)) os << ',' << v;
        for (double v : est.state(0, l)) os << ',' << v;
        os << '\n';
    }
    write_file_atomic(path, os.str());
}

}  // namespace

// ---------------------------------------------------------------- config

json CheckSpec::to_json() const {
    json j = {{"quantity", quantity}, {"blocking", blocking}};
    if (target) j["target"] = *target;
    if (abs_tol) j["abs_tol"] = *abs_tol;
    if (rel_tol) j["rel_tol"] = *rel_tol;
    if (max) j["max"] = *max;
    return j;
}

CheckSpec CheckSpec::from_json(const json &j) {
    reject_unknown(j, "", {"quantity", "target", "abs_tol", "rel_tol", "max", "blocking"});
    CheckSpec c;
    c.quantity = j.at("quantity").get<std::string>();
    if (j.contains("target")) c.target = j.at("target").get<double>();
    if (j.contains("abs_tol")) c.abs_tol = j.at("abs_tol").get<double>();
    if (j.contains("rel_tol")) c.rel_tol = j.at("rel_tol").get<double>();
    if (j.contains("max")) c.max = j.at("max").get<double>();
    c.blocking = j.value("blocking", true);
    if ((c.abs_tol || c.rel_tol) && !c.target) throw ConfigError("check '" + c.quantity + "': tolerance without target");
    if (!c.abs_tol && !c.rel_tol && !c.max) throw ConfigError("check '" + c.quantity + "': no bound given");
    return c;
}

json ExperimentConfig::to_json() const {
    json checks_j = json::array();
    for (const auto &c : checks) checks_j.push_back(c.to_json());
    json paper_j = json::array();
    for (const auto &p : paper) paper_j.push_back({{"quantity", p.quantity}, {"value", p.value}});
    json sim = {{"T", T}, {"dt", dt}, {"M", M}, {"seed", seed}};
    if (!initial.is_null()) sim["initial"] = initial;
    return {{"name", name},
            {"model", {{"name", model}, {"params", model_params}}},
            {"simulation", sim},
            {"basis_f", basis_f.to_json()},
            {"basis_g", basis_g.to_json()},
            {"basis_sigma", basis_sigma.to_json()},
            {"regularization", regularization.to_json()},
            {"diffusion", {{"model_class", to_string(diffusion_class)}, {"drift_compensation", drift_compensation}}},
            {"snapshot_times", snapshot_times},
            {"wasserstein",
             {{"exact_max", wasserstein.exact_max},
              {"epsilon_factor", wasserstein.epsilon_factor},
              {"max_iterations", wasserstein.max_iterations},
              {"tolerance", wasserstein.tolerance},
              {"comparison", wasserstein_comparison}}},
            {"kernel",
             {{"basis", {{"family", to_string(kernel.basis.family)}, {"degree", kernel.basis.degree}, {"segments", kernel.basis.segments}}},
              {"quantile", kernel.domain.quantile},
              {"padding_fraction", kernel.domain.padding_fraction},
              {"distance_stride", kernel.distance_stride}}},
            {"output_dir", output_dir},
            {"report_precision", report_precision},
            {"threads", threads},
            {"checks", checks_j},
            {"paper", paper_j},
            {"paper_factor", paper_factor}};
}

ExperimentConfig ExperimentConfig::from_json(const json &j) {
    reject_unknown(j, "", {"name", "model", "simulation", "basis_f", "basis_g", "basis_sigma", "regularization",
                           "diffusion", "snapshot_times", "wasserstein", "kernel", "output_dir", "report_precision",
                           "threads", "checks", "paper", "paper_factor"});
    ExperimentConfig c;
    c.name = at_path("name", [&] { return j.at("name").get<std::string>(); });

    at_path("model", [&] {
        const auto &m = j.at("model");
        reject_unknown(m, "model", {"name", "params"});
        c.model = m.at("name").get<std::string>();
        if (m.contains("params")) c.model_params = m.at("params");
        return 0;
    });

    at_path("simulation", [&] {
        const auto &s = j.at("simulation");
        reject_unknown(s, "simulation", {"T", "dt", "M", "seed", "initial"});
        c.T = at_path("simulation.T", [&] { return s.at("T").get<double>(); });
        c.dt = at_path("simulation.dt", [&] { return s.at("dt").get<double>(); });
        c.M = at_path("simulation.M", [&] { return s.at("M").get<std::size_t>(); });
        c.seed = at_path("simulation.seed", [&] { return s.at("seed").get<std::uint64_t>(); });
        if (s.contains("initial")) c.initial = s.at("initial");
        if (!(c.T > 0.0)) throw ConfigError("simulation.T: must be positive");
        if (!(c.dt > 0.0)) throw ConfigError("simulation.dt: must be positive");
        if (c.M == 0) throw ConfigError("simulation.M: must be positive");
        return 0;
    });

    if (j.contains("basis_f")) c.basis_f = at_path("basis_f", [&] { return BasisConfig::from_json(j.at("basis_f")); });
    if (j.contains("basis_g")) c.basis_g = at_path("basis_g", [&] { return BasisConfig::from_json(j.at("basis_g")); });
    c.basis_sigma = j.contains("basis_sigma") ? at_path("basis_sigma", [&] { return BasisConfig::from_json(j.at("basis_sigma")); })
                                              : c.basis_g;
    if (j.contains("regularization")) {
        c.regularization = at_path("regularization", [&] { return Regularization::from_json(j.at("regularization")); });
    }
    if (j.contains("diffusion")) {
        at_path("diffusion", [&] {
            const auto &d = j.at("diffusion");
            reject_unknown(d, "diffusion", {"model_class", "drift_compensation"});
            c.diffusion_class = diffusion_class_from_string(d.value("model_class", std::string("constant_matrix")));
            c.drift_compensation = d.value("drift_compensation", true);
            return 0;
        });
    }
    if (j.contains("snapshot_times")) {
        c.snapshot_times = at_path("snapshot_times", [&] { return j.at("snapshot_times").get<std::vector<double>>(); });
    }
    if (j.contains("wasserstein")) {
        at_path("wasserstein", [&] {
            const auto &w = j.at("wasserstein");
            reject_unknown(w, "wasserstein", {"exact_max", "epsilon_factor", "max_iterations", "tolerance", "comparison"});
            c.wasserstein.exact_max = w.value("exact_max", c.wasserstein.exact_max);
            c.wasserstein.epsilon_factor = w.value("epsilon_factor", c.wasserstein.epsilon_factor);
            c.wasserstein.max_iterations = w.value("max_iterations", c.wasserstein.max_iterations);
            c.wasserstein.tolerance = w.value("tolerance", c.wasserstein.tolerance);
            c.wasserstein_comparison = w.value("comparison", c.wasserstein_comparison);
            if (c.wasserstein_comparison != "replay" && c.wasserstein_comparison != "independent") {
                throw ConfigError("comparison must be 'replay' or 'independent'");
            }
            return 0;
        });
    }
    if (j.contains("kernel")) {
        at_path("kernel", [&] {
            const auto &k = j.at("kernel");
            reject_unknown(k, "kernel", {"basis", "quantile", "padding_fraction", "distance_stride"});
            if (k.contains("basis")) {
                const auto &b = k.at("basis");
                c.kernel.basis.family = basis_family_from_string(b.value("family", std::string("bspline")));
                c.kernel.basis.degree = b.value("degree", c.kernel.basis.degree);
                c.kernel.basis.segments = b.value("segments", c.kernel.basis.segments);
            }
            c.kernel.domain.quantile = k.value("quantile", c.kernel.domain.quantile);
            c.kernel.domain.padding_fraction = k.value("padding_fraction", c.kernel.domain.padding_fraction);
            c.kernel.distance_stride = k.value("distance_stride", c.kernel.distance_stride);
            return 0;
        });
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.report_precision = at_path("report_precision", [&] { return j.value("report_precision", 4); });
    c.threads = at_path("threads", [&] { return j.value("threads", std::size_t{0}); });
    if (j.contains("checks")) {
        const auto &arr = j.at("checks");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            c.checks.push_back(at_path("checks[" + std::to_string(i) + "]", [&] { return CheckSpec::from_json(arr[i]); }));
        }
    }
    if (j.contains("paper")) {
        const auto &arr = j.at("paper");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            c.paper.push_back(at_path("paper[" + std::to_string(i) + "]", [&] {
                reject_unknown(arr[i], "", {"quantity", "value"});
                return PaperValue{arr[i].at("quantity").get<std::string>(), arr[i].at("value").get<double>()};
            }));
        }
    }
    c.paper_factor = j.value("paper_factor", c.paper_factor);
    return c;
}

ExperimentConfig parse_config(const std::string &text, const std::string &origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception &e) {
        throw ConfigError(origin + ": " + e.what());
    }
    try {
        return ExperimentConfig::from_json(j);
    } catch (const ConfigError &e) {
        throw ConfigError(origin + ": " + e.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse_config(read_file(path), path.string());
}

ExperimentConfig bundled_config(const std::string &model, const std::string &scale) {
    const std::string name = model + "_" + scale;
    const auto text = bundled_config_text(name);
    if (!text) throw ConfigError("no bundled config named '" + name + "'");
    return parse_config(*text, name);
}

ExperimentConfig resolve_config(const std::string &path_or_name) {
    if (std::filesystem::exists(path_or_name)) return load_config(path_or_name);
    if (const auto text = bundled_config_text(path_or_name)) return parse_config(*text, path_or_name);
    throw ConfigError("config '" + path_or_name + "' is neither a file nor a bundled config");
}

InitialDistribution initial_from_json(const json &j, const std::string &model, const ModelSystem &system) {
    if (j.is_null()) return default_initial(model, system);
    return at_path("simulation.initial", [&] {
        reject_unknown(j, "simulation.initial", {"kind", "lower", "upper", "angle_coordinates"});
        InitialDistribution init;
        init.kind = initial_kind_from_string(j.value("kind", std::string("uniform_box")));
        if (init.kind == InitialKind::custom_sampler) throw ConfigError("custom samplers cannot be configured from a file");
        const std::size_t D = system.dims.total;
        init.lower = expand(j.contains("lower") ? j.at("lower") : json(0.0), D, "simulation.initial.lower");
        init.upper = expand(j.contains("upper") ? j.at("upper") : json(1.0), D, "simulation.initial.upper");
        if (j.contains("angle_coordinates")) init.angle_coordinates = j.at("angle_coordinates").get<std::vector<std::size_t>>();
        for (auto a : init.angle_coordinates) {
            if (a >= D) throw ConfigError("angle coordinate out of range");
        }
        return init;
    });
}

json initial_to_json(const InitialDistribution &init) {
    json j = {{"kind", to_string(init.kind)}, {"lower", init.lower}, {"upper", init.upper}};
    if (!init.angle_coordinates.empty()) j["angle_coordinates"] = init.angle_coordinates;
    return j;
}

// ---------------------------------------------------------------- pipeline

Experiment::Experiment(ExperimentConfig cfg) : config(std::move(cfg)) {
    truth = at_path("model", [&] { return make_builtin(config.model, config.model_params); });
    simulation.T = config.T;
    simulation.dt = config.dt;
    simulation.M = config.M;
    simulation.seed = config.seed;
    simulation.initial = initial_from_json(config.initial, config.model, truth);
    at_path("simulation", [&] { return simulation.time_points(); });
    for (double t : config.snapshot_times) {
        if (t < 0.0 || t > config.T + 0.5 * config.dt) {
            throw ConfigError("snapshot_times: " + std::to_string(t) + " lies outside [0, T]");
        }
    }
}

TrajectoryEnsemble run_simulation(const Experiment &exp) {
    return simulate_ensemble(exp.truth, exp.simulation, exp.threads());
}

FitResult fit_experiment(const Experiment &exp, const TrajectoryEnsemble &ens) {
    const auto &cfg = exp.config;
    const auto &truth = exp.truth;
    if (!(ens.dims == truth.dims)) throw ContractViolation("fit: ensemble dimensions do not match the model");
    FitResult out;
    const Matrix identity = Matrix::Identity(static_cast<Eigen::Index>(ens.dims.y), static_cast<Eigen::Index>(ens.dims.y));

    // First-pass y-drift (identity weight), used to compensate increments.
    DriftCompensation first_pass;
    if (exp.is_cucker_smale()) {
        const auto spec = cs_spec(exp);
        const auto distances = pairwise_distances(ens, spec.N, spec.d, cfg.kernel.distance_stride);
        const BasisLibrary lib = cs_kernel_library(distances, cfg.kernel.basis, cfg.kernel.domain);
        out.kernel = fit_cs_kernel(ens, spec.N, spec.d, lib, cfg.regularization, exp.threads());
        const KernelEstimate kernel = *out.kernel;
        first_pass = [spec, kernel](const Vector &z) {
            CuckerSmaleSpec s = spec;
            s.kernel_phi = [&kernel](double r) { return kernel(r); };
            return stacked(cs_drift(s, cs_positions(z, s.N, s.d), cs_velocities(z, s.N, s.d)));
        };
    } else {
        const BasisLibrary lib_f = library_for(ens, truth.feature_f, cfg.basis_f);
        out.f = fit_f(ens, truth.feature_f, lib_f, cfg.regularization, exp.threads());
        const BasisLibrary lib_g = library_for(ens, truth.feature_g, cfg.basis_g);
        out.g = fit_g(ens, truth.feature_g, lib_g, identity, cfg.regularization, exp.threads());
        first_pass = [g = *out.g, feature = truth.feature_g](const Vector &z) { return g(feature(z)); };
    }

    const DriftCompensation compensation = cfg.drift_compensation ? first_pass : DriftCompensation{};
    out.diffusion_raw = fit_sigma_constant(empirical_qv(ens));
    if (cfg.diffusion_class == DiffusionClass::constant_matrix) {
        out.diffusion = cfg.drift_compensation ? fit_sigma_constant(empirical_qv(ens, compensation)) : out.diffusion_raw;
    } else {
        const auto y_feature = coordinate_features(y_indices(ens.dims));
        const BasisLibrary lib_s = library_for(ens, y_feature, cfg.basis_sigma);
        out.diffusion = fit_sigma_state_dependent(ens, lib_s, cfg.regularization, compensation, exp.threads());
    }

    // Second pass with the estimated covariance as weight. All outputs share one
    // design, so for the kernel fit the weight would cancel and is skipped.
    if (out.g) {
        const BasisLibrary lib_g = out.g->library;
        out.g = fit_g(ens, truth.feature_g, lib_g, fit_g_weight(out.diffusion), cfg.regularization, exp.threads());
    }
    return out;
}

void FitResult::save(const std::filesystem::path &dir) const {
    std::filesystem::create_directories(dir);
    if (f) write_json(dir / "f.json", f->to_json());
    if (g) write_json(dir / "g.json", g->to_json());
    if (kernel) write_json(dir / "kernel.json", kernel->to_json());
    write_json(dir / "diffusion.json", {{"estimate", diffusion.to_json()}, {"raw_quadratic_variation", diffusion_raw.to_json()}});
}

FitResult FitResult::load(const std::filesystem::path &dir) {
    FitResult r;
    if (std::filesystem::exists(dir / "f.json")) r.f = DriftEstimate::from_json(read_json(dir / "f.json"));
    if (std::filesystem::exists(dir / "g.json")) r.g = DriftEstimate::from_json(read_json(dir / "g.json"));
    if (std::filesystem::exists(dir / "kernel.json")) r.kernel = KernelEstimate::from_json(read_json(dir / "kernel.json"));
    if (!std::filesystem::exists(dir / "diffusion.json")) {
        throw ConfigError("no estimates in " + dir.string() + " (run fit first)");
    }
    const json d = read_json(dir / "diffusion.json");
    r.diffusion = DiffusionEstimate::from_json(d.at("estimate"));
    r.diffusion_raw = DiffusionEstimate::from_json(d.at("raw_quadratic_variation"));
    return r;
}

ModelSystem estimated_model(const Experiment &exp, const FitResult &fit) {
    ModelSystem m = exp.truth;
    m.name = exp.truth.name + "_estimated";
    if (exp.is_cucker_smale()) {
        if (!fit.kernel) throw ContractViolation("estimated_model: missing kernel estimate");
        auto spec = cs_spec(exp);
        spec.kernel_phi = [k = *fit.kernel](double r) { return k(r); };
        const auto cs = make_cucker_smale(spec);
        m.drift_g = cs.drift_g;
    } else {
        if (!fit.f || !fit.g) throw ContractViolation("estimated_model: missing drift estimates");
        m.drift_f = [f = *fit.f](const Vector &xi) { return f(xi); };
        m.drift_g = [g = *fit.g](const Vector &xi) { return g(xi); };
    }
    m.diffusion_sigma_y = [d = fit.diffusion](const Vector &y) { return d.sigma_at(y); };
    return m;
}

Evaluation evaluate_experiment(const Experiment &exp, const TrajectoryEnsemble &ens, const FitResult &fit) {
    const auto &cfg = exp.config;
    const ModelSystem est = estimated_model(exp, fit);
    Evaluation ev;
    auto &q = ev.quantities;

    const auto rho = OccupationMeasure::from_ensemble(ens);
    ev.report.l2_rho = l2_rho_error([&](const Vector &z) { return full_drift(exp.truth, z); },
                                    [&](const Vector &z) { return full_drift(est, z); }, rho);

    const TrajectoryEnsemble replayed = replay_ensemble(est, ens, exp.threads());
    ev.report.trajectory = trajectory_error(ens, replayed);

    if (cfg.wasserstein_comparison == "replay") {
        ev.report.wasserstein = wasserstein_curve(ens, replayed, cfg.snapshot_times, cfg.wasserstein);
        ev.report.coupling_note =
            "unconstrained W2 between marginals; comparison ensemble shares the initial states and recorded noise";
    } else {
        SimulationConfig fresh = exp.simulation;
        fresh.seed = exp.simulation.seed + 1;
        const auto independent = simulate_ensemble(est, fresh, exp.threads());
        ev.report.wasserstein = wasserstein_curve(ens, independent, cfg.snapshot_times, cfg.wasserstein);
        ev.report.coupling_note = "unconstrained W2 between marginals; comparison ensemble uses seed + 1";
    }

    q["relative_L2_rho"] = ev.report.l2_rho.relative;
    q["absolute_L2_rho"] = ev.report.l2_rho.absolute;
    q["trajectory_error_mean"] = ev.report.trajectory.mean;
    q["trajectory_error_std"] = ev.report.trajectory.std;
    q["trajectory_error_absolute_mean"] = ev.report.trajectory.absolute_mean;
    for (std::size_t i = 0; i < ev.report.wasserstein.size(); ++i) {
        q["W2[" + std::to_string(i) + "]"] = ev.report.wasserstein[i].distance;
    }
    const Vector s = fit.diffusion.sigma_diagonal();
    const Vector s_raw = fit.diffusion_raw.sigma_diagonal();
    for (Eigen::Index k = 0; k < s.size(); ++k) {
        q["sigma_hat[" + std::to_string(k) + "]"] = s[k];
        q["sigma_hat_raw[" + std::to_string(k) + "]"] = s_raw[k];
    }
    q["sigma_hat_mean"] = s.mean();
    q["sigma_hat_raw_mean"] = s_raw.mean();

    if (exp.is_cucker_smale()) {
        const auto spec = cs_spec(exp);
        const auto distances = pairwise_distances(ens, spec.N, spec.d, cfg.kernel.distance_stride);
        q["kernel_relative_L2"] = kernel_relative_error(spec.kernel_phi, *fit.kernel, distances);
    }
    return ev;
}

std::vector<CheckOutcome> run_checks(const std::vector<CheckSpec> &checks, const std::map<std::string, double> &q) {
    std::vector<CheckOutcome> out;
    for (const auto &c : checks) {
        CheckOutcome o{c, std::nullopt, false};
        const auto it = q.find(c.quantity);
        if (it != q.end()) {
            const double v = it->second;
            o.value = v;
            bool ok = std::isfinite(v);
            if (c.abs_tol) ok = ok && std::abs(v - *c.target) <= *c.abs_tol;
            if (c.rel_tol) ok = ok && std::abs(v - *c.target) <= *c.rel_tol * std::abs(*c.target);
            if (c.max) ok = ok && v <= *c.max;
            o.passed = ok;
        }
        out.push_back(o);
    }
    return out;
}

json ReproduceResult::to_json() const {
    json checks_j = json::array();
    for (const auto &c : checks) {
        json cj = c.spec.to_json();
        cj["value"] = optional_number(c.value);
        cj["passed"] = c.passed;
        checks_j.push_back(cj);
    }
    json paper_j = json::array();
    for (const auto &p : paper) {
        paper_j.push_back({{"quantity", p.paper.quantity},
                           {"paper_value", p.paper.value},
                           {"value", optional_number(p.value)},
                           {"ratio", p.ratio},
                           {"within_factor", p.within}});
    }
    return {{"quantities", quantities}, {"checks", checks_j}, {"paper_comparison", paper_j}, {"passed", passed}};
}

std::string ReproduceResult::to_text(int precision) const {
    std::ostringstream os;
    os << "quantities\n";
    for (const auto &[k, v] : quantities) os << "  " << std::left << std::setw(32) << k << format_fixed(v, precision) << '\n';
    os << "checks\n";
    for (const auto &c : checks) {
        os << "  [" << (c.passed ? "PASS" : "FAIL") << "] " << c.spec.quantity << " = "
           << (c.value ? format_general(*c.value) : std::string("missing"));
        if (c.spec.target) os << ", target " << *c.spec.target;
        if (c.spec.abs_tol) os << " +/- " << *c.spec.abs_tol;
        if (c.spec.rel_tol) os << " +/- " << *c.spec.rel_tol * 100.0 << "%";
        if (c.spec.max) os << ", max " << *c.spec.max;
        if (!c.spec.blocking) os << " (non-blocking)";
        os << '\n';
    }
    if (!paper.empty()) {
        os << "published values (order of magnitude, non-blocking)\n";
        for (const auto &p : paper) {
            os << "  [" << (p.within ? "WITHIN" : "OUTSIDE") << "] " << p.paper.quantity << ": published "
               << p.paper.value << ", here " << (p.value ? format_fixed(*p.value, precision) : std::string("missing"));
            if (p.value) os << " (ratio " << format_fixed(p.ratio, 2) << ")";
            os << '\n';
        }
    }
    os << (passed ? "RESULT PASS\n" : "RESULT FAIL\n");
    return os.str();
}

nlohmann::json ensemble_manifest(const TrajectoryEnsemble &ens, const std::string &file_bytes, const std::string &file_name) {
    return {{"file", file_name},
            {"format_version", 1},
            {"seed", ens.seed},
            {"dims", {{"total", ens.dims.total}, {"x", ens.dims.x}, {"y", ens.dims.y}, {"feature_f", ens.dims.feature_f}, {"feature_g", ens.dims.feature_g}}},
            {"M", ens.M},
            {"L", ens.L},
            {"dt", ens.dt},
            {"T", ens.horizon()},
            {"fnv1a64", hex64(fnv1a64(file_bytes))},
            {"bytes", file_bytes.size()}};
}

TrajectoryEnsemble cmd_simulate(const Experiment &exp, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);
    auto ens = run_simulation(exp);
    save_ensemble(ens, dir / "ensemble.bin");
    write_json(dir / "manifest.json", ensemble_manifest(ens, read_file(dir / "ensemble.bin"), "ensemble.bin"));
    write_json(dir / "config.json", exp.config.to_json());
    return ens;
}

namespace {

TrajectoryEnsemble load_checked(const Experiment &exp, const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) throw ConfigError("ensemble file not found: " + path.string() + " (run simulate first)");
    auto ens = load_ensemble(path);
    if (!(ens.dims == exp.truth.dims)) throw ConfigError(path.string() + ": ensemble dimensions do not match the config's model");
    return ens;
}

void write_report(const Experiment &exp, const Evaluation &ev, const std::filesystem::path &dir) {
    json j = {{"name", exp.config.name},
              {"report", ev.report.to_json()},
              {"quantities", ev.quantities},
              {"wasserstein_comparison", exp.config.wasserstein_comparison}};
    write_json(dir / "report.json", j);
    write_file_atomic(dir / "report.csv",
                      ev.report.csv_header() + "\n" + ev.report.csv_row(exp.config.report_precision) + "\n");
}

}  // namespace

FitResult cmd_fit(const Experiment &exp, const std::filesystem::path &dir,
                  const std::optional<std::filesystem::path> &ensemble_path) {
    const auto ens = load_checked(exp, ensemble_path.value_or(dir / "ensemble.bin"));
    auto fit = fit_experiment(exp, ens);
    fit.save(dir);
    return fit;
}

Evaluation cmd_evaluate(const Experiment &exp, const std::filesystem::path &dir,
                        const std::optional<std::filesystem::path> &ensemble_path) {
    const auto ens = load_checked(exp, ensemble_path.value_or(dir / "ensemble.bin"));
    const auto fit = FitResult::load(dir);
    auto ev = evaluate_experiment(exp, ens, fit);
    write_report(exp, ev, dir);
    return ev;
}

ReproduceResult cmd_reproduce(const Experiment &exp, const std::filesystem::path &dir) {
    const auto &cfg = exp.config;
    std::filesystem::create_directories(dir);
    const auto ens = cmd_simulate(exp, dir);
    const auto fit = fit_experiment(exp, ens);
    fit.save(dir);
    auto ev = evaluate_experiment(exp, ens, fit);
    write_report(exp, ev, dir);

    const ModelSystem est = estimated_model(exp, fit);
    write_sample_paths(dir / "sample_paths.csv", ens, replay_ensemble(est, ens, exp.threads()));

    ReproduceResult result;
    result.quantities = ev.quantities;
    if (exp.is_cucker_smale()) {
        const auto spec = cs_spec(exp);
        write_kernel_csv(dir / "kernel.csv", spec.kernel_phi, *fit.kernel);

        // Zero-noise run: the mean velocity is conserved.
        json quiet_params = cfg.model_params;
        quiet_params["sigma"] = 0.0;
        const ModelSystem quiet = make_builtin(cfg.model, quiet_params);
        SimulationConfig sim = exp.simulation;
        sim.M = std::min<std::size_t>(sim.M, 20);
        const auto still = simulate_ensemble(quiet, sim, exp.threads());
        double drift = 0.0;
        for (std::size_t m = 0; m < still.M; ++m) {
            const Vector v0 = cs_velocities(still.state_vector(m, 0), spec.N, spec.d).colwise().mean();
            for (std::size_t l = 1; l < still.L; ++l) {
                const Vector v = cs_velocities(still.state_vector(m, l), spec.N, spec.d).colwise().mean();
                drift = std::max(drift, (v - v0).cwiseAbs().maxCoeff());
            }
        }
        result.quantities["momentum_drift_per_unit_time"] = drift / still.horizon();

        // Relabeled agents give the same kernel.
        std::vector<std::size_t> perm(spec.N);
        std::iota(perm.rbegin(), perm.rend(), std::size_t{0});
        const auto permuted = fit_cs_kernel(permute_agents(ens, spec.N, spec.d, perm), spec.N, spec.d,
                                            fit.kernel->library, cfg.regularization, exp.threads());
        const double scale = std::max(1.0, fit.kernel->coefficients.cwiseAbs().maxCoeff());
        result.quantities["permutation_coefficient_diff"] =
            (permuted.coefficients - fit.kernel->coefficients).cwiseAbs().maxCoeff() / scale;
    } else if (fit.g) {
        write_drift_grid(dir / "drift_g_grid.csv", exp.truth, *fit.g);
    }

    result.checks = run_checks(cfg.checks, result.quantities);
    for (const auto &c : result.checks) {
        if (c.spec.blocking && !c.passed) result.passed = false;
    }
    for (const auto &p : cfg.paper) {
        PaperComparison pc{p, std::nullopt, 0.0, false};
        const auto it = result.quantities.find(p.quantity);
        if (it != result.quantities.end()) {
            pc.value = it->second;
            pc.ratio = p.value != 0.0 ? it->second / p.value : 0.0;
            pc.within = pc.ratio > 0.0 && pc.ratio <= cfg.paper_factor && pc.ratio >= 1.0 / cfg.paper_factor;
        }
        result.paper.push_back(pc);
    }

    json summary = result.to_json();
    summary["name"] = cfg.name;
    write_json(dir / "summary.json", summary);
    write_file_atomic(dir / "summary.txt", cfg.name + "\n" + result.to_text(cfg.report_precision));
    return result;
}

}  // namespace msde
