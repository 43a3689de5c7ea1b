#pragma once

// Declarative experiments: a JSON config drives simulate -> fit -> evaluate and
// the reproduce summary with its tolerance checks.

#include "msde/basis.hpp"
#include "msde/core.hpp"
#include "msde/diffusion.hpp"
#include "msde/drift.hpp"
#include "msde/metrics.hpp"
#include "msde/models.hpp"
#include "msde/regression.hpp"
#include "msde/simulate.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace msde {

// One tolerance check on a named report quantity. A check passes when every
// bound that is set holds: |value - target| <= abs_tol, |value - target| <=
// rel_tol * |target|, value <= max.
struct CheckSpec {
    std::string quantity;
    std::optional<double> target;
    std::optional<double> abs_tol;
    std::optional<double> rel_tol;
    std::optional<double> max;
    bool blocking = true;

    nlohmann::json to_json() const;
    static CheckSpec from_json(const nlohmann::json &j);
};

// A published value; desk runs report whether they land within a factor of it.
struct PaperValue {
    std::string quantity;
    double value = 0.0;
};

struct KernelConfig {
    BasisDimConfig basis{BasisFamily::bspline, 2, 8};
    KernelDomain domain;
    std::size_t distance_stride = 10;  // time stride for the rho_r samples
};

struct ExperimentConfig {
    std::string name;
    std::string model;
    nlohmann::json model_params = nlohmann::json::object();

    double T = 1.0;
    double dt = 1e-3;
    std::size_t M = 1;
    std::uint64_t seed = 0;
    nlohmann::json initial;  // null: the model's default initial law

    BasisConfig basis_f{{BasisDimConfig{}}, 0.05};
    BasisConfig basis_g{{BasisDimConfig{}}, 0.05};
    BasisConfig basis_sigma{{BasisDimConfig{}}, 0.05};
    Regularization regularization;
    DiffusionClass diffusion_class = DiffusionClass::constant_matrix;
    bool drift_compensation = true;

    std::vector<double> snapshot_times;
    WassersteinOptions wasserstein;
    // "replay": W2 between the data and the estimated model replayed on the
    // recorded noise; "independent": estimated model on fresh noise.
    std::string wasserstein_comparison = "replay";

    std::string output_dir = "out";
    int report_precision = 4;
    std::size_t threads = 0;

    KernelConfig kernel;  // cucker_smale only

    std::vector<CheckSpec> checks;
    std::vector<PaperValue> paper;
    double paper_factor = 3.0;

    nlohmann::json to_json() const;
    // Throws ConfigError naming the offending field.
    static ExperimentConfig from_json(const nlohmann::json &j);
};

ExperimentConfig load_config(const std::filesystem::path &path);
ExperimentConfig parse_config(const std::string &text, const std::string &origin);

// Configs compiled into the binary, named <model>_<scale>.
std::vector<std::string> bundled_config_names();
std::optional<std::string> bundled_config_text(const std::string &name);
ExperimentConfig bundled_config(const std::string &model, const std::string &scale);

// A file path, or the name of a bundled config when no such file exists.
ExperimentConfig resolve_config(const std::string &path_or_name);

InitialDistribution initial_from_json(const nlohmann::json &j, const std::string &model, const ModelSystem &system);
nlohmann::json initial_to_json(const InitialDistribution &init);

struct Experiment {
    ExperimentConfig config;
    ModelSystem truth;
    SimulationConfig simulation;

    explicit Experiment(ExperimentConfig cfg);

    bool is_cucker_smale() const { return config.model == "cucker_smale"; }
    std::size_t threads() const { return config.threads; }
};

struct FitResult {
    // Absent for cucker_smale, whose x-drift dx = v dt is structurally known.
    std::optional<DriftEstimate> f;
    std::optional<DriftEstimate> g;
    std::optional<KernelEstimate> kernel;
    DiffusionEstimate diffusion;
    // Quadratic variation of the raw increments, without drift compensation.
    DiffusionEstimate diffusion_raw;

    void save(const std::filesystem::path &dir) const;
    static FitResult load(const std::filesystem::path &dir);
};

TrajectoryEnsemble run_simulation(const Experiment &exp);

FitResult fit_experiment(const Experiment &exp, const TrajectoryEnsemble &ensemble);

// The mSDE assembled from the estimates, with the truth's feature maps.
ModelSystem estimated_model(const Experiment &exp, const FitResult &fit);

struct Evaluation {
    MetricReport report;
    std::map<std::string, double> quantities;
};

Evaluation evaluate_experiment(const Experiment &exp, const TrajectoryEnsemble &ensemble, const FitResult &fit);

struct CheckOutcome {
    CheckSpec spec;
    std::optional<double> value;  // unset when the quantity was not produced
    bool passed = false;
};

struct PaperComparison {
    PaperValue paper;
    std::optional<double> value;
    double ratio = 0.0;
    bool within = false;
};

struct ReproduceResult {
    std::map<std::string, double> quantities;
    std::vector<CheckOutcome> checks;
    std::vector<PaperComparison> paper;
    bool passed = true;  // every blocking check passed

    nlohmann::json to_json() const;
    std::string to_text(int precision) const;
};

std::vector<CheckOutcome> run_checks(const std::vector<CheckSpec> &checks, const std::map<std::string, double> &q);

// Writes ensemble.bin, manifest.json and config.json into dir.
TrajectoryEnsemble cmd_simulate(const Experiment &exp, const std::filesystem::path &dir);
// Reads dir/ensemble.bin (or `ensemble_path`), writes the estimate files.
FitResult cmd_fit(const Experiment &exp, const std::filesystem::path &dir,
                  const std::optional<std::filesystem::path> &ensemble_path = std::nullopt);
// Reads the ensemble and estimates from dir, writes report.json and report.csv.
Evaluation cmd_evaluate(const Experiment &exp, const std::filesystem::path &dir,
                        const std::optional<std::filesystem::path> &ensemble_path = std::nullopt);
// Full pipeline plus extra invariant checks and summary.json / summary.txt.
ReproduceResult cmd_reproduce(const Experiment &exp, const std::filesystem::path &dir);

// Manifest for an ensemble file: seed, dimensions, grid and a content hash.
nlohmann::json ensemble_manifest(const TrajectoryEnsemble &ensemble, const std::string &file_bytes,
                                 const std::string &file_name);

}  // namespace msde
