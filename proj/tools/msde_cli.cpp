// Command-line runner: simulate, fit, evaluate, reproduce.

#include "msde/experiment.hpp"
#include "msde/parallel.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <iomanip>
#include <iostream>

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3, kTolerance = 4 };

struct Options {
    std::string config;
    std::string out;
    std::string ensemble;
    std::string scale = "desk";
    std::string name;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    bool seed_set = false;
    bool threads_set = false;
    bool csv = false;
};

msde::Experiment make_experiment(msde::ExperimentConfig cfg, const Options &opt) {
    if (opt.seed_set) cfg.seed = opt.seed;
    if (opt.threads_set) cfg.threads = opt.threads;
    if (!opt.out.empty()) cfg.output_dir = opt.out;
    if (cfg.threads != 0) msde::set_default_threads(cfg.threads);
    return msde::Experiment(std::move(cfg));
}

std::string fixed(double v, int precision) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

void print_sigma(const msde::FitResult &fit, int precision) {
    const auto s = fit.diffusion.sigma_diagonal();
    std::cout << "sigma_hat (" << msde::to_string(fit.diffusion.model_class) << "):";
    for (Eigen::Index k = 0; k < s.size(); ++k) std::cout << ' ' << fixed(s[k], precision);
    if (fit.diffusion.degenerate) std::cout << "  [degenerate: no noise detected]";
    std::cout << '\n';
}

int run(const std::string &command, const Options &opt) {
    if (command == "list") {
        for (const auto &n : msde::bundled_config_names()) std::cout << n << '\n';
        return kOk;
    }
    if (command == "reproduce") {
        auto cfg = opt.config.empty() ? msde::bundled_config(opt.name, opt.scale) : msde::resolve_config(opt.config);
        const auto exp = make_experiment(std::move(cfg), opt);
        const auto start = std::chrono::steady_clock::now();
        const auto result = msde::cmd_reproduce(exp, exp.config.output_dir);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << exp.config.name << '\n' << result.to_text(exp.config.report_precision);
        std::cout << "wrote " << exp.config.output_dir << " in " << fixed(secs, 1) << " s\n";
        return result.passed ? kOk : kTolerance;
    }

    const auto exp = make_experiment(msde::resolve_config(opt.config), opt);
    const std::filesystem::path dir = exp.config.output_dir;
    std::optional<std::filesystem::path> ensemble;
    if (!opt.ensemble.empty()) ensemble = opt.ensemble;
    if (command == "simulate") {
        const auto ens = msde::cmd_simulate(exp, dir);
        if (opt.csv) msde::write_ensemble_csv(ens, dir / "ensemble.csv");
        std::cout << "ensemble M=" << ens.M << " L=" << ens.L << " D=" << ens.dims.total << " -> "
                  << (dir / "ensemble.bin").string() << '\n';
        return kOk;
    }
    if (command == "fit") {
        const auto fit = msde::cmd_fit(exp, dir, ensemble);
        print_sigma(fit, exp.config.report_precision);
        std::cout << "estimates -> " << dir.string() << '\n';
        return kOk;
    }
    if (command == "evaluate") {
        const auto ev = msde::cmd_evaluate(exp, dir, ensemble);
        std::cout << ev.report.csv_header() << '\n' << ev.report.csv_row(exp.config.report_precision) << '\n';
        return kOk;
    }
    throw msde::ConfigError("unknown command '" + command + "'");
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Learning drift and diffusion of mixed SDEs from trajectory ensembles"};
    app.require_subcommand(1);
    Options opt;

    auto common = [&](CLI::App *sub, bool config_required) {
        auto *c = sub->add_option("--config", opt.config, "Config file, or the name of a bundled config");
        if (config_required) c->required();
        sub->add_option("--out", opt.out, "Output directory (default: the config's output_dir)");
        sub->add_option("--seed", opt.seed, "Override the simulation seed")->each([&](const std::string &) { opt.seed_set = true; });
        sub->add_option("--threads", opt.threads, "Worker threads (default: MSDE_THREADS or all cores)")
            ->each([&](const std::string &) { opt.threads_set = true; });
    };

    auto *simulate = app.add_subcommand("simulate", "Simulate an ensemble: ensemble.bin and manifest.json");
    common(simulate, true);
    simulate->add_flag("--csv", opt.csv, "Also write ensemble.csv");

    auto *fit = app.add_subcommand("fit", "Fit drift and diffusion: f.json, g.json (or kernel.json), diffusion.json");
    common(fit, true);
    fit->add_option("--ensemble", opt.ensemble, "Ensemble file (default: <out>/ensemble.bin)");

    auto *evaluate = app.add_subcommand("evaluate", "Evaluate estimates: report.json and report.csv");
    common(evaluate, true);
    evaluate->add_option("--ensemble", opt.ensemble, "Ensemble file (default: <out>/ensemble.bin)");

    auto *reproduce = app.add_subcommand("reproduce", "Run a bundled experiment end to end and check tolerances");
    reproduce->add_option("name", opt.name, "Experiment: toy, van_der_pol, vicsek, henon_heiles, cucker_smale")->required();
    reproduce->add_option("--scale", opt.scale, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
    common(reproduce, false);

    app.add_subcommand("list", "List bundled configs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, opt);
    } catch (const msde::ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const msde::ContractViolation &e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kConfig;
    } catch (const msde::IllConditionedError &e) {
        std::cerr << "numerical failure: " << e.what()
                  << "\n  hint: set regularization.kind to \"ridge\" or \"truncated_svd\", or use fewer basis segments\n";
        return kNumerical;
    } catch (const msde::SimulationError &e) {
        std::cerr << "numerical failure: " << e.what() << " (trajectory " << e.trajectory() << ", t = " << e.time()
                  << ")\n";
        return kNumerical;
    } catch (const msde::NumericalError &e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}
