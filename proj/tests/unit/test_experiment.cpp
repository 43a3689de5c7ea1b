#include "msde/experiment.hpp"
#include "msde/io.hpp"

#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>

using namespace msde;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
    const auto dir = fs::temp_directory_path() / ("msde_exp_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

nlohmann::json small_toy(const fs::path &out) {
    return {{"name", "small_toy"},
            {"model", {{"name", "toy"}, {"params", {{"sigma", 0.1}}}}},
            {"simulation", {{"T", 0.5}, {"dt", 0.01}, {"M", 40}, {"seed", 3}}},
            {"basis_f", {{"dims", {{{"family", "bspline"}, {"degree", 2}, {"segments", 1}}}}}},
            {"basis_g", {{"dims", {{{"family", "bspline"}, {"degree", 2}, {"segments", 1}}}}}},
            {"snapshot_times", {0.25, 0.5}},
            {"output_dir", out.string()},
            {"checks", {{{"quantity", "sigma_hat[0]"}, {"target", 0.1}, {"rel_tol", 0.2}}}},
            {"paper", {{{"quantity", "sigma_hat[0]"}, {"value", 0.1}}}}};
}

std::string config_error(const nlohmann::json &j) {
    try {
        parse_config(j.dump(), "test");
    } catch (const ConfigError &e) {
        return e.what();
    }
    return "";
}

int run_cli(const std::string &args) {
    const char *cli = std::getenv("MSDE_CLI");
    REQUIRE(cli != nullptr);
    const std::string cmd = std::string("\"") + cli + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("every bundled config parses and round trips through JSON") {
    const auto names = bundled_config_names();
    CHECK(names.size() == 10);
    for (const auto &name : names) {
        const auto cfg = resolve_config(name);
        const auto again = ExperimentConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
        CHECK(again.to_json() == cfg.to_json());
        CHECK_NOTHROW(Experiment{cfg});
    }
    CHECK(bundled_config("toy", "desk").M == 1000);
    CHECK_THROWS_AS(bundled_config("toy", "huge"), ConfigError);
    CHECK_THROWS_AS(resolve_config("/no/such/config.json"), ConfigError);
}

TEST_CASE("config errors name the offending field") {
    const auto base = small_toy(scratch("errors"));
    auto j = base;
    j["simulation"]["dt"] = -1.0;
    CHECK(config_error(j).find("simulation.dt") != std::string::npos);

    j = base;
    j["simulaton"] = 1;
    CHECK(config_error(j).find("simulaton") != std::string::npos);

    j = base;
    j["checks"][0].erase("rel_tol");
    CHECK(config_error(j).find("checks[0]") != std::string::npos);

    j = base;
    j["simulation"]["M"] = "many";
    CHECK(config_error(j).find("simulation.M") != std::string::npos);

    j = base;
    j["basis_g"]["dims"][0]["family"] = "wavelet";
    CHECK(config_error(j).find("basis_g") != std::string::npos);

    j = base;
    j["wasserstein"] = {{"comparison", "coupled"}};
    CHECK(config_error(j).find("wasserstein") != std::string::npos);

    CHECK(config_error(base).empty());
    CHECK_THROWS_AS(parse_config("{not json", "test"), ConfigError);

    j = base;
    j["model"]["params"] = {{"sigma", 0.1}, {"mu", 1.0}};
    CHECK_THROWS_AS(Experiment(parse_config(j.dump(), "test")), ConfigError);
    j = base;
    j["snapshot_times"] = {0.25, 3.0};
    CHECK_THROWS_AS(Experiment(parse_config(j.dump(), "test")), ConfigError);
    j = base;
    j["simulation"]["dt"] = 0.3;
    CHECK_THROWS_AS(Experiment(parse_config(j.dump(), "test")), ConfigError);
}

TEST_CASE("initial laws from JSON") {
    const auto toy = make_builtin("toy");
    const auto init = initial_from_json({{"lower", -1.0}, {"upper", {2.0, 3.0}}}, "toy", toy);
    CHECK(init.lower == std::vector<double>{-1.0, -1.0});
    CHECK(init.upper == std::vector<double>{2.0, 3.0});
    CHECK(initial_to_json(init).at("kind") == "uniform_box");
    CHECK_THROWS_AS(initial_from_json({{"upper", {1.0, 2.0, 3.0}}}, "toy", toy), ConfigError);
    CHECK_THROWS_AS(initial_from_json({{"kind", "custom_sampler"}}, "toy", toy), ConfigError);
    CHECK(initial_from_json(nullptr, "toy", toy).kind == InitialKind::uniform_box);
}

TEST_CASE("simulate writes byte-identical output on rerun") {
    const auto a = scratch("sim_a"), b = scratch("sim_b");
    const auto cfg = parse_config(small_toy(a).dump(), "test");
    const Experiment exp(cfg);
    cmd_simulate(exp, a);
    cmd_simulate(exp, b);
    CHECK(read_file(a / "ensemble.bin") == read_file(b / "ensemble.bin"));
    CHECK(read_file(a / "manifest.json") == read_file(b / "manifest.json"));
    const auto manifest = nlohmann::json::parse(read_file(a / "manifest.json"));
    CHECK(manifest.at("fnv1a64") == hex64(fnv1a64(read_file(a / "ensemble.bin"))));
    CHECK(manifest.at("M") == 40);
    CHECK(fs::exists(a / "config.json"));
}

TEST_CASE("fit and evaluate from files") {
    const auto dir = scratch("fit_eval");
    const Experiment exp(parse_config(small_toy(dir).dump(), "test"));
    CHECK_THROWS_AS(cmd_fit(exp, dir), ConfigError);
    cmd_simulate(exp, dir);
    const auto fit = cmd_fit(exp, dir);
    for (const char *f : {"f.json", "g.json", "diffusion.json"}) CHECK(fs::exists(dir / f));
    const auto loaded = FitResult::load(dir);
    CHECK(loaded.diffusion.Sigma_hat(0, 0) == doctest::Approx(fit.diffusion.Sigma_hat(0, 0)).epsilon(1e-15));
    const auto ev = cmd_evaluate(exp, dir);
    CHECK(fs::exists(dir / "report.json"));
    CHECK(fs::exists(dir / "report.csv"));
    CHECK(ev.quantities.count("W2[1]") == 1);
    CHECK(ev.quantities.at("sigma_hat[0]") == doctest::Approx(0.1).epsilon(0.2));
    CHECK(ev.report.l2_rho.relative < 0.5);
}

TEST_CASE("a single trajectory is enough to run the pipeline") {
    auto j = small_toy(scratch("single"));
    j["simulation"]["M"] = 1;
    const Experiment exp(parse_config(j.dump(), "test"));
    const auto ens = run_simulation(exp);
    const auto fit = fit_experiment(exp, ens);
    const auto ev = evaluate_experiment(exp, ens, fit);
    CHECK(ev.report.trajectory.per_trajectory.size() == 1);
    CHECK(ev.report.trajectory.std == 0.0);
}

TEST_CASE("noise-free data give a degenerate diffusion and an exact drift") {
    auto j = small_toy(scratch("noiseless"));
    j["model"]["params"]["sigma"] = 0.0;
    const Experiment exp(parse_config(j.dump(), "test"));
    const auto ens = run_simulation(exp);
    const auto fit = fit_experiment(exp, ens);
    CHECK(fit.diffusion.Sigma_hat(0, 0) < 1e-20);
    const auto ev = evaluate_experiment(exp, ens, fit);
    CHECK(ev.report.l2_rho.relative < 1e-8);
    CHECK(ev.report.trajectory.mean < 1e-8);
    for (const auto &w : ev.report.wasserstein) CHECK(w.distance < 1e-8);
}

TEST_CASE("reproduce is deterministic and independent of the thread count") {
    const auto a = scratch("rep_a"), b = scratch("rep_b"), c = scratch("rep_c");
    auto cfg = parse_config(small_toy(a).dump(), "test");
    cfg.threads = 1;
    const auto ra = cmd_reproduce(Experiment(cfg), a);
    const auto rb = cmd_reproduce(Experiment(cfg), b);
    cfg.threads = 3;
    cmd_reproduce(Experiment(cfg), c);
    CHECK(ra.passed);
    CHECK(rb.passed == ra.passed);
    CHECK(ra.paper.size() == 1);
    CHECK(ra.paper[0].within);
    for (const char *f : {"summary.json", "report.json", "summary.txt", "f.json", "g.json", "drift_g_grid.csv"}) {
        CHECK(read_file(a / f) == read_file(b / f));
        CHECK(read_file(a / f) == read_file(c / f));
    }
    CHECK(fs::exists(a / "sample_paths.csv"));
    const auto summary = nlohmann::json::parse(read_file(a / "summary.json"));
    CHECK(summary.at("passed") == true);
    CHECK(summary.at("checks").size() == 1);
}

TEST_CASE("Cucker-Smale reproduce adds the kernel quantities") {
    const auto dir = scratch("cs");
    nlohmann::json j = {{"name", "cs_small"},
                        {"model", {{"name", "cucker_smale"}, {"params", {{"N", 4}, {"d", 2}, {"sigma", 0.1}}}}},
                        {"simulation", {{"T", 0.5}, {"dt", 0.01}, {"M", 10}, {"seed", 5}}},
                        {"kernel", {{"basis", {{"family", "bspline"}, {"degree", 2}, {"segments", 4}}}, {"distance_stride", 5}}},
                        {"snapshot_times", {0.5}},
                        {"checks",
                         {{{"quantity", "momentum_drift_per_unit_time"}, {"max", 1e-10}},
                          {{"quantity", "permutation_coefficient_diff"}, {"max", 1e-10}}}}};
    const Experiment exp(parse_config(j.dump(), "test"));
    const auto r = cmd_reproduce(exp, dir);
    CHECK(r.passed);
    CHECK(r.quantities.count("kernel_relative_L2") == 1);
    CHECK(fs::exists(dir / "kernel.csv"));
    CHECK(fs::exists(dir / "kernel.json"));
    CHECK(!fs::exists(dir / "g.json"));
    const auto loaded = FitResult::load(dir);
    CHECK(loaded.kernel.has_value());
}

TEST_CASE("check logic") {
    std::map<std::string, double> q{{"a", 1.0}, {"b", 0.5}, {"nan", std::nan("")}};
    CheckSpec abs{"a", 1.05, 0.1, std::nullopt, std::nullopt, true};
    CheckSpec rel{"a", 1.2, std::nullopt, 0.1, std::nullopt, true};
    CheckSpec max{"b", std::nullopt, std::nullopt, std::nullopt, 0.4, false};
    CheckSpec missing{"zzz", std::nullopt, std::nullopt, std::nullopt, 1.0, true};
    CheckSpec bad{"nan", std::nullopt, std::nullopt, std::nullopt, 1.0, true};
    const auto out = run_checks({abs, rel, max, missing, bad}, q);
    CHECK(out[0].passed);
    CHECK(!out[1].passed);
    CHECK(!out[2].passed);
    CHECK(!out[3].passed);
    CHECK(!out[3].value.has_value());
    CHECK(!out[4].passed);

    CHECK_THROWS_AS(CheckSpec::from_json({{"quantity", "a"}}), ConfigError);
    CHECK_THROWS_AS(CheckSpec::from_json({{"quantity", "a"}, {"abs_tol", 1}}), ConfigError);
    const auto c = CheckSpec::from_json(abs.to_json());
    CHECK(c.target == abs.target);
    CHECK(c.abs_tol == abs.abs_tol);
}

TEST_CASE("command line exit codes") {
    const auto dir = scratch("cli");
    const auto good = dir / "good.json";
    write_file_atomic(good, small_toy(dir / "out").dump());
    CHECK(run_cli("simulate --config " + good.string()) == 0);
    CHECK(fs::exists(dir / "out" / "ensemble.bin"));
    CHECK(run_cli("fit --config " + good.string()) == 0);
    CHECK(run_cli("evaluate --config " + good.string()) == 0);
    CHECK(fs::exists(dir / "out" / "report.csv"));
    CHECK(run_cli("list") == 0);

    auto failing = small_toy(dir / "fail");
    failing["checks"] = {{{"quantity", "relative_L2_rho"}, {"max", 0.0}}};
    const auto fail_path = dir / "fail.json";
    write_file_atomic(fail_path, failing.dump());
    CHECK(run_cli("reproduce toy --config " + fail_path.string()) == 4);

    auto bad = small_toy(dir / "bad");
    bad["simulation"]["dt"] = 0.3;
    const auto bad_path = dir / "bad.json";
    write_file_atomic(bad_path, bad.dump());
    CHECK(run_cli("simulate --config " + bad_path.string()) == 2);

    auto ill = small_toy(dir / "ill");
    ill["regularization"] = {{"kind", "none"}};
    ill["basis_g"]["dims"][0]["segments"] = 40;
    ill["simulation"]["M"] = 1;
    const auto ill_path = dir / "ill.json";
    write_file_atomic(ill_path, ill.dump());
    CHECK(run_cli("reproduce toy --config " + ill_path.string()) == 3);

    CHECK(run_cli("evaluate --config " + (dir / "nothing.json").string()) == 2);
    CHECK(run_cli("reproduce toy --scale giant") == 2);
}
