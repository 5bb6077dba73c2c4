#include "perfhom/cell_problem.hpp"
#include "perfhom/config.hpp"
#include "perfhom/errors.hpp"
#include "perfhom/pipeline.hpp"
#include "perfhom/version.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitAcceptanceFail = 4;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    double eps = 0.0;
    std::string which = "micro";
    int threads = 0;
};

perfhom::RunConfig load_config(const CommonArgs& args) {
    perfhom::RunConfig cfg = perfhom::parse_config_file(args.config_path);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.threads > 0) cfg.threads = args.threads;
    cfg.validate();
    return cfg;
}

int cmd_cell(const CommonArgs& args) {
    const perfhom::RunConfig cfg = load_config(args);
    const perfhom::CellRunResult result = perfhom::run_cell(cfg);
    perfhom::write_cell_outputs(cfg, result);
    const double b = perfhom::ellipticity_constant(result.solution.B);
    std::printf("theta %.17g\n", result.solution.theta);
    std::printf("B %.17g %.17g %.17g %.17g\n", result.solution.B[0], result.solution.B[1],
                result.solution.B[2], result.solution.B[3]);
    std::printf("ellipticity %.17g\n", b);
    if (!(b > 0.0)) {
        std::fprintf(stderr, "error: homogenized matrix is not elliptic\n");
        return kExitNumerical;
    }
    return kExitOk;
}

int cmd_simulate(const CommonArgs& args) {
    const perfhom::RunConfig cfg = load_config(args);
    perfhom::SimulateResult result;
    if (args.which == "micro") {
        double eps = args.eps > 0.0 ? args.eps : cfg.eps_list.front();
        bool known = false;
        for (double e : cfg.eps_list)
            if (std::fabs(e - eps) < 1e-12) known = true;
        if (!known) throw perfhom::ConfigError("--eps must be one of geometry.eps");
        result = perfhom::run_simulate(cfg, perfhom::EquationKind::Micro, eps, nullptr);
    } else if (args.which == "macro") {
        const perfhom::CellSolutionSummary cell = perfhom::load_cell_artifact(cfg.out_dir);
        result = perfhom::run_simulate(cfg, perfhom::EquationKind::Macro, 0.0, &cell);
    } else {
        throw perfhom::ConfigError("--which must be micro or macro");
    }
    perfhom::write_simulate_outputs(cfg, result);
    std::printf("%s: %d paths, max residual %.3g, wellposed %s\n", result.tag.c_str(),
                cfg.paths, result.max_residual, result.wellposed_margin >= 0.0 ? "yes" : "NO");
    if (result.wellposed_margin < 0.0) return kExitNumerical;
    return kExitOk;
}

int cmd_compare(const CommonArgs& args) {
    const perfhom::RunConfig cfg = load_config(args);
    const perfhom::CellSolutionSummary cell = perfhom::load_cell_artifact(cfg.out_dir);
    const perfhom::CompareResult result = perfhom::run_compare(cfg, cell);
    perfhom::write_compare_outputs(cfg, result);
    if (result.failures.empty()) {
        std::printf("PASS\n");
        return kExitOk;
    }
    std::printf("FAIL\n");
    for (const auto& f : result.failures) std::printf("  %s\n", f.c_str());
    return kExitAcceptanceFail;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"perfhom: homogenization of stochastic heat equations on perforated domains"};
    app.set_version_flag("--version", perfhom::kVersion);
    app.require_subcommand(1);

    CommonArgs args;
    auto add_common = [&](CLI::App* sub, bool with_eps_which) {
        sub->add_option("--config", args.config_path, "run configuration file")->required();
        sub->add_option("--out", args.out_dir, "output directory (overrides [output] dir)");
        sub->add_option("--threads", args.threads, "worker threads (overrides config)");
        if (with_eps_which) {
            sub->add_option("--eps", args.eps, "period for micro simulation");
            sub->add_option("--which", args.which, "micro or macro")
                ->check(CLI::IsMember({"micro", "macro"}));
        }
    };
    CLI::App* cell = app.add_subcommand("cell", "solve the periodic cell problem");
    add_common(cell, false);
    CLI::App* simulate = app.add_subcommand("simulate", "run one SPDE ensemble");
    add_common(simulate, true);
    CLI::App* compare = app.add_subcommand("compare", "micro/macro effectivity experiments");
    add_common(compare, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(cell)) return cmd_cell(args);
        if (app.got_subcommand(simulate)) return cmd_simulate(args);
        if (app.got_subcommand(compare)) return cmd_compare(args);
    } catch (const perfhom::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitValidation;
    } catch (const perfhom::GeometryError& e) {
        std::fprintf(stderr, "geometry error: %s\n", e.what());
        return kExitValidation;
    } catch (const perfhom::MissingArtifactError& e) {
        std::fprintf(stderr, "missing artifact: %s\n", e.what());
        return kExitValidation;
    } catch (const perfhom::MeshError& e) {
        std::fprintf(stderr, "mesh error: %s\n", e.what());
        return kExitValidation;
    } catch (const perfhom::Error& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumerical;
    }
    return kExitOk;
}
