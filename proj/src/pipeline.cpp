#include "perfhom/pipeline.hpp"

#include "perfhom/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace perfhom {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string eps_tag(double eps) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", eps);
    return buf;
}

} // namespace

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "'");
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream ofs(path, std::ios::binary);
    if (!ofs) throw ConfigError("cannot write '" + path + "'");
    ofs << content;
}

// --- cell command -----------------------------------------------------------

CellRunResult run_cell(const RunConfig& config) {
    const PeriodicCell cell = config.make_cell();
    CellRunResult result;
    result.solution = solve_cell_problem(cell, config.cell_h);
    if (config.cell_refine > 0) {
        std::vector<double> hs;
        for (int k = 0; k < config.cell_refine; ++k)
            hs.push_back(config.cell_h * std::pow(2.0, config.cell_refine - 1 - k));
        result.refinement = cell_refinement_study(cell, hs);
    }
    return result;
}

void write_cell_outputs(const RunConfig& config, const CellRunResult& result) {
    ensure_out_dir(config.out_dir);
    {
        std::ostringstream os;
        write_cell_solution(os, result.solution);
        write_text_file(config.out_dir + "/cell_solution.txt", os.str());
    }
    {
        const PeriodicCell cell = config.make_cell();
        const CellMesh cm = build_cell_mesh(cell, config.cell_h);
        std::ostringstream os;
        write_mesh(os, cm.mesh);
        write_field(os, "chi1", result.solution.chi1);
        write_field(os, "chi2", result.solution.chi2);
        write_text_file(config.out_dir + "/cell_correctors.txt", os.str());
    }
    if (!result.refinement.empty()) {
        std::ostringstream os;
        os << "h,h_effective,b11,b12,b21,b22,theta,residual1,residual2\n";
        for (const auto& row : result.refinement)
            os << fmt(row.h) << ',' << fmt(row.h_effective) << ',' << fmt(row.B[0]) << ','
               << fmt(row.B[1]) << ',' << fmt(row.B[2]) << ',' << fmt(row.B[3]) << ','
               << fmt(row.theta) << ',' << fmt(row.residual1) << ',' << fmt(row.residual2)
               << "\n";
        write_text_file(config.out_dir + "/cell_refinement.csv", os.str());
    }
    std::ostringstream manifest;
    write_manifest(manifest, config, "cell");
    write_text_file(config.out_dir + "/manifest_cell.txt", manifest.str());
    write_text_file(config.out_dir + "/resolved_config.cfg", canonical_config_text(config));
}

CellSolutionSummary load_cell_artifact(const std::string& out_dir) {
    std::ifstream ifs(out_dir + "/cell_solution.txt");
    if (!ifs)
        throw MissingArtifactError("cell solution artifact not found in '" + out_dir +
                                   "'; run the cell command first");
    return read_cell_solution(ifs);
}

// --- contexts ----------------------------------------------------------------

std::unique_ptr<MicroContext> build_micro(const RunConfig& config, double eps,
                                          const GridOverride& grid) {
    const PeriodicCell cell = config.make_cell();
    auto ctx = std::make_unique<MicroContext>();
    ctx->eps = eps;
    ctx->mesh = std::make_unique<PerforatedMesh>(
        build_perforated_mesh(config.domain, cell, eps, config.h));

    ProblemSpec spec;
    spec.kind = EquationKind::Micro;
    spec.theta_weight = 1.0;
    spec.forcing = config.make_forcing();
    spec.initial = config.make_initial();
    NoiseModel noise = config.make_noise();
    if (grid.noise_scale != 1.0) noise = scale_noise(std::move(noise), grid.noise_scale);
    spec.noise = std::move(noise);
    spec.T = grid.T > 0.0 ? grid.T : config.T;
    spec.dt = grid.dt > 0.0 ? grid.dt : config.dt;
    spec.solver_tol = config.solver_tol;

    ctx->ev = std::make_unique<Evolution>(ctx->mesh->mesh, DofMap::dirichlet(ctx->mesh->mesh),
                                          micro_coefficient(cell, eps), std::move(spec));
    ctx->filler = std::make_unique<HarmonicFiller>(*ctx->mesh);
    return ctx;
}

std::unique_ptr<MacroContext> build_macro(const RunConfig& config,
                                          const CellSolutionSummary& cell,
                                          const GridOverride& grid) {
    auto ctx = std::make_unique<MacroContext>();
    PeriodicCell unit;
    unit.l1 = config.cell_l1;
    unit.l2 = config.cell_l2;
    unit.coefficient = [](double, double) { return Mat2{1.0, 0.0, 0.0, 1.0}; };
    const double eps_mac =
        std::min({config.domain.width(), config.domain.height(),
                  config.eps_list.front() * std::max(config.cell_l1, config.cell_l2)});
    ctx->mesh = std::make_unique<PerforatedMesh>(
        build_perforated_mesh(config.domain, unit, eps_mac, config.h));

    ProblemSpec spec;
    spec.kind = EquationKind::Macro;
    spec.theta_weight = cell.theta;
    // weak limits of the restricted micro data: f -> theta f, g -> theta g
    const auto f = config.make_forcing();
    if (f) {
        const double th = cell.theta;
        spec.forcing = [f, th](double x, double y, double t) { return th * f(x, y, t); };
    }
    spec.initial = config.make_initial();
    NoiseModel noise = config.make_noise();
    noise = scale_noise(std::move(noise), cell.theta * grid.noise_scale);
    spec.noise = std::move(noise);
    spec.T = grid.T > 0.0 ? grid.T : config.T;
    spec.dt = grid.dt > 0.0 ? grid.dt : config.dt;
    spec.solver_tol = config.solver_tol;

    const Mat2 B = cell.B;
    const CoefficientFn bcoeff = [B](double, double) { return B; };
    ctx->ev = std::make_unique<Evolution>(ctx->mesh->mesh, DofMap::dirichlet(ctx->mesh->mesh),
                                          bcoeff, std::move(spec));
    return ctx;
}

void link_micro_to_macro(MicroContext& micro, const MacroContext& macro) {
    micro.to_macro = std::make_unique<InterpolationMap>(
        build_interpolation(micro.mesh->background.mesh, macro.mesh->mesh.nodes));
}

// --- well-posedness margin ---------------------------------------------------

double wellposed_margin(const ComparisonData& data, int which, const Evolution& ev) {
    const double theta = ev.theta_weight();
    const double lambda = smallest_generalized_eigenvalue(ev.stiffness(), ev.mass(), 40);
    const double u0n = ev.mass_norm2(ev.initial_dofs());
    const double f_norm2 = ev.forcing_norm2();
    const double trace = ev.noise_trace();
    const std::size_t n_p = data.paths.size();
    std::vector<double> lhs(n_p);
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < data.times.size(); ++k) {
        for (std::size_t p = 0; p < n_p; ++p) {
            const EquationSeries& s =
                which < 0 ? data.paths[p].macro : data.paths[p].micro[static_cast<std::size_t>(which)];
            lhs[p] = theta * s.mass[k] + s.work[k];
        }
        const Estimate e = estimate_mean(lhs);
        const double t = data.times[k];
        const double bound = theta * u0n + f_norm2 * t / lambda + trace * t / theta;
        margin = std::min(margin, bound + 3.0 * e.se - e.value);
    }
    return margin;
}

// --- simulate ----------------------------------------------------------------

SimulateResult run_simulate(const RunConfig& config, EquationKind kind, double eps,
                            const CellSolutionSummary* cell) {
    SimulateResult result;
    ComparisonSetup setup;
    setup.n_paths = config.paths;
    setup.master_seed = config.seed;
    setup.threads = config.threads;
    setup.functionals = default_test_functions(config.test_functions, config.domain, config.T);
    setup.with_strong_gap = false;
    setup.with_stationary = false;

    std::unique_ptr<MicroContext> micro;
    std::unique_ptr<MacroContext> macro;
    const Evolution* ev = nullptr;
    if (kind == EquationKind::Micro) {
        micro = build_micro(config, eps);
        setup.micro.push_back(
            {eps, micro->ev.get(), micro->mesh.get(), micro->filler.get(), nullptr});
        ev = micro->ev.get();
        result.tag = std::string("micro_eps") + eps_tag(eps);
    } else {
        if (!cell)
            throw MissingArtifactError("macro simulation requires a cell-problem artifact");
        macro = build_macro(config, *cell);
        setup.macro = macro->ev.get();
        ev = macro->ev.get();
        result.tag = "macro";
    }

    const ComparisonData data = run_comparison(setup);
    const int which = kind == EquationKind::Micro ? 0 : -1;
    result.energy =
        comparison_energy_series(data, which, ev->theta_weight(), ev->noise_trace());
    result.noise_trace = ev->noise_trace();
    result.wellposed_margin = wellposed_margin(data, which, *ev);
    for (const auto& p : data.paths) {
        const EquationSeries& s = which < 0 ? p.macro : p.micro[0];
        result.max_residual = std::max(result.max_residual, s.max_residual);
    }
    return result;
}

void write_simulate_outputs(const RunConfig& config, const SimulateResult& result) {
    ensure_out_dir(config.out_dir);
    {
        std::ostringstream os;
        write_energy_csv(os, result.energy);
        write_text_file(config.out_dir + "/energy_" + result.tag + ".csv", os.str());
    }
    std::ostringstream summary;
    summary << "tag " << result.tag << "\n";
    summary << "paths " << config.paths << "\n";
    summary << "master_seed " << config.seed << "\n";
    summary << "max_solver_residual " << fmt(result.max_residual) << "\n";
    summary << "noise_trace " << fmt(result.noise_trace) << "\n";
    summary << "wellposed_margin " << fmt(result.wellposed_margin) << "\n";
    summary << "wellposed_pass " << (result.wellposed_margin >= 0.0 ? "yes" : "no") << "\n";
    write_text_file(config.out_dir + "/summary_" + result.tag + ".txt", summary.str());
    std::ostringstream manifest;
    write_manifest(manifest, config, "simulate " + result.tag);
    write_text_file(config.out_dir + "/manifest_" + result.tag + ".txt", manifest.str());
    write_text_file(config.out_dir + "/resolved_config.cfg", canonical_config_text(config));
}

// --- compare -----------------------------------------------------------------

CompareResult run_compare(const RunConfig& config, const CellSolutionSummary& cell) {
    CompareResult result;
    result.eps = config.eps_list;
    result.theta = cell.theta;

    // contexts on the finite-time grid
    auto macro = build_macro(config, cell);
    std::vector<std::unique_ptr<MicroContext>> micro;
    for (double eps : config.eps_list) {
        micro.push_back(build_micro(config, eps));
        link_micro_to_macro(*micro.back(), *macro);
    }

    ComparisonSetup setup;
    setup.macro = macro->ev.get();
    for (auto& mc : micro)
        setup.micro.push_back(
            {mc->eps, mc->ev.get(), mc->mesh.get(), mc->filler.get(), mc->to_macro.get()});
    setup.n_paths = config.paths;
    setup.master_seed = config.seed;
    setup.threads = config.threads;
    setup.functionals = default_test_functions(config.test_functions, config.domain, config.T);
    setup.with_strong_gap = config.has_metric("strong");
    setup.with_stationary = false;

    // deterministic calibration of the O(dt) Ito allowance: same grids and
    // meshes, noise silenced, a single path
    GridOverride calib;
    calib.noise_scale = 0.0;
    auto macro_cal = build_macro(config, cell, calib);
    std::vector<std::unique_ptr<MicroContext>> micro_cal;
    for (double eps : config.eps_list) micro_cal.push_back(build_micro(config, eps, calib));
    ComparisonSetup cal_setup;
    cal_setup.macro = macro_cal->ev.get();
    for (auto& mc : micro_cal)
        cal_setup.micro.push_back({mc->eps, mc->ev.get(), mc->mesh.get(), mc->filler.get(),
                                   nullptr});
    cal_setup.n_paths = 1;
    cal_setup.master_seed = config.seed;
    cal_setup.threads = 1;
    cal_setup.functionals.psi = nullptr;
    cal_setup.with_strong_gap = false;
    const ComparisonData cal_data = run_comparison(cal_setup);
    std::vector<double> dt_allowance; // per micro, then macro last
    for (std::size_t e = 0; e < micro_cal.size(); ++e) {
        const ItoCheck c = ito_identity_check(cal_data, static_cast<int>(e), 1.0,
                                              micro_cal[e]->ev->noise_trace(), 0.0);
        dt_allowance.push_back(config.ito_dt_factor * c.max_gap + 1e-13);
    }
    {
        const ItoCheck c = ito_identity_check(cal_data, -1, macro_cal->ev->theta_weight(),
                                              macro_cal->ev->noise_trace(), 0.0);
        dt_allowance.push_back(config.ito_dt_factor * c.max_gap + 1e-13);
    }

    const ComparisonData data = run_comparison(setup);

    // energy series + Ito checks + well-posedness margins
    result.macro_energy = comparison_energy_series(data, -1, macro->ev->theta_weight(),
                                                   macro->ev->noise_trace());
    for (std::size_t e = 0; e < micro.size(); ++e)
        result.micro_energy.push_back(
            comparison_energy_series(data, static_cast<int>(e), 1.0,
                                     micro[e]->ev->noise_trace()));
    for (std::size_t e = 0; e < micro.size(); ++e) {
        result.ito_checks.push_back(ito_identity_check(
            data, static_cast<int>(e), 1.0, micro[e]->ev->noise_trace(), dt_allowance[e]));
        result.wellposed_margins.push_back(
            wellposed_margin(data, static_cast<int>(e), *micro[e]->ev));
    }
    result.ito_checks.push_back(ito_identity_check(data, -1, macro->ev->theta_weight(),
                                                   macro->ev->noise_trace(),
                                                   dt_allowance.back()));
    result.wellposed_margins.push_back(wellposed_margin(data, -1, *macro->ev));

    // convergence table
    std::vector<SupGap> energy_gaps;
    std::vector<std::vector<PairingGap>> pairing_gaps;
    std::vector<Estimate> strong_gaps;
    for (std::size_t e = 0; e < micro.size(); ++e) {
        const double eps = config.eps_list[e];
        if (config.has_metric("energy")) {
            const SupGap g = energy_sup_gap(data, static_cast<int>(e));
            energy_gaps.push_back(g);
            result.table.rows.push_back({eps, "energy_sup_gap", g.gap.value, g.gap.se});
        }
        if (config.has_metric("pairing")) {
            const auto gaps = comparison_pairing_gaps(data, static_cast<int>(e));
            pairing_gaps.push_back(gaps);
            for (const auto& g : gaps)
                result.table.rows.push_back(
                    {eps, "pairing_gap_" + std::to_string(g.k + 1), g.gap.value, g.gap.se});
        }
        if (config.has_metric("strong")) {
            const Estimate g = comparison_strong_gap(data, static_cast<int>(e));
            strong_gaps.push_back(g);
            result.table.rows.push_back({eps, "strong_l2_gap", g.value, g.se});
        }
        result.table.rows.push_back({eps, "ito_max_gap", result.ito_checks[e].max_gap,
                                     result.ito_checks[e].allowance});
        result.table.rows.push_back({eps, "est1_margin", result.wellposed_margins[e], 0.0});
    }
    result.table.rows.push_back(
        {0.0, "ito_max_gap_macro", result.ito_checks.back().max_gap,
         result.ito_checks.back().allowance});
    result.table.rows.push_back(
        {0.0, "est1_margin_macro", result.wellposed_margins.back(), 0.0});

    // pass/fail
    auto fail = [&](const std::string& msg) { result.failures.push_back(msg); };
    if (config.has_metric("energy")) {
        if (config.eps_list.size() < 2) {
            result.table.rows.push_back({0.0, "energy_monotonicity", 0.0, 0.0});
        } else {
            for (std::size_t e = 0; e + 1 < energy_gaps.size(); ++e) {
                const double d = energy_gaps[e].gap.value - energy_gaps[e + 1].gap.value;
                const double band =
                    config.energy_se_factor * std::hypot(energy_gaps[e].gap.se,
                                                         energy_gaps[e + 1].gap.se);
                if (d <= band)
                    fail("energy sup gap not decreasing beyond " +
                         std::to_string(config.energy_se_factor) + " SE between eps=" +
                         eps_tag(config.eps_list[e]) + " and eps=" +
                         eps_tag(config.eps_list[e + 1]));
            }
        }
    }
    if (config.has_metric("pairing") && config.eps_list.size() >= 2) {
        for (int k = 0; k < config.test_functions; ++k) {
            const PairingGap& first = pairing_gaps.front()[static_cast<std::size_t>(k)];
            const PairingGap& last = pairing_gaps.back()[static_cast<std::size_t>(k)];
            const double d = first.gap.value - last.gap.value;
            const double band =
                config.pairing_se_factor * std::hypot(first.gap.se, last.gap.se);
            if (d <= band)
                fail("pairing gap " + std::to_string(k + 1) + " not decreasing beyond " +
                     std::to_string(config.pairing_se_factor) + " SE across the eps range");
        }
    }
    for (std::size_t e = 0; e < result.ito_checks.size(); ++e) {
        if (!result.ito_checks[e].pass)
            fail("Ito identity cross-check failed for ensemble " +
                 (e + 1 == result.ito_checks.size() ? std::string("macro")
                                                    : "eps=" + eps_tag(config.eps_list[e])));
    }
    for (std::size_t e = 0; e < result.wellposed_margins.size(); ++e) {
        if (result.wellposed_margins[e] < 0.0)
            fail("well-posedness bound violated for ensemble " +
                 (e + 1 == result.wellposed_margins.size()
                      ? std::string("macro")
                      : "eps=" + eps_tag(config.eps_list[e])));
    }

    // stationary experiment on its own long-time grid
    if (config.has_metric("stationary")) {
        GridOverride grid;
        grid.T = config.T_long;
        grid.dt = config.stationary_dt;
        auto macro_st = build_macro(config, cell, grid);
        auto micro_st = build_micro(config, config.resolved_stationary_eps(), grid);
        link_micro_to_macro(*micro_st, *macro_st);
        ComparisonSetup st;
        st.macro = macro_st->ev.get();
        st.micro.push_back({micro_st->eps, micro_st->ev.get(), micro_st->mesh.get(),
                            micro_st->filler.get(), micro_st->to_macro.get()});
        st.n_paths = config.stationary_paths;
        st.master_seed = rng::mix(config.seed, 0x5354415449ull);
        st.threads = config.threads;
        st.functionals =
            default_test_functions(config.test_functions, config.domain, config.T_long);
        st.with_strong_gap = false;
        st.with_stationary = true;
        st.burn_in = config.burn_in;
        st.stationary_stride = config.stationary_stride;
        const ComparisonData st_data = run_comparison(st);
        result.stationary = stationary_experiment(st_data, 0, config.burn_in);
        result.has_stationary = true;

        if (!(result.stationary.gamma_macro > 0.0))
            fail("stationary experiment: fitted gamma is not positive");
        for (std::size_t r = 0; r < std::min<std::size_t>(3, result.stationary.rows.size());
             ++r) {
            const StationaryRow& row = result.stationary.rows[r];
            const double d = std::fabs(row.micro.value - row.macro.value);
            const double band =
                config.stationary_se_factor * std::hypot(row.micro.se, row.macro.se);
            if (d > band)
                fail("stationary moment '" + row.name + "' differs beyond " +
                     std::to_string(config.stationary_se_factor) + " combined SE");
        }
        // est1-style bound also on the long-horizon micro ensemble
        const double st_margin = wellposed_margin(st_data, 0, *micro_st->ev);
        result.table.rows.push_back(
            {micro_st->eps, "est1_margin_stationary", st_margin, 0.0});
        if (st_margin < 0.0) fail("well-posedness bound violated on the stationary run");
    }

    return result;
}

void write_compare_outputs(const RunConfig& config, const CompareResult& result) {
    ensure_out_dir(config.out_dir);
    {
        std::ostringstream os;
        write_convergence_csv(os, result.table);
        write_text_file(config.out_dir + "/convergence.csv", os.str());
    }
    {
        std::ostringstream os;
        write_energy_csv(os, result.macro_energy);
        write_text_file(config.out_dir + "/energy_macro.csv", os.str());
    }
    for (std::size_t e = 0; e < result.micro_energy.size(); ++e) {
        std::ostringstream os;
        write_energy_csv(os, result.micro_energy[e]);
        write_text_file(config.out_dir + "/energy_micro_eps" + eps_tag(result.eps[e]) + ".csv",
                        os.str());
    }
    if (result.has_stationary) {
        std::ostringstream os;
        write_stationary_csv(os, result.stationary);
        write_text_file(config.out_dir + "/stationary.csv", os.str());
    }
    std::ostringstream manifest;
    write_manifest(manifest, config, "compare");
    write_text_file(config.out_dir + "/manifest_compare.txt", manifest.str());
    write_text_file(config.out_dir + "/resolved_config.cfg", canonical_config_text(config));
    std::ostringstream verdict;
    verdict << (result.failures.empty() ? "PASS" : "FAIL") << "\n";
    for (const auto& f : result.failures) verdict << f << "\n";
    write_text_file(config.out_dir + "/verdict.txt", verdict.str());
}

} // namespace perfhom
