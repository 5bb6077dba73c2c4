#include <doctest.h>

#include "perfhom/errors.hpp"
#include "perfhom/pipeline.hpp"
#include "perfhom/statistics.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

using namespace perfhom;

namespace {

constexpr double kPi = 3.14159265358979323846;
const Rect kUnit{0, 0, 1, 1};
const CoefficientFn kIdentity = [](double, double) { return Mat2{1, 0, 0, 1}; };

RunConfig small_config(const std::string& extra = "") {
    std::istringstream is(R"(
[geometry]
hole = disk 0.5 0.5 0.25
eps = 0.25
cell_h = 0.1
h = 0.0625
[coefficient]
preset = identity
[noise]
m = 4
sigma = 0.2
seed = 99
[problem]
f = const 1.0
u0 = sine 1.0
T = 0.1
dt = 0.01
T_long = 1.0
burn_in = 0.25
[experiment]
paths = 6
threads = 1
)" + extra);
    return parse_config(is);
}

} // namespace

TEST_SUITE("statistics") {
    TEST_CASE("pairwise sum is exact on integers and deterministic") {
        std::vector<double> v(1000);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>((i * 7) % 23);
        const double expect = std::accumulate(v.begin(), v.end(), 0.0);
        CHECK(pairwise_sum(v) == doctest::Approx(expect).epsilon(1e-15));
    }

    TEST_CASE("estimate_mean on a known sample") {
        const std::vector<double> v{1.0, 3.0, 5.0, 7.0};
        const Estimate e = estimate_mean(v);
        CHECK(e.value == doctest::Approx(4.0));
        // sample variance 20/3, se = sqrt(var/4)
        CHECK(e.se == doctest::Approx(std::sqrt(20.0 / 3.0 / 4.0)));
    }

    TEST_CASE("energy series: zero data stays identically zero") {
        const TriMesh mesh = build_perforated_mesh(kUnit,
                                                   [] {
                                                       PeriodicCell c;
                                                       c.coefficient = kIdentity;
                                                       return c;
                                                   }(),
                                                   1.0, 0.25)
                                 .mesh;
        const DofMap dm = DofMap::dirichlet(mesh);
        ProblemSpec spec;
        spec.T = 0.05;
        spec.dt = 0.01;
        const Evolution ev(mesh, dm, kIdentity, spec);
        std::vector<SamplePath> paths;
        for (int p = 0; p < 3; ++p) paths.push_back(ev.simulate_path(p));
        const EnergySeries es = energy_series(paths, ev);
        for (std::size_t k = 0; k < es.times.size(); ++k) {
            CHECK(es.value[k] == 0.0);
            CHECK(es.ito[k] == 0.0);
        }
    }

    TEST_CASE("deterministic decay: the energy functional is conserved") {
        // f = 0, g = 0: E(t) = 1/2||u||^2 + int |grad u|^2 is constant (Ito
        // identity with no input); discretely constant up to O(dt)
        const TriMesh mesh = build_perforated_mesh(kUnit,
                                                   [] {
                                                       PeriodicCell c;
                                                       c.coefficient = kIdentity;
                                                       return c;
                                                   }(),
                                                   1.0, 0.125)
                                 .mesh;
        const DofMap dm = DofMap::dirichlet(mesh);
        ProblemSpec spec;
        spec.T = 0.2;
        spec.dt = 0.002;
        spec.initial = [](double x, double y) {
            return std::sin(kPi * x) * std::sin(kPi * y);
        };
        const Evolution ev(mesh, dm, kIdentity, spec);
        std::vector<SamplePath> paths{ev.simulate_path(0)};
        const EnergySeries es = energy_series(paths, ev);
        const double e0 = es.value[0];
        for (std::size_t k = 0; k < es.times.size(); ++k) {
            CHECK(es.ito[k] == doctest::Approx(e0).epsilon(1e-12));
            CHECK(std::fabs(es.value[k] - e0) < 40.0 * spec.dt * e0);
        }
        // refinement in dt shrinks the identity defect
        ProblemSpec fine = spec;
        fine.dt = 0.001;
        const Evolution evf(mesh, dm, kIdentity, fine);
        std::vector<SamplePath> pf{evf.simulate_path(0)};
        const EnergySeries esf = energy_series(pf, evf);
        const double gap_coarse = std::fabs(es.value.back() - es.ito.back());
        const double gap_fine = std::fabs(esf.value.back() - esf.ito.back());
        CHECK(gap_fine < 0.7 * gap_coarse);
    }

    TEST_CASE("stochastic run: direct and Ito energy estimates agree") {
        const RunConfig cfg = small_config();
        auto micro = build_micro(cfg, 0.25);
        ComparisonSetup setup;
        setup.micro.push_back({0.25, micro->ev.get(), micro->mesh.get(), micro->filler.get(),
                               nullptr});
        setup.n_paths = 24;
        setup.master_seed = 5;
        setup.threads = 2;
        setup.functionals = default_test_functions(3, kUnit, cfg.T);
        setup.with_strong_gap = false;
        const ComparisonData data = run_comparison(setup);
        const ItoCheck check =
            ito_identity_check(data, 0, 1.0, micro->ev->noise_trace(), 60.0 * cfg.dt * 0.1);
        CHECK(check.pass);
    }

    TEST_CASE("identical micro and macro give zero gaps under common seeds") {
        // no holes, constant coefficient, theta = 1: the two equations are the
        // same discrete system, so CRN paths coincide
        RunConfig cfg = small_config();
        cfg.hole = Hole{};
        cfg.eps_list = {0.25};
        cfg.validate();
        auto micro = build_micro(cfg, 0.25);
        CellSolutionSummary cell;
        cell.B = {1, 0, 0, 1};
        cell.theta = 1.0;
        auto macro = build_macro(cfg, cell);
        link_micro_to_macro(*micro, *macro);
        ComparisonSetup setup;
        setup.macro = macro->ev.get();
        setup.micro.push_back({0.25, micro->ev.get(), micro->mesh.get(), micro->filler.get(),
                               micro->to_macro.get()});
        setup.n_paths = 4;
        setup.master_seed = 3;
        setup.functionals = default_test_functions(4, kUnit, cfg.T);
        const ComparisonData data = run_comparison(setup);
        for (const PairingGap& g : comparison_pairing_gaps(data, 0))
            CHECK(g.gap.value < 1e-11);
        CHECK(comparison_strong_gap(data, 0).value < 1e-18);
        const SupGap sup = energy_sup_gap(data, 0);
        CHECK(sup.gap.value < 1e-10);
    }

    TEST_CASE("pairing gap scales exactly with the test function") {
        RunConfig cfg = small_config();
        auto micro = build_micro(cfg, 0.25);
        ComparisonSetup setup;
        setup.micro.push_back({0.25, micro->ev.get(), micro->mesh.get(), micro->filler.get(),
                               nullptr});
        setup.n_paths = 4;
        setup.master_seed = 17;
        setup.with_strong_gap = false;
        TestFunctionSet fs;
        fs.phi.push_back([](double x, double y) { return std::sin(kPi * x) * y; });
        fs.phi.push_back([](double x, double y) { return 2.0 * (std::sin(kPi * x) * y); });
        fs.phi.push_back([](double, double) { return 0.0; });
        fs.psi = [](double) { return 1.0; };
        setup.functionals = fs;
        const ComparisonData data = run_comparison(setup);
        for (const auto& path : data.paths) {
            CHECK(path.micro_pairings[0][1] ==
                  doctest::Approx(2.0 * path.micro_pairings[0][0]).epsilon(1e-14));
            CHECK(path.micro_pairings[0][2] == 0.0);
        }
    }

    TEST_CASE("strong gap of a constant shift is c^2 T |D|") {
        RunConfig cfg = small_config();
        cfg.hole = Hole{};
        cfg.validate();
        auto micro = build_micro(cfg, 0.25);
        CellSolutionSummary cell;
        cell.B = {1, 0, 0, 1};
        cell.theta = 1.0;
        auto macro = build_macro(cfg, cell);

        const double c = 0.75, T = cfg.T;
        const int n_steps = micro->ev->n_steps();
        std::vector<SamplePath> micro_paths(1), macro_paths(1);
        for (int s = 0; s <= n_steps; ++s) {
            micro_paths[0].times.push_back(s * cfg.dt);
            macro_paths[0].times.push_back(s * cfg.dt);
            micro_paths[0].states.emplace_back(micro->ev->initial_dofs().size(), c);
            macro_paths[0].states.emplace_back(macro->ev->initial_dofs().size(), 0.0);
        }
        const Estimate gap = strong_l2_gap(micro_paths, *micro->ev, *micro->mesh, macro_paths,
                                           *macro->ev);
        // interior DOFs carry c, the Dirichlet ring is clamped to zero, so the
        // exact integral differs from c^2 T |D| only by the boundary layer
        CHECK(gap.value == doctest::Approx(c * c * T * 1.0).epsilon(0.15));
    }

    TEST_CASE("fit_exponential recovers a synthetic transient") {
        std::vector<double> t, y;
        for (int k = 0; k <= 200; ++k) {
            t.push_back(0.01 * k);
            y.push_back(3.0 * std::exp(-5.0 * t.back()) + 2.0 +
                        1e-4 * std::sin(37.0 * t.back()));
        }
        const ExpFit fit = fit_exponential(t, y);
        CHECK(fit.gamma == doctest::Approx(5.0).epsilon(0.02));
        CHECK(fit.amplitude == doctest::Approx(3.0).epsilon(0.02));
        CHECK(fit.offset == doctest::Approx(2.0).epsilon(0.01));
    }

    TEST_CASE("ensemble results are reproducible and thread-count independent") {
        RunConfig cfg = small_config();
        auto micro = build_micro(cfg, 0.25);
        auto run = [&](int threads, std::uint64_t seed) {
            ComparisonSetup setup;
            setup.micro.push_back({0.25, micro->ev.get(), micro->mesh.get(),
                                   micro->filler.get(), nullptr});
            setup.n_paths = 6;
            setup.master_seed = seed;
            setup.threads = threads;
            setup.functionals = default_test_functions(3, kUnit, cfg.T);
            setup.with_strong_gap = false;
            return run_comparison(setup);
        };
        const ComparisonData a = run(1, 42);
        const ComparisonData b = run(2, 42);
        const ComparisonData c = run(1, 43);
        bool any_diff = false;
        for (std::size_t p = 0; p < a.paths.size(); ++p) {
            for (std::size_t k = 0; k < a.times.size(); ++k) {
                CHECK(a.paths[p].micro[0].mass[k] == b.paths[p].micro[0].mass[k]);
                CHECK(a.paths[p].micro[0].work[k] == b.paths[p].micro[0].work[k]);
                if (a.paths[p].micro[0].mass[k] != c.paths[p].micro[0].mass[k])
                    any_diff = true;
            }
        }
        CHECK(any_diff);
    }

    TEST_CASE("theta consistency of the constant-field pairing") {
        // pairing of u = 1 against phi over D_eps approaches theta int_D phi
        RunConfig cfg = small_config();
        auto phi = [](double x, double y) {
            return std::sin(kPi * x) * std::sin(kPi * y);
        };
        const double target = (1.0 - kPi / 16.0) * 4.0 / (kPi * kPi);
        double prev_err = 1e9;
        for (double eps : {0.25, 0.125}) {
            const PerforatedMesh pm =
                build_perforated_mesh(kUnit, cfg.make_cell(), eps, eps / 8.0);
            const std::vector<double> ones(pm.mesh.nodes.size(), 1.0);
            const double val = l2_pairing(pm.mesh, ones, phi);
            const double err = std::fabs(val - target);
            CHECK(err < prev_err);
            prev_err = err;
        }
        CHECK(prev_err < 2e-3);
    }

    TEST_CASE("stationary experiment on identical equations") {
        RunConfig cfg = small_config();
        cfg.hole = Hole{};
        cfg.u0_preset = "zero";
        cfg.f_preset = "zero";
        cfg.noise_sigma = 0.5;
        cfg.noise_m = 1;
        cfg.noise_preset = "single_mode";
        cfg.validate();
        GridOverride grid;
        grid.T = 1.5;
        grid.dt = 0.005;
        auto micro = build_micro(cfg, 0.25, grid);
        CellSolutionSummary cell;
        cell.B = {1, 0, 0, 1};
        cell.theta = 1.0;
        auto macro = build_macro(cfg, cell, grid);
        link_micro_to_macro(*micro, *macro);
        ComparisonSetup setup;
        setup.macro = macro->ev.get();
        setup.micro.push_back({0.25, micro->ev.get(), micro->mesh.get(), micro->filler.get(),
                               micro->to_macro.get()});
        setup.n_paths = 48;
        setup.master_seed = 7;
        setup.threads = 2;
        setup.functionals = default_test_functions(2, kUnit, grid.T);
        setup.with_strong_gap = false;
        setup.with_stationary = true;
        setup.burn_in = 0.5;
        setup.stationary_stride = 5;
        const ComparisonData data = run_comparison(setup);
        const StationaryReport report = stationary_experiment(data, 0, 0.5);
        CHECK(report.gamma_macro > 0.0);
        // same discrete system under CRN: micro and macro moments coincide
        for (const StationaryRow& row : report.rows)
            CHECK(row.micro.value == doctest::Approx(row.macro.value).epsilon(1e-9));
        // the OU rate: E||u||^2 relaxes at about 2 lambda_1
        CHECK(report.gamma_macro == doctest::Approx(4.0 * kPi * kPi).epsilon(0.30));
    }

    TEST_CASE("grid mismatch is rejected") {
        RunConfig cfg = small_config();
        auto micro = build_micro(cfg, 0.25);
        GridOverride other;
        other.dt = 0.005;
        auto micro2 = build_micro(cfg, 0.25, other);
        ComparisonSetup setup;
        setup.macro = nullptr;
        setup.micro.push_back({0.25, micro->ev.get(), micro->mesh.get(), micro->filler.get(),
                               nullptr});
        setup.micro.push_back({0.25, micro2->ev.get(), micro2->mesh.get(),
                               micro2->filler.get(), nullptr});
        setup.n_paths = 1;
        setup.functionals = default_test_functions(1, kUnit, cfg.T);
        setup.with_strong_gap = false;
        CHECK_THROWS_AS(run_comparison(setup), GridMismatchError);
    }

    TEST_CASE("csv writers emit the documented schemas") {
        EnergySeries es;
        es.times = {0.0, 0.1};
        es.value = {1.0, 2.0};
        es.se = {0.1, 0.2};
        es.ito = {1.0, 2.1};
        es.ito_se = {0.1, 0.2};
        std::ostringstream os;
        write_energy_csv(os, es);
        CHECK(os.str().rfind("t,E,stderr,E_ito,stderr_ito\n", 0) == 0);

        ConvergenceTable table;
        table.rows.push_back({0.25, "energy_sup_gap", 1e-3, 1e-5});
        std::ostringstream os2;
        write_convergence_csv(os2, table);
        CHECK(os2.str().rfind("epsilon,metric,value,stderr\n", 0) == 0);
        CHECK(os2.str().find("0.25,energy_sup_gap,") != std::string::npos);
    }
}
