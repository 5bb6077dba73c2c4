#include "perfhom/statistics.hpp"

#include "perfhom/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <thread>
#include <tuple>

namespace perfhom {

namespace {
constexpr double kPi = 3.14159265358979323846;
} // namespace

double pairwise_sum(const double* v, std::size_t n) {
    if (n <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

Estimate estimate_mean(const std::vector<double>& samples) {
    Estimate e;
    const std::size_t n = samples.size();
    if (n == 0) return e;
    e.value = pairwise_sum(samples) / static_cast<double>(n);
    if (n > 1) {
        std::vector<double> dev2(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = samples[i] - e.value;
            dev2[i] = d * d;
        }
        const double var = pairwise_sum(dev2) / static_cast<double>(n - 1);
        e.se = std::sqrt(var / static_cast<double>(n));
    }
    return e;
}

TestFunctionSet default_test_functions(int count, const Rect& domain, double T) {
    TestFunctionSet fs;
    const double Lx = domain.width(), Ly = domain.height();
    std::vector<std::tuple<double, int, int>> order;
    for (int k = 1; k <= count + 4; ++k)
        for (int l = 1; l <= count + 4; ++l)
            order.emplace_back((k / Lx) * (k / Lx) + (l / Ly) * (l / Ly), k, l);
    std::sort(order.begin(), order.end());
    const double norm = 2.0 / std::sqrt(Lx * Ly);
    for (int i = 0; i < count; ++i) {
        const auto [ev, k, l] = order[static_cast<std::size_t>(i)];
        const double kx = k * kPi / Lx, ky = l * kPi / Ly;
        const double x0 = domain.x0, y0 = domain.y0;
        fs.phi.push_back([norm, kx, ky, x0, y0](double x, double y) {
            return norm * std::sin(kx * (x - x0)) * std::sin(ky * (y - y0));
        });
    }
    fs.psi = [T](double t) {
        const double s = 2.0 * t / T - 1.0;
        if (std::fabs(s) >= 1.0) return 0.0;
        return std::exp(-1.0 / (1.0 - s * s));
    };
    return fs;
}

ExpFit fit_exponential(const std::vector<double>& t, const std::vector<double>& y) {
    if (t.size() != y.size() || t.size() < 8)
        throw DimensionError("fit_exponential: need at least 8 aligned samples");
    const std::size_t n = t.size();

    // stationary level and noise floor from the last quarter of the series
    const std::size_t tail_start = n - n / 4;
    double d = 0.0;
    for (std::size_t i = tail_start; i < n; ++i) d += y[i];
    d /= static_cast<double>(n - tail_start);
    double tail_var = 0.0;
    for (std::size_t i = tail_start; i < n; ++i) tail_var += (y[i] - d) * (y[i] - d);
    const double tail_std = std::sqrt(tail_var / std::max<std::size_t>(1, n - tail_start - 1));

    // transient window: from the start until |y - d| falls below the larger
    // of 8% of the initial deviation and 2.5 tail noise, three samples in a row
    const double s0 = y[0] - d;
    const double sign = s0 >= 0.0 ? 1.0 : -1.0;
    const double floor = std::max(0.08 * std::fabs(s0), 2.5 * tail_std);
    std::size_t cut = n;
    int below = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (std::fabs(y[i] - d) < floor) {
            if (++below >= 3) {
                cut = i;
                break;
            }
        } else {
            below = 0;
        }
    }
    // log-linear regression of log|y - d| on the transient window
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int m = 0;
    for (std::size_t i = 0; i < std::max<std::size_t>(cut, 6) && i < n; ++i) {
        const double dev = sign * (y[i] - d);
        if (dev <= 0.0) continue;
        const double z = std::log(dev);
        sx += t[i];
        sy += z;
        sxx += t[i] * t[i];
        sxy += t[i] * z;
        ++m;
    }
    ExpFit fit;
    fit.offset = d;
    if (m < 3) {
        fit.gamma = 0.0;
        fit.amplitude = 0.0;
        fit.rms_residual = tail_std;
        return fit;
    }
    const double det = m * sxx - sx * sx;
    const double slope = (m * sxy - sx * sy) / det;
    const double intercept = (sy * sxx - sx * sxy) / det;
    fit.gamma = -slope;
    fit.amplitude = sign * std::exp(intercept);
    double sse = 0.0;
    int cnt = 0;
    for (std::size_t i = 0; i < std::max<std::size_t>(cut, 6) && i < n; ++i) {
        const double r = y[i] - (fit.amplitude * std::exp(-fit.gamma * t[i]) + d);
        sse += r * r;
        ++cnt;
    }
    fit.rms_residual = std::sqrt(sse / std::max(cnt, 1));
    return fit;
}

// ---------------------------------------------------------------------------
// helpers shared by the recorded-path operations and the coupled engine
// ---------------------------------------------------------------------------

namespace {

// pairing weights in DOF order: w[d] = (M_all phi)_node(d), so that the exact
// integral int u phi (with u = 0 on eliminated boundary nodes) is dot(u, w)
std::vector<double> pairing_vector(const TriMesh& mesh, const DofMap& dofmap,
                                   const std::function<double(double, double)>& phi) {
    std::vector<double> w_nodes(mesh.nodes.size(), 0.0);
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const double area = mesh.tri_area(t);
        const auto& tr = mesh.tris[t];
        double pv[3];
        for (int k = 0; k < 3; ++k) pv[k] = phi(mesh.nodes[tr[k]].x, mesh.nodes[tr[k]].y);
        for (int r = 0; r < 3; ++r) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) s += area / 12.0 * (r == c ? 2.0 : 1.0) * pv[c];
            w_nodes[tr[r]] += s;
        }
    }
    std::vector<double> w(static_cast<std::size_t>(dofmap.n_dofs), 0.0);
    for (std::size_t v = 0; v < w_nodes.size(); ++v)
        if (dofmap.dof_of_node[v] >= 0) w[dofmap.dof_of_node[v]] = w_nodes[v];
    return w;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

Estimate series_mean_at(const std::vector<std::vector<double>>& per_path, std::size_t k) {
    std::vector<double> col(per_path.size());
    for (std::size_t p = 0; p < per_path.size(); ++p) col[p] = per_path[p][k];
    return estimate_mean(col);
}

void require_aligned(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw GridMismatchError("time grids have different lengths");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::fabs(a[i] - b[i]) > 1e-12 * std::max(1.0, std::fabs(a[i])))
            throw GridMismatchError("time grids are not aligned");
}

} // namespace

// ---------------------------------------------------------------------------
// recorded-path operations
// ---------------------------------------------------------------------------

EnergySeries energy_series(const std::vector<SamplePath>& paths, const Evolution& ev) {
    if (paths.empty()) throw DimensionError("energy_series: empty ensemble");
    const double th = ev.theta_weight();
    const double trace = ev.noise_trace();
    const std::vector<double>& times = paths.front().times;
    std::vector<std::vector<double>> direct(paths.size()), ito(paths.size());
    for (std::size_t p = 0; p < paths.size(); ++p) {
        require_aligned(times, paths[p].times);
        const EnergyDiagnostics d = energy_diagnostics(paths[p], ev);
        std::vector<double>& e = direct[p];
        std::vector<double>& i = ito[p];
        e.resize(times.size());
        i.resize(times.size());
        double fint = 0.0, prev_fp = ev.load_pairing(paths[p].states[0], 0.0);
        for (std::size_t k = 0; k < times.size(); ++k) {
            e[k] = 0.5 * th * d.mass_norm2[k] + d.cumulative_dirichlet[k];
            const double fp = ev.load_pairing(paths[p].states[k], times[k]);
            if (k > 0) fint += 0.5 * (fp + prev_fp) * (times[k] - times[k - 1]);
            prev_fp = fp;
            i[k] = 0.5 * th * d.mass_norm2[0] + fint + times[k] * trace / (2.0 * th);
        }
    }
    EnergySeries out;
    out.times = times;
    for (std::size_t k = 0; k < times.size(); ++k) {
        const Estimate e = series_mean_at(direct, k);
        const Estimate i = series_mean_at(ito, k);
        out.value.push_back(e.value);
        out.se.push_back(e.se);
        out.ito.push_back(i.value);
        out.ito_se.push_back(i.se);
    }
    return out;
}

EnergySeries energy_series_micro(const std::vector<SamplePath>& paths, const Evolution& ev) {
    if (ev.spec().kind != EquationKind::Micro)
        throw DimensionError("energy_series_micro: not a micro evolution");
    return energy_series(paths, ev);
}

EnergySeries energy_series_macro(const std::vector<SamplePath>& paths, const Evolution& ev) {
    if (ev.spec().kind != EquationKind::Macro)
        throw DimensionError("energy_series_macro: not a macro evolution");
    return energy_series(paths, ev);
}

std::vector<PairingGap> weak_pairing_gap(const std::vector<SamplePath>& micro_paths,
                                         const Evolution& micro_ev,
                                         const std::vector<SamplePath>& macro_paths,
                                         const Evolution& macro_ev, double theta,
                                         const TestFunctionSet& fs) {
    if (micro_paths.size() != macro_paths.size())
        throw GridMismatchError("weak_pairing_gap: ensembles have different sizes");
    if (micro_paths.empty()) throw DimensionError("weak_pairing_gap: empty ensemble");
    const std::vector<double>& times = micro_paths.front().times;
    require_aligned(times, macro_paths.front().times);

    std::vector<std::vector<double>> w_micro, w_macro;
    for (const auto& phi : fs.phi) {
        w_micro.push_back(pairing_vector(micro_ev.mesh(), micro_ev.dofmap(), phi));
        w_macro.push_back(pairing_vector(macro_ev.mesh(), macro_ev.dofmap(), phi));
    }
    std::vector<PairingGap> gaps(fs.phi.size());
    std::vector<std::vector<double>> samples(fs.phi.size(),
                                             std::vector<double>(micro_paths.size()));
    for (std::size_t p = 0; p < micro_paths.size(); ++p) {
        require_aligned(times, micro_paths[p].times);
        require_aligned(times, macro_paths[p].times);
        for (std::size_t k = 0; k < fs.phi.size(); ++k) {
            double acc = 0.0;
            for (std::size_t s = 1; s < times.size(); ++s) {
                const double dt = times[s] - times[s - 1];
                const double f1 = fs.psi(times[s]) *
                                  (dot(micro_paths[p].states[s], w_micro[k]) -
                                   theta * dot(macro_paths[p].states[s], w_macro[k]));
                const double f0 = fs.psi(times[s - 1]) *
                                  (dot(micro_paths[p].states[s - 1], w_micro[k]) -
                                   theta * dot(macro_paths[p].states[s - 1], w_macro[k]));
                acc += 0.5 * (f0 + f1) * dt;
            }
            samples[k][p] = acc;
        }
    }
    for (std::size_t k = 0; k < fs.phi.size(); ++k) {
        const Estimate e = estimate_mean(samples[k]);
        gaps[k].k = static_cast<int>(k);
        gaps[k].gap = {std::fabs(e.value), e.se};
    }
    return gaps;
}

Estimate strong_l2_gap(const std::vector<SamplePath>& micro_paths, const Evolution& micro_ev,
                       const PerforatedMesh& micro_mesh,
                       const std::vector<SamplePath>& macro_paths, const Evolution& macro_ev) {
    if (micro_paths.size() != macro_paths.size())
        throw GridMismatchError("strong_l2_gap: ensembles have different sizes");
    if (micro_paths.empty()) throw DimensionError("strong_l2_gap: empty ensemble");
    const std::vector<double>& times = micro_paths.front().times;
    require_aligned(times, macro_paths.front().times);

    const HarmonicFiller filler(micro_mesh);
    const InterpolationMap interp =
        build_interpolation(micro_mesh.background.mesh, macro_ev.mesh().nodes);
    const DofMap all = DofMap::all_nodes(macro_ev.mesh());
    const SparseOperator M_all = assemble_mass(macro_ev.mesh(), all);

    std::vector<double> samples(micro_paths.size());
    for (std::size_t p = 0; p < micro_paths.size(); ++p) {
        require_aligned(times, micro_paths[p].times);
        double acc = 0.0, prev = 0.0;
        for (std::size_t s = 0; s < times.size(); ++s) {
            const std::vector<double> micro_nodal =
                micro_ev.dofmap().to_nodes(micro_paths[p].states[s]);
            const std::vector<double> filled = filler.apply(micro_nodal);
            std::vector<double> diff = interp.apply(filled);
            const std::vector<double> macro_nodal =
                macro_ev.dofmap().to_nodes(macro_paths[p].states[s]);
            for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= macro_nodal[i];
            const double q = M_all.quadratic_form(diff);
            if (s > 0) acc += 0.5 * (q + prev) * (times[s] - times[s - 1]);
            prev = q;
        }
        samples[p] = acc;
    }
    return estimate_mean(samples);
}

// ---------------------------------------------------------------------------
// coupled comparison engine
// ---------------------------------------------------------------------------

namespace {

struct EquationContext {
    const Evolution* ev = nullptr;
    std::vector<std::vector<double>> pairing_w; // per phi_k, DOF order
};

// per-step accumulation state for one equation on one path
struct EquationRun {
    EquationSeries series;
    std::vector<double> pairings;     // psi-weighted time integrals per phi_k
    std::vector<double> prev_pair;    // previous integrand values
    double prev_fpair = 0.0;
    double prev_dirichlet = 0.0;
};

void observe_equation(const EquationContext& ctx, const PathWalker& walker, EquationRun& run,
                      double t, double dt_from_prev, double psi_t) {
    const std::vector<double>& u = walker.state();
    const bool first = run.series.mass.empty();
    run.series.mass.push_back(walker.mass_norm2());
    const double d = walker.dirichlet_form();
    const double fp = ctx.ev->load_pairing(u, t);
    if (first) {
        run.series.work.push_back(0.0);
        run.series.fpair.push_back(0.0);
        run.pairings.assign(ctx.pairing_w.size(), 0.0);
        run.prev_pair.assign(ctx.pairing_w.size(), 0.0);
    } else {
        run.series.work.push_back(run.series.work.back() +
                                  0.5 * (d + run.prev_dirichlet) * dt_from_prev);
        run.series.fpair.push_back(run.series.fpair.back() +
                                   0.5 * (fp + run.prev_fpair) * dt_from_prev);
    }
    run.prev_dirichlet = d;
    run.prev_fpair = fp;
    for (std::size_t k = 0; k < ctx.pairing_w.size(); ++k) {
        const double val = psi_t * dot(u, ctx.pairing_w[k]);
        if (!first) run.pairings[k] += 0.5 * (val + run.prev_pair[k]) * dt_from_prev;
        run.prev_pair[k] = val;
    }
    run.series.max_residual = std::max(run.series.max_residual, walker.max_residual());
}

} // namespace

ComparisonData run_comparison(const ComparisonSetup& setup) {
    const Evolution* macro_ptr = setup.macro;
    if (!macro_ptr && setup.micro.empty())
        throw DimensionError("run_comparison: no equations to run");
    if (!macro_ptr && (setup.with_strong_gap || setup.with_stationary))
        throw DimensionError("run_comparison: strong gap / stationary need a macro equation");
    const Evolution& grid_ev = macro_ptr ? *macro_ptr : *setup.micro.front().ev;
    const int n_steps = grid_ev.n_steps();
    const double dt = grid_ev.dt();
    for (const MicroEntry& me : setup.micro) {
        if (me.ev->n_steps() != n_steps || std::fabs(me.ev->dt() - dt) > 1e-12 * dt)
            throw GridMismatchError("run_comparison: micro/macro time grids differ");
        if (static_cast<int>(me.ev->spec().noise.modes.size()) !=
            static_cast<int>(grid_ev.spec().noise.modes.size()))
            throw GridMismatchError("run_comparison: noise mode counts differ");
    }

    ComparisonData data;
    data.master_seed = setup.master_seed;
    data.theta = macro_ptr ? macro_ptr->theta_weight() : 1.0;
    data.n_test_functions = static_cast<int>(setup.functionals.phi.size());
    for (int s = 0; s <= n_steps; ++s) data.times.push_back(s * dt);
    for (const MicroEntry& me : setup.micro) data.eps.push_back(me.eps);
    data.paths.resize(static_cast<std::size_t>(setup.n_paths));

    // pairing weights per equation
    EquationContext macro_ctx;
    if (macro_ptr) {
        macro_ctx.ev = macro_ptr;
        for (const auto& phi : setup.functionals.phi)
            macro_ctx.pairing_w.push_back(
                pairing_vector(macro_ptr->mesh(), macro_ptr->dofmap(), phi));
    }
    std::vector<EquationContext> micro_ctx(setup.micro.size());
    for (std::size_t e = 0; e < setup.micro.size(); ++e) {
        micro_ctx[e].ev = setup.micro[e].ev;
        for (const auto& phi : setup.functionals.phi)
            micro_ctx[e].pairing_w.push_back(
                pairing_vector(setup.micro[e].ev->mesh(), setup.micro[e].ev->dofmap(), phi));
    }

    // macro-mesh mass and mode weights for interpolated stationary moments
    SparseOperator M_macro_all;
    std::vector<std::vector<double>> stat_w; // nodal weights on the macro mesh
    if (macro_ptr) {
        const DofMap macro_all = DofMap::all_nodes(macro_ptr->mesh());
        M_macro_all = assemble_mass(macro_ptr->mesh(), macro_all);
        for (const auto& phi : setup.functionals.phi)
            stat_w.push_back(pairing_vector(macro_ptr->mesh(), macro_all, phi));
    }
    const int n_stat_modes = std::min<int>(4, static_cast<int>(stat_w.size()));

    std::atomic<int> next_path{0};
    auto worker = [&]() {
        for (;;) {
            const int p = next_path.fetch_add(1);
            if (p >= setup.n_paths) return;
            const std::uint64_t seed = rng::path_seed(setup.master_seed, p);

            std::optional<PathWalker> macro_walker;
            if (macro_ptr) macro_walker.emplace(*macro_ptr, seed);
            std::vector<PathWalker> micro_walkers;
            micro_walkers.reserve(setup.micro.size());
            for (const MicroEntry& me : setup.micro) micro_walkers.emplace_back(*me.ev, seed);

            CoupledPathResult res;
            res.micro.resize(setup.micro.size());
            res.micro_pairings.assign(setup.micro.size(), {});
            res.strong_gap.assign(setup.micro.size(), 0.0);
            std::vector<double> strong_prev(setup.micro.size(), 0.0);
            EquationRun macro_run;
            std::vector<EquationRun> micro_runs(setup.micro.size());
            const int n_stat = 1 + n_stat_modes;
            std::vector<double> macro_stat(n_stat, 0.0);
            std::vector<std::vector<double>> micro_stat(setup.micro.size(),
                                                        std::vector<double>(n_stat, 0.0));
            int stat_count = 0;

            for (int s = 0; s <= n_steps; ++s) {
                const double t = s * dt;
                if (s > 0) {
                    if (macro_walker) macro_walker->advance();
                    for (auto& w : micro_walkers) w.advance();
                }
                const double psi_t = setup.functionals.psi ? setup.functionals.psi(t) : 1.0;
                if (macro_walker)
                    observe_equation(macro_ctx, *macro_walker, macro_run, t, dt, psi_t);
                for (std::size_t e = 0; e < micro_walkers.size(); ++e)
                    observe_equation(micro_ctx[e], micro_walkers[e], micro_runs[e], t, dt, psi_t);

                const bool want_stationary =
                    setup.with_stationary && t >= setup.burn_in - 1e-12 &&
                    (s % setup.stationary_stride == 0 || s == n_steps);
                if (macro_walker && (setup.with_strong_gap || want_stationary)) {
                    const std::vector<double> macro_nodal =
                        macro_ptr->dofmap().to_nodes(macro_walker->state());
                    for (std::size_t e = 0; e < micro_walkers.size(); ++e) {
                        const MicroEntry& me = setup.micro[e];
                        const std::vector<double> filled = me.filler->apply(
                            me.ev->dofmap().to_nodes(micro_walkers[e].state()));
                        const std::vector<double> on_macro = me.to_macro->apply(filled);
                        if (setup.with_strong_gap) {
                            std::vector<double> diff = on_macro;
                            for (std::size_t i = 0; i < diff.size(); ++i)
                                diff[i] -= macro_nodal[i];
                            const double q = M_macro_all.quadratic_form(diff);
                            if (s > 0)
                                res.strong_gap[e] += 0.5 * (q + strong_prev[e]) * dt;
                            strong_prev[e] = q;
                        }
                        if (want_stationary) {
                            micro_stat[e][0] += M_macro_all.quadratic_form(on_macro);
                            for (int k = 0; k < n_stat_modes; ++k)
                                micro_stat[e][1 + k] += dot(on_macro, stat_w[k]);
                        }
                    }
                    if (want_stationary) {
                        macro_stat[0] += M_macro_all.quadratic_form(macro_nodal);
                        for (int k = 0; k < n_stat_modes; ++k)
                            macro_stat[1 + k] += dot(macro_nodal, stat_w[k]);
                        ++stat_count;
                    }
                }
            }

            res.macro = std::move(macro_run.series);
            res.macro_pairings = std::move(macro_run.pairings);
            for (std::size_t e = 0; e < micro_runs.size(); ++e) {
                res.micro[e] = std::move(micro_runs[e].series);
                res.micro_pairings[e] = std::move(micro_runs[e].pairings);
            }
            if (setup.with_stationary && stat_count > 0) {
                for (double& v : macro_stat) v /= stat_count;
                for (auto& ms : micro_stat)
                    for (double& v : ms) v /= stat_count;
                res.macro_stationary = std::move(macro_stat);
                res.micro_stationary = std::move(micro_stat);
            }
            data.paths[static_cast<std::size_t>(p)] = std::move(res);
        }
    };

    const int n_threads = std::max(1, setup.threads);
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return data;
}

// ---------------------------------------------------------------------------
// analysis of comparison data
// ---------------------------------------------------------------------------

namespace {

const EquationSeries& select_series(const CoupledPathResult& path, int which) {
    return which < 0 ? path.macro : path.micro[static_cast<std::size_t>(which)];
}

} // namespace

EnergySeries comparison_energy_series(const ComparisonData& data, int which, double theta_w,
                                      double noise_trace) {
    EnergySeries out;
    out.times = data.times;
    const std::size_t n_t = data.times.size();
    const std::size_t n_p = data.paths.size();
    std::vector<double> direct(n_p), ito(n_p);
    for (std::size_t k = 0; k < n_t; ++k) {
        for (std::size_t p = 0; p < n_p; ++p) {
            const EquationSeries& s = select_series(data.paths[p], which);
            direct[p] = 0.5 * theta_w * s.mass[k] + s.work[k];
            ito[p] = 0.5 * theta_w * s.mass[0] + s.fpair[k] +
                     data.times[k] * noise_trace / (2.0 * theta_w);
        }
        const Estimate e = estimate_mean(direct);
        const Estimate i = estimate_mean(ito);
        out.value.push_back(e.value);
        out.se.push_back(e.se);
        out.ito.push_back(i.value);
        out.ito_se.push_back(i.se);
    }
    return out;
}

SupGap energy_sup_gap(const ComparisonData& data, int micro_index) {
    const double theta = data.theta;
    const std::size_t n_t = data.times.size();
    const std::size_t n_p = data.paths.size();
    SupGap best;
    std::vector<double> gap(n_p);
    for (std::size_t k = 0; k < n_t; ++k) {
        for (std::size_t p = 0; p < n_p; ++p) {
            const EquationSeries& mi = data.paths[p].micro[static_cast<std::size_t>(micro_index)];
            const EquationSeries& ma = data.paths[p].macro;
            const double e_eps = 0.5 * mi.mass[k] + mi.work[k];
            const double e_mac = 0.5 * theta * ma.mass[k] + ma.work[k];
            gap[p] = e_eps - e_mac;
        }
        const Estimate e = estimate_mean(gap);
        if (std::fabs(e.value) > best.gap.value) {
            best.gap = {std::fabs(e.value), e.se};
            best.at_time = data.times[k];
        }
    }
    return best;
}

ItoCheck ito_identity_check(const ComparisonData& data, int which, double theta_w,
                            double noise_trace, double c_dt_allowance) {
    const std::size_t n_t = data.times.size();
    const std::size_t n_p = data.paths.size();
    ItoCheck check;
    check.pass = true;
    std::vector<double> diff(n_p);
    double worst_excess = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n_t; ++k) {
        for (std::size_t p = 0; p < n_p; ++p) {
            const EquationSeries& s = select_series(data.paths[p], which);
            const double direct = 0.5 * theta_w * s.mass[k] + s.work[k];
            const double ito = 0.5 * theta_w * s.mass[0] + s.fpair[k] +
                               data.times[k] * noise_trace / (2.0 * theta_w);
            diff[p] = direct - ito;
        }
        const Estimate e = estimate_mean(diff);
        const double allowance = 2.0 * e.se + c_dt_allowance;
        const double excess = std::fabs(e.value) - allowance;
        if (excess > worst_excess) {
            worst_excess = excess;
            check.max_gap = std::fabs(e.value);
            check.at_time = data.times[k];
            check.allowance = allowance;
        }
        if (excess > 0.0) check.pass = false;
    }
    return check;
}

std::vector<PairingGap> comparison_pairing_gaps(const ComparisonData& data, int micro_index) {
    const std::size_t n_p = data.paths.size();
    const std::size_t n_k = static_cast<std::size_t>(data.n_test_functions);
    std::vector<PairingGap> gaps(n_k);
    std::vector<double> samples(n_p);
    for (std::size_t k = 0; k < n_k; ++k) {
        for (std::size_t p = 0; p < n_p; ++p) {
            const double micro = data.paths[p].micro_pairings[static_cast<std::size_t>(
                micro_index)][k];
            const double macro = data.paths[p].macro_pairings[k];
            samples[p] = micro - data.theta * macro;
        }
        const Estimate e = estimate_mean(samples);
        gaps[k].k = static_cast<int>(k);
        gaps[k].gap = {std::fabs(e.value), e.se};
    }
    return gaps;
}

Estimate comparison_strong_gap(const ComparisonData& data, int micro_index) {
    std::vector<double> samples(data.paths.size());
    for (std::size_t p = 0; p < data.paths.size(); ++p)
        samples[p] = data.paths[p].strong_gap[static_cast<std::size_t>(micro_index)];
    return estimate_mean(samples);
}

StationaryReport stationary_experiment(const ComparisonData& data, int micro_index,
                                       double burn_in) {
    if (data.paths.empty() || data.paths.front().macro_stationary.empty())
        throw DimensionError("stationary_experiment: run_comparison without stationary data");
    const std::size_t n_p = data.paths.size();
    const std::size_t n_t = data.times.size();

    StationaryReport report;

    // ensemble-mean transients of ||u(t)||^2 for the rate fits
    auto mean_mass = [&](int which) {
        std::vector<double> m(n_t);
        std::vector<double> col(n_p);
        for (std::size_t k = 0; k < n_t; ++k) {
            for (std::size_t p = 0; p < n_p; ++p)
                col[p] = select_series(data.paths[p], which).mass[k];
            m[k] = pairwise_sum(col) / static_cast<double>(n_p);
        }
        return m;
    };
    const std::vector<double> macro_mass = mean_mass(-1);
    const std::vector<double> micro_mass = mean_mass(micro_index);
    report.fit_macro = fit_exponential(data.times, macro_mass);
    report.fit_micro = fit_exponential(data.times, micro_mass);
    report.gamma_macro = report.fit_macro.gamma;
    report.gamma_micro = report.fit_micro.gamma;

    // burn-in validation: the fitted transient must be below the noise floor
    // of the tail by the burn-in time
    auto tail_noise = [&](const std::vector<double>& m) {
        const double t_tail = std::max(burn_in, 0.5 * data.times.back());
        double s = 0.0, s2 = 0.0;
        int cnt = 0;
        for (std::size_t k = 0; k < n_t; ++k) {
            if (data.times[k] >= t_tail) {
                s += m[k];
                s2 += m[k] * m[k];
                ++cnt;
            }
        }
        if (cnt < 2) return 0.0;
        const double mean = s / cnt;
        return std::sqrt(std::max(0.0, s2 / cnt - mean * mean));
    };
    const double scale = std::max({std::fabs(report.fit_macro.offset),
                                   std::fabs(report.fit_micro.offset), 1e-12});
    report.burn_in_ok = true;
    for (const ExpFit* fit : {&report.fit_macro, &report.fit_micro}) {
        const double transient = std::fabs(fit->amplitude) * std::exp(-fit->gamma * burn_in);
        const double floor = std::max(3.0 * tail_noise(fit == &report.fit_macro ? macro_mass
                                                                                : micro_mass),
                                      1e-9 * scale);
        if (transient > floor) report.burn_in_ok = false;
    }
    if (!report.burn_in_ok)
        throw InsufficientBurnInError(
            "stationary_experiment: transient not decayed below the noise floor by burn-in");

    const std::size_t n_stat = data.paths.front().macro_stationary.size();
    std::vector<double> micro_col(n_p), macro_col(n_p);
    for (std::size_t q = 0; q < n_stat; ++q) {
        for (std::size_t p = 0; p < n_p; ++p) {
            micro_col[p] =
                data.paths[p].micro_stationary[static_cast<std::size_t>(micro_index)][q];
            macro_col[p] = data.paths[p].macro_stationary[q];
        }
        StationaryRow row;
        row.name = q == 0 ? "l2_sq" : "mode_" + std::to_string(q);
        row.micro = estimate_mean(micro_col);
        row.macro = estimate_mean(macro_col);
        row.gamma_fit = q == 0 ? report.gamma_macro : std::numeric_limits<double>::quiet_NaN();
        report.rows.push_back(std::move(row));
    }
    return report;
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

namespace {
std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
} // namespace

void write_convergence_csv(std::ostream& os, const ConvergenceTable& table) {
    os << "epsilon,metric,value,stderr\n";
    for (const auto& row : table.rows)
        os << fmt(row.eps) << ',' << row.metric << ',' << fmt(row.value) << ',' << fmt(row.se)
           << "\n";
}

void write_energy_csv(std::ostream& os, const EnergySeries& series) {
    os << "t,E,stderr,E_ito,stderr_ito\n";
    for (std::size_t k = 0; k < series.times.size(); ++k)
        os << fmt(series.times[k]) << ',' << fmt(series.value[k]) << ',' << fmt(series.se[k])
           << ',' << fmt(series.ito[k]) << ',' << fmt(series.ito_se[k]) << "\n";
}

void write_stationary_csv(std::ostream& os, const StationaryReport& report) {
    os << "functional,micro_est,micro_se,macro_est,macro_se,gamma_fit\n";
    for (const auto& row : report.rows)
        os << row.name << ',' << fmt(row.micro.value) << ',' << fmt(row.micro.se) << ','
           << fmt(row.macro.value) << ',' << fmt(row.macro.se) << ',' << fmt(row.gamma_fit)
           << "\n";
}

} // namespace perfhom
