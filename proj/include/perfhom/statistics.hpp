#pragma once

#include "perfhom/spde.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace perfhom {

// fixed-order pairwise summation; deterministic for any thread count upstream
double pairwise_sum(const double* v, std::size_t n);
double pairwise_sum(const std::vector<double>& v);

struct Estimate {
    double value = 0.0;
    double se = 0.0;
};

// mean and standard error of i.i.d. per-path samples
Estimate estimate_mean(const std::vector<double>& samples);

// tensor sine modes phi_k (L2-normalized) and the smooth bump time weight psi
struct TestFunctionSet {
    std::vector<std::function<double(double, double)>> phi;
    std::function<double(double)> psi; // on [0, T], compactly supported bump
};
TestFunctionSet default_test_functions(int count, const Rect& domain, double T);

struct EnergySeries {
    std::vector<double> times;
    std::vector<double> value, se;       // direct estimate of E(t)
    std::vector<double> ito, ito_se;     // Ito-identity estimate
};

struct PairingGap {
    int k = 0;
    Estimate gap; // | E int psi (u~_eps, phi_k) - theta E int psi (u, phi_k) |
};

struct ExpFit {
    double amplitude = 0.0;
    double gamma = 0.0;
    double offset = 0.0;
    double rms_residual = 0.0;
};
ExpFit fit_exponential(const std::vector<double>& t, const std::vector<double>& y);

// ---------------------------------------------------------------------------
// Operations on recorded sample paths (reference implementations; the coupled
// engine below reproduces them streaming for large ensembles).
// ---------------------------------------------------------------------------

// E(t) = theta_w/2 E||u||^2_M + E int_0^t u^T K u, against the Ito identity
// E_ito(t) = theta_w/2 E||u0||^2 + E int_0^t (f,u) + t/(2 theta_w) sum_i ||g_i||^2.
// With theta_w = 1 this is the microscopic energy functional; with theta_w =
// theta it is the homogenized one (mass term carries the density theta).
EnergySeries energy_series(const std::vector<SamplePath>& paths, const Evolution& ev);
EnergySeries energy_series_micro(const std::vector<SamplePath>& paths, const Evolution& ev);
EnergySeries energy_series_macro(const std::vector<SamplePath>& paths, const Evolution& ev);

std::vector<PairingGap> weak_pairing_gap(const std::vector<SamplePath>& micro_paths,
                                         const Evolution& micro_ev,
                                         const std::vector<SamplePath>& macro_paths,
                                         const Evolution& macro_ev, double theta,
                                         const TestFunctionSet& fs);

Estimate strong_l2_gap(const std::vector<SamplePath>& micro_paths, const Evolution& micro_ev,
                       const PerforatedMesh& micro_mesh,
                       const std::vector<SamplePath>& macro_paths, const Evolution& macro_ev);

// ---------------------------------------------------------------------------
// Coupled comparison engine: one macro ensemble and one micro ensemble per
// eps, driven by common random numbers (shared (path, step, mode) streams).
// ---------------------------------------------------------------------------

struct MicroEntry {
    double eps = 0.0;
    const Evolution* ev = nullptr;
    const PerforatedMesh* mesh = nullptr;
    const HarmonicFiller* filler = nullptr;
    const InterpolationMap* to_macro = nullptr; // background nodes -> macro nodes
};

struct ComparisonSetup {
    const Evolution* macro = nullptr;
    std::vector<MicroEntry> micro;
    int n_paths = 0;
    std::uint64_t master_seed = 0;
    int threads = 1;
    TestFunctionSet functionals;
    bool with_strong_gap = true;
    bool with_stationary = false;
    double burn_in = 0.0;
    int stationary_stride = 10;
};

struct EquationSeries {
    std::vector<double> mass;  // ||u(t)||^2_M per grid point
    std::vector<double> work;  // cumulative trapezoid of u^T K u
    std::vector<double> fpair; // cumulative trapezoid of (f, u)_M
    double max_residual = 0.0;
};

struct CoupledPathResult {
    EquationSeries macro;
    std::vector<EquationSeries> micro;              // per eps
    std::vector<double> macro_pairings;             // per phi_k: int psi (u, phi_k)
    std::vector<std::vector<double>> micro_pairings; // [eps][k], zero-extended pairing
    std::vector<double> strong_gap;                 // per eps: int ||P_e u_e - u||^2
    std::vector<double> macro_stationary;           // time averages: l2^2, modes...
    std::vector<std::vector<double>> micro_stationary; // [eps][...], fill-extended
};

struct ComparisonData {
    std::vector<double> times;
    std::vector<double> eps;
    double theta = 1.0;
    std::uint64_t master_seed = 0;
    int n_test_functions = 0;
    std::vector<CoupledPathResult> paths; // indexed by path
};

ComparisonData run_comparison(const ComparisonSetup& setup);

// ---------------------------------------------------------------------------
// analysis of comparison data
// ---------------------------------------------------------------------------

// which equation: -1 macro, otherwise micro index
EnergySeries comparison_energy_series(const ComparisonData& data, int which, double theta_w,
                                      double noise_trace);

struct SupGap {
    Estimate gap;   // |E^eps - E^0| at its maximizing grid time (paired SE)
    double at_time = 0.0;
};
SupGap energy_sup_gap(const ComparisonData& data, int micro_index);

struct ItoCheck {
    double max_gap = 0.0;    // max_t |direct - ito| of the ensemble means
    double at_time = 0.0;
    double allowance = 0.0;  // 2 SE + C dt at that time
    bool pass = false;
};
ItoCheck ito_identity_check(const ComparisonData& data, int which, double theta_w,
                            double noise_trace, double c_dt_allowance);

std::vector<PairingGap> comparison_pairing_gaps(const ComparisonData& data, int micro_index);

Estimate comparison_strong_gap(const ComparisonData& data, int micro_index);

struct StationaryRow {
    std::string name;
    Estimate micro, macro;
    double gamma_fit = 0.0; // NaN when not fitted for this row
};
struct StationaryReport {
    std::vector<StationaryRow> rows;
    double gamma_micro = 0.0;
    double gamma_macro = 0.0;
    ExpFit fit_micro, fit_macro;
    bool burn_in_ok = false;
};
// micro_index selects the eps used for the long-time comparison; throws
// InsufficientBurnInError if the fitted transient is not below the noise
// floor by the burn-in time
StationaryReport stationary_experiment(const ComparisonData& data, int micro_index,
                                       double burn_in);

struct ConvergenceRow {
    double eps = 0.0;
    std::string metric;
    double value = 0.0;
    double se = 0.0;
};
struct ConvergenceTable {
    std::vector<ConvergenceRow> rows;
};
void write_convergence_csv(std::ostream& os, const ConvergenceTable& table);
void write_energy_csv(std::ostream& os, const EnergySeries& series);
void write_stationary_csv(std::ostream& os, const StationaryReport& report);

} // namespace perfhom
