#pragma once

#include "perfhom/cell_problem.hpp"
#include "perfhom/config.hpp"
#include "perfhom/statistics.hpp"

#include <memory>
#include <string>
#include <vector>

namespace perfhom {

// --- cell command -----------------------------------------------------------

struct CellRunResult {
    CellSolution solution;
    std::vector<CellRefinementRow> refinement; // when experiment.cell_refine > 0
};

CellRunResult run_cell(const RunConfig& config);
// writes cell_solution.txt (+ cell_correctors.txt, cell_refinement.csv, manifest)
void write_cell_outputs(const RunConfig& config, const CellRunResult& result);
CellSolutionSummary load_cell_artifact(const std::string& out_dir);

// --- assembled simulation contexts ------------------------------------------

struct MicroContext {
    double eps = 0.0;
    std::unique_ptr<PerforatedMesh> mesh;
    std::unique_ptr<Evolution> ev;
    std::unique_ptr<HarmonicFiller> filler;
    std::unique_ptr<InterpolationMap> to_macro; // only when a macro mesh exists
};

struct MacroContext {
    std::unique_ptr<PerforatedMesh> mesh; // hole-free mesh of D
    std::unique_ptr<Evolution> ev;
};

// time grid override lets the stationary experiment reuse the builders
struct GridOverride {
    double T = 0.0, dt = 0.0;     // 0 = use config values
    double noise_scale = 1.0;     // 0 silences the noise (calibration runs)
};

std::unique_ptr<MicroContext> build_micro(const RunConfig& config, double eps,
                                          const GridOverride& grid = {});
// macro data follow the weak limits of the restricted micro data:
// f -> theta f, g -> theta g, u(0) = u0
std::unique_ptr<MacroContext> build_macro(const RunConfig& config,
                                          const CellSolutionSummary& cell,
                                          const GridOverride& grid = {});
void link_micro_to_macro(MicroContext& micro, const MacroContext& macro);

// --- simulate command --------------------------------------------------------

struct SimulateResult {
    EnergySeries energy;
    double max_residual = 0.0;
    double noise_trace = 0.0;
    double wellposed_margin = 0.0; // min over t of bound - estimate (>= 0 passes)
    std::string tag;               // "macro" or "micro_eps<...>"
};

SimulateResult run_simulate(const RunConfig& config, EquationKind kind, double eps,
                            const CellSolutionSummary* cell);
void write_simulate_outputs(const RunConfig& config, const SimulateResult& result);

// --- compare command ---------------------------------------------------------

struct CompareResult {
    ConvergenceTable table;
    std::vector<EnergySeries> micro_energy;
    EnergySeries macro_energy;
    StationaryReport stationary;
    bool has_stationary = false;
    std::vector<std::string> failures; // empty = PASS
    std::vector<double> eps;
    double theta = 1.0;
    // per-ensemble diagnostics (micro per eps, then macro last)
    std::vector<ItoCheck> ito_checks;
    std::vector<double> wellposed_margins;
};

CompareResult run_compare(const RunConfig& config, const CellSolutionSummary& cell);
void write_compare_outputs(const RunConfig& config, const CompareResult& result);

// well-posedness margin: min over grid times of
//   [theta ||u0||^2 + lambda^{-1} ||f||^2 t + theta^{-1} trace t + 3 SE] - estimate
double wellposed_margin(const ComparisonData& data, int which, const Evolution& ev);

void ensure_out_dir(const std::string& dir);
void write_text_file(const std::string& path, const std::string& content);

} // namespace perfhom
