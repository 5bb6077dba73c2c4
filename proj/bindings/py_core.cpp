#include "perfhom/cell_problem.hpp"
#include "perfhom/config.hpp"
#include "perfhom/errors.hpp"
#include "perfhom/pipeline.hpp"
#include "perfhom/version.hpp"

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace perfhom;

namespace {

RunConfig config_from_text(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is);
}

py::dict cell_to_dict(const CellSolution& sol) {
    py::dict d;
    d["B"] = std::vector<std::vector<double>>{{sol.B[0], sol.B[1]}, {sol.B[2], sol.B[3]}};
    d["theta"] = sol.theta;
    d["residuals"] = std::vector<double>{sol.residual1, sol.residual2};
    d["ellipticity"] = ellipticity_constant(sol.B);
    d["h"] = sol.h;
    return d;
}

py::dict series_to_dict(const EnergySeries& s) {
    py::dict d;
    d["t"] = s.times;
    d["E"] = s.value;
    d["stderr"] = s.se;
    d["E_ito"] = s.ito;
    d["stderr_ito"] = s.ito_se;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Homogenization toolkit for stochastic heat equations on perforated domains";
    m.attr("__version__") = kVersion;

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<GeometryError>(m, "GeometryError", PyExc_ValueError);
    py::register_exception<MeshError>(m, "MeshError", PyExc_ValueError);
    py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);

    py::class_<RunConfig>(m, "RunConfig")
        .def_static("from_text", &config_from_text, py::arg("text"))
        .def_static("from_file", &parse_config_file, py::arg("path"))
        .def_readwrite("out_dir", &RunConfig::out_dir)
        .def_readwrite("threads", &RunConfig::threads)
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("paths", &RunConfig::paths)
        .def("canonical_text", &canonical_config_text)
        .def("validate", &RunConfig::validate);

    m.def(
        "solve_cell",
        [](const RunConfig& cfg) {
            const PeriodicCell cell = cfg.make_cell();
            return cell_to_dict(solve_cell_problem(cell, cfg.cell_h));
        },
        py::arg("config"), "Solve the periodic cell problem: correctors, B, theta.");

    m.def(
        "cell_mesh_info",
        [](const RunConfig& cfg) {
            const PeriodicCell cell = cfg.make_cell();
            const CellMesh cm = build_cell_mesh(cell, cfg.cell_h);
            py::dict d;
            d["nodes"] = cm.mesh.n_nodes();
            d["triangles"] = cm.mesh.n_tris();
            d["hole_edges"] = cm.n_hole_edges();
            d["periodic_dofs"] = cm.n_periodic_dofs();
            d["area"] = cm.mesh.area();
            return d;
        },
        py::arg("config"));

    m.def(
        "perforated_mesh_info",
        [](const RunConfig& cfg, double eps) {
            const PeriodicCell cell = cfg.make_cell();
            const PerforatedMesh pm = build_perforated_mesh(cfg.domain, cell, eps, cfg.h);
            py::dict d;
            d["nodes"] = pm.mesh.n_nodes();
            d["triangles"] = pm.mesh.n_tris();
            d["holes"] = pm.n_holes;
            d["volume_ratio"] = pm.volume_ratio;
            d["background_nodes"] = pm.background.mesh.n_nodes();
            return d;
        },
        py::arg("config"), py::arg("eps"));

    m.def(
        "simulate",
        [](const RunConfig& cfg, const std::string& which, double eps) {
            SimulateResult result;
            if (which == "micro") {
                result = run_simulate(cfg, EquationKind::Micro,
                                      eps > 0.0 ? eps : cfg.eps_list.front(), nullptr);
            } else if (which == "macro") {
                const PeriodicCell cell = cfg.make_cell();
                const CellSolution sol = solve_cell_problem(cell, cfg.cell_h);
                CellSolutionSummary summary{sol.B, sol.theta, sol.residual1, sol.residual2,
                                            sol.h};
                result = run_simulate(cfg, EquationKind::Macro, 0.0, &summary);
            } else {
                throw ConfigError("which must be 'micro' or 'macro'");
            }
            py::dict d = series_to_dict(result.energy);
            d["max_residual"] = result.max_residual;
            d["wellposed_margin"] = result.wellposed_margin;
            d["tag"] = result.tag;
            return d;
        },
        py::arg("config"), py::arg("which"), py::arg("eps") = 0.0,
        "Run one SPDE ensemble and return its energy series.");

    m.def(
        "compare",
        [](const RunConfig& cfg) {
            const PeriodicCell cell = cfg.make_cell();
            const CellSolution sol = solve_cell_problem(cell, cfg.cell_h);
            CellSolutionSummary summary{sol.B, sol.theta, sol.residual1, sol.residual2, sol.h};
            const CompareResult result = run_compare(cfg, summary);
            py::dict d;
            d["pass"] = result.failures.empty();
            d["failures"] = result.failures;
            py::list rows;
            for (const auto& row : result.table.rows) {
                py::dict r;
                r["eps"] = row.eps;
                r["metric"] = row.metric;
                r["value"] = row.value;
                r["stderr"] = row.se;
                rows.append(r);
            }
            d["table"] = rows;
            d["theta"] = result.theta;
            return d;
        },
        py::arg("config"), "Run the micro/macro effectivity experiments.");

    m.def(
        "wiener_increments",
        [](std::uint64_t path_seed, int step, int m_modes, double dt) {
            NoiseModel noise;
            noise.m = m_modes;
            noise.modes.resize(static_cast<std::size_t>(m_modes));
            return wiener_increments(noise, dt, step, path_seed);
        },
        py::arg("path_seed"), py::arg("step"), py::arg("m"), py::arg("dt"),
        "Counter-based N(0, dt) increments, reproducible by construction.");
}
