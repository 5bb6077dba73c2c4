"""Homogenization toolkit for stochastic heat equations on perforated domains."""

from ._core import (
    ConfigError,
    GeometryError,
    MeshError,
    RunConfig,
    SolverError,
    __version__,
    cell_mesh_info,
    compare,
    perforated_mesh_info,
    simulate,
    solve_cell,
    wiener_increments,
)

__all__ = [
    "ConfigError",
    "GeometryError",
    "MeshError",
    "RunConfig",
    "SolverError",
    "__version__",
    "cell_mesh_info",
    "compare",
    "perforated_mesh_info",
    "simulate",
    "solve_cell",
    "wiener_increments",
]
