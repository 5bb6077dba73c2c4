import math

import pytest

import perfhom as ph

CELL_CFG = """
[geometry]
hole = none
eps = 0.25
cell_h = 0.1
[coefficient]
preset = diag 2 3
alpha = 2
bound = 3
"""

DISK_CFG = """
[geometry]
hole = disk 0.5 0.5 0.25
eps = 0.25
cell_h = 0.05
h = 0.0625
[coefficient]
preset = identity
[noise]
m = 4
sigma = 0.2
seed = 12
[problem]
f = const 1.0
u0 = sine 1.0
T = 0.05
dt = 0.005
[experiment]
paths = 4
threads = 1
"""


def test_version():
    assert ph.__version__


def test_cell_solve_constant_coefficient():
    cfg = ph.RunConfig.from_text(CELL_CFG)
    sol = ph.solve_cell(cfg)
    assert sol["theta"] == pytest.approx(1.0, abs=1e-12)
    assert sol["B"][0][0] == pytest.approx(2.0, abs=1e-10)
    assert sol["B"][1][1] == pytest.approx(3.0, abs=1e-10)
    assert abs(sol["B"][0][1]) < 1e-10
    assert sol["ellipticity"] == pytest.approx(2.0, abs=1e-10)


def test_perforated_mesh_volume_ratio():
    cfg = ph.RunConfig.from_text(DISK_CFG)
    info = ph.perforated_mesh_info(cfg, 0.25)
    assert info["holes"] == 16
    theta = 1.0 - math.pi / 16.0
    assert info["volume_ratio"] == pytest.approx(theta, rel=1e-9)


def test_invalid_config_raises():
    with pytest.raises(ValueError):
        ph.RunConfig.from_text("[geometry]\neps = 0.1 0.2\n")


def test_wiener_increments_deterministic():
    a = ph.wiener_increments(123, 7, 4, 0.01)
    b = ph.wiener_increments(123, 7, 4, 0.01)
    c = ph.wiener_increments(124, 7, 4, 0.01)
    assert a == b
    assert a != c
    assert len(a) == 4


def test_simulate_micro_energy_series():
    cfg = ph.RunConfig.from_text(DISK_CFG)
    out = ph.simulate(cfg, "micro", 0.25)
    n = round(0.05 / 0.005) + 1
    assert len(out["t"]) == n
    assert len(out["E"]) == n
    assert out["E"][0] > 0.0  # nonzero initial energy from u0
    assert out["max_residual"] <= 1e-9
    assert out["wellposed_margin"] >= 0.0
    assert all(math.isfinite(v) for v in out["E"])
