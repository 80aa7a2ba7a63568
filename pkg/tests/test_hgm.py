import math

import numpy as np
import pytest

from hgmfilter.errors import DimensionMismatch, NonfiniteState, PoleOnPath
from hgmfilter.hgm import LinePath, SolverConfig, pole_scan, solve_ivp, transport
from hgmfilter.pfaffian import derive_coefficient_rows, fixture_path, load_fixture, loads_pfaffian


def cos_q(p):
    x1, x2 = p
    return np.array([math.cos(x1 * x2), -x1 * math.sin(x1 * x2)])


def gauss_q(x):
    return math.sqrt(2 * math.pi) * math.exp(-x * x)


@pytest.fixture(scope="module")
def cos_sys():
    return load_fixture("cos_example.pfn")


@pytest.mark.parametrize("method", ["abm4", "rk4"])
def test_cos_transport(cos_sys, method):
    q = transport(cos_sys, [1, 1], [2, 1.5], cos_q([1, 1]), SolverConfig(method=method, steps=1000))
    exact = np.array([math.cos(3), -2 * math.sin(3)])
    assert np.max(np.abs(q - exact) / np.abs(exact)) <= 1e-6


def test_gauss1d_transport():
    sys = load_fixture("gauss1d.pfn")
    q = transport(sys, [0.0], [1.0], [math.sqrt(2 * math.pi)], SolverConfig(steps=1000))
    assert q[0] == pytest.approx(math.sqrt(2 * math.pi) * math.exp(-1), abs=1e-8)
    assert math.sqrt(2 * math.pi) == pytest.approx(2.5066282746)


def test_zero_length_path(cos_sys):
    q0 = np.array([0.3, -1.2])
    q = solve_ivp(cos_sys, LinePath([0.0, 1.0], [0.0, 1.0]), q0)
    assert np.array_equal(q, q0)
    # even on a pole there is nothing to integrate
    assert pole_scan(cos_sys, LinePath([1.0, 1.0], [1.0, 1.0]), SolverConfig()) is None


def test_default_grid_size():
    cfg = SolverConfig()
    assert cfg.steps_for(LinePath([0.0], [0.05])) == 100
    assert cfg.steps_for(LinePath([0.0, 0.0], [3.0, 4.0])) == 5000
    assert SolverConfig(pole_scan_samples=10).samples_for(LinePath([0.0], [1.0])) == 1000
    assert SolverConfig(steps=10, pole_scan_samples=50).samples_for(LinePath([0.0], [1.0])) == 50


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(method="abm4", steps=3)
    with pytest.raises(ValueError):
        SolverConfig(method="euler")
    with pytest.raises(ValueError):
        SolverConfig(min_denominator=0)
    SolverConfig(method="rk4", steps=1)


def test_dimension_checks(cos_sys):
    with pytest.raises(DimensionMismatch):
        solve_ivp(cos_sys, LinePath([1.0], [2.0]), [1.0, 0.0])
    with pytest.raises(DimensionMismatch):
        solve_ivp(cos_sys, LinePath([1.0, 1.0], [2.0, 1.0]), [1.0])
    with pytest.raises(DimensionMismatch):
        LinePath([1.0, 1.0], [2.0])


# pole scanning


def test_pole_scan_clear_path(cos_sys):
    assert pole_scan(cos_sys, LinePath([1, 1], [2, 1.5]), SolverConfig()) is None


def test_pole_scan_crossing(cos_sys):
    hit = pole_scan(cos_sys, LinePath([-1, 1], [1, 1]), SolverConfig())
    assert hit is not None
    assert hit.s == pytest.approx(0.5)
    assert hit.variable == "X1"
    with pytest.raises(PoleOnPath) as info:
        transport(cos_sys, [-1, 1], [1, 1], [1.0, 0.0])
    assert info.value.s == pytest.approx(0.5)


def test_pole_scan_sign_change_between_samples(cos_sys):
    # X1 = 0 at s = 1/3, never a sample point of a 10-interval grid
    cfg = SolverConfig(method="rk4", steps=10, min_steps=1)
    hit = pole_scan(cos_sys, LinePath([-1, 1], [2, 1]), cfg)
    assert hit is not None
    assert hit.s == pytest.approx(1 / 3, abs=1e-12)


SIGMA_DEN = """pfaffian v1
vars: xi, z4
nxi: 1
dim: 1
monomials: 1
matrix xi:
(1,1) = 16/25*z4 + 1
end
matrix z4:
(1,1) = xi/(16*z4 + 25)
end
"""


def test_positive_variance_paths_avoid_pole():
    sys = loads_pfaffian(SIGMA_DEN)
    assert pole_scan(sys, LinePath([0.0, 0.1], [0.0, 3.0]), SolverConfig()) is None
    hit = pole_scan(sys, LinePath([0.0, 1.0], [0.0, -3.0]), SolverConfig())
    assert hit is not None and hit.variable == "z4"
    assert hit.s == pytest.approx((1 + 25 / 16) / 4, abs=1e-3)


def test_solve_rechecks_nodes(cos_sys):
    with pytest.raises(PoleOnPath):
        solve_ivp(cos_sys, LinePath([-1, 1], [1, 1]), [1.0, 0.0], SolverConfig(steps=100))


def test_nonfinite_state():
    sys = loads_pfaffian("pfaffian v1\nvars: X\nnxi: 0\ndim: 1\nmonomials: 1\nmatrix X:\n(1,1) = 10^300\nend\n")
    with pytest.raises(NonfiniteState) as info:
        solve_ivp(sys, LinePath([0.0], [1.0]), [1.0], SolverConfig(steps=100))
    assert 0 < info.value.s <= 1


# properties


def _error(sys, method, steps):
    q = solve_ivp(sys, LinePath([1, 1], [2, 1.5]), cos_q([1, 1]), SolverConfig(method=method, steps=steps, min_steps=4))
    return float(np.max(np.abs(q - cos_q([2, 1.5]))))


@pytest.mark.parametrize("method", ["abm4", "rk4"])
def test_fourth_order_convergence(cos_sys, method):
    errs = [_error(cos_sys, method, n) for n in (80, 160, 320)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(12 <= r <= 20 for r in ratios), ratios


def test_path_independence(cos_sys):
    cfg = SolverConfig()
    q0 = cos_q([1, 1])
    direct = transport(cos_sys, [1, 1], [2, 1.5], q0, cfg)
    mid = transport(cos_sys, [1, 1], [2, 1], q0, cfg)
    via = transport(cos_sys, [2, 1], [2, 1.5], mid, cfg)
    assert np.allclose(direct, via, rtol=1e-6, atol=0)


def test_linearity(cos_sys):
    path = LinePath([1, 1], [2, 1.5])
    q0 = cos_q([1, 1])
    a = solve_ivp(cos_sys, path, q0)
    b = solve_ivp(cos_sys, path, -3.5 * q0)
    assert np.allclose(b, -3.5 * a, rtol=1e-13, atol=1e-15)


def test_second_component_is_x2_derivative(cos_sys):
    q0 = cos_q([1, 1])
    target = np.array([2.0, 1.5])
    q = transport(cos_sys, [1, 1], target, q0)
    h = 1e-3
    up = transport(cos_sys, target, target + [0, h], q, SolverConfig(steps=100))
    down = transport(cos_sys, target, target - [0, h], q, SolverConfig(steps=100))
    assert q[1] == pytest.approx((up[0] - down[0]) / (2 * h), abs=1e-4)


def test_rows_match_derivatives_of_transported_function():
    # treat X2 as the transform variable: rows must give d/dX2 and d2/dX2^2 of Q1
    text = fixture_path("cos_example.pfn").read_text().replace("vars: X1, X2", "vars: X2, X1").replace("nxi: 0", "nxi: 1")
    sys = loads_pfaffian(text)
    rows = derive_coefficient_rows(sys)
    start, end = np.array([1.0, 1.0]), np.array([1.5, 2.0])  # (X2, X1)
    q0 = cos_q([start[1], start[0]])
    q = transport(sys, start, end, q0)
    _, c1, c2 = rows.evaluate(end)
    h = 1e-3
    f = lambda d: transport(sys, end, end + [d, 0], q, SolverConfig(steps=100))[0]
    d1 = (f(h) - f(-h)) / (2 * h)
    d2 = (f(h) - 2 * q[0] + f(-h)) / h**2
    assert c1[0] @ q == pytest.approx(d1, abs=1e-5)
    assert c2[0, 0] @ q == pytest.approx(d2, abs=1e-4)
