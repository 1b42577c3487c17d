import numpy as np
import pytest

from levelopt.levelset import (
    NodalLevel,
    AnalyticLevel,
    TraceError,
    _field,
    _rk4,
    admissibility_check,
    circle_level,
    disk_level,
    extract_contour,
    hamiltonian_trace,
    observation_points,
    period_derivative,
    pin_zero,
    polyline_area,
    quadratic_level,
    variation_ode,
)
from levelopt.mesh import generate_structured

X0 = (0.25, 0.5)
ZERO = quadratic_level(np.zeros((2, 2)), (0.0, 0.0), 0.0)


@pytest.fixture(scope="module")
def circle_trace():
    return hamiltonian_trace(circle_level(), X0, 1e-4)


def test_circle_period_and_closure(circle_trace):
    assert abs(circle_trace.period - np.pi) <= 1e-6
    assert circle_trace.closure_defect <= 1e-9


@pytest.mark.parametrize("r0", [0.1, 0.4])
def test_period_independent_of_radius(r0):
    tr = hamiltonian_trace(circle_level(radius=r0), (0.5 - r0, 0.5), 1e-3)
    assert tr.period == pytest.approx(np.pi, abs=1e-6)


def test_rk4_order():
    errs = [abs(hamiltonian_trace(circle_level(), X0, dt).period - np.pi) for dt in (0.1, 0.05, 0.025)]
    for a, b in zip(errs, errs[1:]):
        assert 12.0 <= a / b <= 20.0


def test_hamiltonian_conserved(circle_trace):
    g = circle_level().value(circle_trace.points)
    assert np.abs(g).max() <= 1e-8


def test_unit_circle_pointwise():
    unit = quadratic_level(np.eye(2), (0.0, 0.0), -1.0)
    tr = hamiltonian_trace(unit, (1.0, 0.0), 1e-4)
    t = tr.times
    exact = np.column_stack([np.cos(2 * t), np.sin(2 * t)])
    assert np.abs(tr.points - exact).max() <= 1e-8


def test_trace_preconditions():
    with pytest.raises(TraceError):
        hamiltonian_trace(quadratic_level(np.eye(2), (0, 0), 1.0), (0.5, 0.5), 1e-3)
    with pytest.raises(TraceError):
        hamiltonian_trace(ZERO, (0.5, 0.5), 1e-3, level_tol=None)


def test_open_level_does_not_close():
    line = quadratic_level(np.zeros((2, 2)), (1.0, 0.0), -0.25)
    with pytest.raises(TraceError):
        hamiltonian_trace(line, X0, 1e-2, t_max=5.0)
    m = generate_structured(20)
    with pytest.raises(TraceError):
        hamiltonian_trace(NodalLevel(m, m.vertices[:, 0] - 0.25), X0, 1e-2)


def test_observation_points(circle_trace):
    pts = observation_points(circle_trace, 4)
    expect = [(0.25, 0.5), (0.5, 0.25), (0.75, 0.5), (0.5, 0.75)]
    assert np.abs(pts - np.array(expect)).max() <= 1e-8
    assert np.allclose(observation_points(circle_trace, 1), [X0])
    assert len(observation_points(circle_trace, 4, (1, 2))) == 2
    with pytest.raises(ValueError):
        observation_points(circle_trace, 4, (2, 4))


def test_variation_zero_direction(circle_trace):
    w = variation_ode(circle_level(), ZERO, circle_trace)
    assert np.allclose(w, 0.0)
    assert period_derivative(circle_trace, w) == 0.0


def test_theta_scaling_direction(circle_trace):
    g = circle_level()
    w = variation_ode(g, g, circle_trace)
    theta = period_derivative(circle_trace, w)
    assert theta == pytest.approx(-circle_trace.period, rel=1e-4)


def _period_fd(g, h, lam=1e-5):
    def T(s):
        return hamiltonian_trace(g + h.scaled(s), X0, 1e-3, level_tol=None).period
    return (T(lam) - T(-lam)) / (2 * lam)


def test_theta_against_fd_of_period():
    g = circle_level()
    tr = hamiltonian_trace(g, X0, 1e-3)
    # h vanishes at x0 so x0 stays on every perturbed zero level
    h = quadratic_level(np.diag([1.0, 0.0]), (-0.5, 0.0), 0.0625)
    theta = period_derivative(tr, variation_ode(g, h, tr))
    assert theta == pytest.approx(_period_fd(g, h), rel=1e-3)


def test_variation_against_fd_of_trajectory():
    g = circle_level()
    tr = hamiltonian_trace(g, X0, 1e-3)
    h = quadratic_level(np.diag([1.0, 0.0]), (-0.5, 0.0), 0.0625)
    w = variation_ode(g, h, tr)
    lam = 1e-5
    n = int(np.floor(tr.period / tr.dt))
    ends = []
    for s in (lam, -lam):
        f = _field(g + h.scaled(s))
        z = tr.x0.copy()
        for _ in range(n):
            z = _rk4(f, z, tr.dt)
        ends.append(_rk4(f, z, tr.period - n * tr.dt))
    fdw = (ends[0] - ends[1]) / (2 * lam)
    assert np.linalg.norm(fdw) > 1e-3
    assert np.linalg.norm(w - fdw) <= 1e-3 * np.linalg.norm(fdw)


def test_theta_component_formulas_agree():
    g = circle_level()
    start = (0.5 + 0.25 * np.cos(2.3), 0.5 + 0.25 * np.sin(2.3))
    tr = hamiltonian_trace(g, start, 1e-3)
    h = quadratic_level(np.diag([1.0, 2.0]), (0.0, 0.0), 0.0)
    h = h + AnalyticLevel(lambda x: -h.value(start) + 0 * x[..., 0], lambda x: np.zeros(np.shape(x)),
                          lambda x: np.zeros((2, 2)))
    w = variation_ode(g, h, tr)
    v = tr.end_velocity
    assert -w[0] / v[0] == pytest.approx(-w[1] / v[1], rel=1e-6)


def test_nodal_trace_close_to_circle():
    m = generate_structured(80)
    tr = hamiltonian_trace(NodalLevel(m, disk_level(m)), X0, 1e-3, level_tol=1e-3)
    assert tr.period == pytest.approx(np.pi, rel=5e-2)


def test_admissibility():
    m = generate_structured(40)
    G = disk_level(m, pin=[X0])
    assert admissibility_check(G, m, [X0]).ok
    assert not admissibility_check(-np.ones(m.n), m).positive_on_boundary
    plateau = G.copy()
    plateau[m.triangles[0]] = 0.0
    assert not admissibility_check(plateau, m).gradient_nondegenerate


def test_pin_zero_interpolation():
    m = generate_structured(30)
    pts = [(0.2517, 0.4431), (0.61, 0.27)]
    G = pin_zero(m, circle_level().nodal(m), pts)
    assert max(abs(m.evaluate(G, p)) for p in pts) <= 1e-14


def test_contours():
    m = generate_structured(20)
    lines = extract_contour(m, m.vertices[:, 0] - 0.5)
    assert len(lines) == 1
    assert np.abs(lines[0][:, 0] - 0.5).max() <= m.h
    assert extract_contour(m, np.ones(m.n)) == []
    m = generate_structured(60)
    lines = extract_contour(m, disk_level(m))
    assert len(lines) == 1 and np.allclose(lines[0][0], lines[0][-1])
    assert polyline_area(lines[0]) == pytest.approx(np.pi / 16, abs=3 * m.h)
    r = np.linalg.norm(lines[0] - 0.5, axis=1)
    assert np.abs(r - 0.25).max() <= m.h
