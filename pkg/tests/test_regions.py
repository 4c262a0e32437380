import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from gcclab.geometry import Domain, GeometryError, build_grid
from gcclab.regions import (Chart, ControlRegion, EscapePotential, InfeasibleBudget, build_admissible_region,
                            build_overlap_decomposition, check_epsilon_controllable, corner_patch, eval_escape,
                            frame_region, verify_escape_conditions)


@pytest.fixture(scope="module")
def build512():
    g = build_grid(Domain.unit_square(), 512)
    return g, build_admissible_region(g, 0.1, 0.05, 4)


def test_band_budget(build512):
    _, b = build512
    for m in b.band_measures:
        assert m.interior < 0.05 / 8
        assert m.boundary < 0.05 / 8


def test_omega_under_budget(build512):
    g, b = build512
    m = b.omega.measure
    assert m.interior + m.boundary < 0.1
    assert b.omega.tag == "admissible"


def test_infeasible_at_128_names_minimal_epsilon():
    g = build_grid(Domain.unit_square(), 128)
    with pytest.raises(InfeasibleBudget) as exc:
        build_admissible_region(g, 0.1, 0.05, 4)
    assert exc.value.eps_min > 0.1


def test_bad_budgets():
    g = build_grid(Domain.unit_square(), 64)
    with pytest.raises(ValueError):
        build_admissible_region(g, 0.1, 0.1, 4)
    with pytest.raises(ValueError):
        build_admissible_region(g, 0.1, 0.05, 5)


def test_complement_split(build512):
    _, b = build512
    om = b.omega.cells
    part = om & b.V
    assert not (b.complement & part).any()
    assert np.array_equal(b.complement | part, om)


def test_escape_conditions_pass(build512):
    g, b = build512
    rep = verify_escape_conditions(b.potential, b.V, g, 1e-6)
    assert rep.passed, rep.summary()


def test_sabotage_constant_fails_d3():
    g = build_grid(Domain.unit_square(), 32)
    d = EscapePotential((Chart("interior", (0.5, 0.5), (0.0, 0.0), 1.0, 0.0),), g)
    rep = verify_escape_conditions(d, g.inside, g, 1e-6)
    assert not rep.conditions["d3"].passed


def test_sabotage_concave_fails_d2():
    g = build_grid(Domain.unit_square(), 32)
    d = EscapePotential.single(g, (0.5, 0.5), offset=5.0, scale=-1.0)
    rep = verify_escape_conditions(d, g.inside, g, 1e-6)
    assert not rep.conditions["d2"].passed
    assert_allclose(rep.conditions["d2"].worst, -1.0)


def test_eval_interior_chart_center():
    g = build_grid(Domain.unit_square(), 16)
    v, grad, H = eval_escape(EscapePotential.single(g, (0.5, 0.5)), (0.5, 0.5))
    assert v == 1.0
    assert_allclose(grad, 0.0)
    assert_allclose(H, np.eye(2))


def test_eval_boundary_chart_sign():
    g = build_grid(Domain.unit_square(), 16)
    d = EscapePotential.single(g, (0.5, 0.0), axis=(0.0, 1.0))
    _, grad, _ = eval_escape(d, (0.3, 0.0))
    assert_allclose(grad @ np.array([0.0, -1.0]), -1.0)


def test_eval_outside_rejected():
    g = build_grid(Domain.unit_square(), 16)
    with pytest.raises(GeometryError):
        eval_escape(EscapePotential.single(g, (0.5, 0.5)), (1.5, 0.5))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(-5, 5), st.floats(-5, 5))
def test_flat_hessian_is_identity(x, y, a, b):
    g = build_grid(Domain.unit_square(), 16)
    _, _, H = eval_escape(EscapePotential.single(g, (0.3, 0.6)), (x, y))
    X = np.array([a, b])
    assert_allclose(X @ H @ X, X @ X, rtol=1e-14, atol=1e-14)


def test_overlap_is_four_cycle(build512):
    g, b = build512
    dec = build_overlap_decomposition(g, b)
    assert sorted(dec.edges) == [(0, 1), (0, 2), (1, 3), (2, 3)]
    assert dec.degree() == [2, 2, 2, 2]
    assert all(dec.checks.values()), dec.checks


def test_controllability_examples():
    ok, m = check_epsilon_controllable(corner_patch(build_grid(Domain.unit_square(), 20)), 0.5)
    assert ok and abs(m.total - 0.21) < 1e-12
    g = build_grid(Domain.unit_square(), 128)
    assert not check_epsilon_controllable(frame_region(g), 0.5)[0]
    assert check_epsilon_controllable(ControlRegion.empty(g), 1e-9)[0]


def _random_region(g, seed, p):
    return ControlRegion.from_cells(g, np.random.default_rng(seed).random(g.shape) < p)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.floats(0.0, 0.3), st.floats(0.0, 0.3))
def test_union_and_intersection_laws(s1, s2, p1, p2):
    g = build_grid(Domain.unit_square(), 16)
    A, B = _random_region(g, s1, p1), _random_region(g, s2, p2)
    ea, eb = A.measure.total * 1.01 + 1e-9, B.measure.total * 1.01 + 1e-9
    assert check_epsilon_controllable(A.union(B), ea + eb)[0]
    assert check_epsilon_controllable(A.intersection(B), ea)[0]
    assert check_epsilon_controllable(A, ea * 2)[0]
