import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from gcclab.geometry import Domain, SpeedField, build_grid
from gcclab.rays import (RayState, Sampler, check_escape_potential_condition, check_gcc, check_obstacle_condition,
                         gcc_time_from_potential, trace_ray, unfolded_position)
from gcclab.regions import EscapePotential, boundary_partition, frame_region, preset_region, whole_region

SQ = Domain.unit_square()


@pytest.fixture(scope="module")
def g64():
    return build_grid(SQ, 64)


def test_single_reflection():
    r = trace_ray(SQ, RayState((0.5, 0.25), np.array([1.0, 1.0]) / np.sqrt(2)), t_max=0.8)
    e = r.events[0]
    assert_allclose(e.position, (1.0, 0.75), atol=1e-14)
    assert_allclose(e.time, 0.5 * np.sqrt(2), atol=1e-14)
    assert_allclose(e.reflected, np.array([-1.0, 1.0]) / np.sqrt(2), atol=1e-14)


def test_unfolding_fifty_reflections():
    x0, d = np.array([0.3, 0.41]), np.array([np.cos(0.7), np.sin(0.7)])
    r = trace_ray(SQ, RayState(x0, d), t_max=40.0)
    assert len(r.events) >= 50
    assert_allclose(r.final.x, unfolded_position(x0, d, 40.0), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.01, 2 * np.pi - 0.01), st.floats(0.1, 10.0))
def test_unfolding_property(x, y, a, t):
    d = np.array([np.cos(a), np.sin(a)])
    r = trace_ray(SQ, RayState((x, y), d), t_max=t, record_path=False)
    if not r.terminated_at_corner:
        assert_allclose(r.final.x, unfolded_position((x, y), d, t), atol=1e-9)


def test_time_reversal():
    x0 = np.array([0.2, 0.7])
    r = trace_ray(SQ, RayState(x0, np.array([np.cos(1.1), np.sin(1.1)])), t_max=7.3)
    back = trace_ray(SQ, RayState(r.final.x, -r.final.p), t_max=7.3)
    assert_allclose(back.final.x, x0, atol=1e-9)


def test_speed_preserved_along_curved_ray():
    dom = Domain.unit_square(SpeedField.gaussian_bump(0.5))
    x0 = np.array([0.2, 0.3])
    c0 = dom.speed.value(*x0)
    for t in (0.5, 1.7, 3.0):
        r = trace_ray(dom, RayState(x0, c0 * np.array([1.0, 0.4]) / np.hypot(1.0, 0.4)), t_max=t)
        assert_allclose(np.hypot(*r.final.p), dom.speed.value(*r.final.x), rtol=1e-6)


def test_omega3_has_trapped_rays(g64):
    rep = check_gcc(SQ, preset_region("omega3", g64), 20.0, Sampler(8, 16))
    assert not rep.passed
    assert len(rep.trapped) > 0


def test_omega1_passes_at_three(g64):
    rep = check_gcc(SQ, frame_region(g64), 3.0, Sampler(16, 32))
    assert rep.passed, rep.summary()
    assert rep.T_hat <= 3.0


def test_whole_domain_hits_immediately(g64):
    rep = check_gcc(SQ, whole_region(g64), 1.0, Sampler(8, 8))
    assert rep.T_hat == 0.0 and rep.hit_fraction == 1.0


def test_potential_times(g64):
    centred = gcc_time_from_potential(EscapePotential.single(g64, (0.5, 0.5)), g64)
    corner = gcc_time_from_potential(EscapePotential.single(g64, (0.0, 0.0)), g64)
    assert_allclose(centred.T, np.sqrt(2), rtol=1e-12)
    assert_allclose(corner.T, 2 * np.sqrt(2), rtol=1e-12)
    assert centred.valid
    # the corner potential is critical at the corner itself
    assert not corner.valid and corner.min_gradient == 0.0


def test_escape_condition_needs_whole_boundary(g64):
    d = EscapePotential.single(g64, (0.5, 0.5))
    m = len(g64.segments)
    assert check_escape_potential_condition(d, np.ones(m, bool), np.sqrt(2), g64).passed
    rep = check_escape_potential_condition(d, np.zeros(m, bool), np.sqrt(2), g64)
    assert not rep.boundary_ok and len(rep.offending_segments) == m
    assert not check_escape_potential_condition(d, np.ones(m, bool), 1.0, g64).gradient_ok


def test_obstacle_condition_bottom_side(g64):
    d = EscapePotential.single(g64, (0.5, -0.5))
    bottom = g64.segments.normal[:, 1] < -0.5
    assert check_obstacle_condition(d, bottom, 10.0, g64).passed
    top = g64.segments.normal[:, 1] > 0.5
    assert not check_obstacle_condition(d, top, 10.0, g64).boundary_ok


def test_boundary_partition(g64):
    inner = boundary_partition(EscapePotential.single(g64, (0.5, 0.5)), g64)
    assert not inner.gamma0.any() and inner.gamma1.all()
    below = boundary_partition(EscapePotential.single(g64, (0.5, -0.5)), g64, frame_region(g64))
    bottom = g64.segments.normal[:, 1] < -0.5
    assert below.gamma0[bottom].all()
    assert below.gamma1_in_omega
