import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from gcclab.geometry import (Domain, GeometryError, SpeedField, boundary_normal, build_grid, first_dirichlet_eigenvalue,
                             measure_masks)
from gcclab.regions import ControlRegion, corner_patch, frame_region


@pytest.fixture(scope="module")
def square10():
    return build_grid(Domain.unit_square(), 10)


def test_unit_square_tiling(square10):
    g = square10
    assert g.nx * g.ny == 100
    assert len(g.segments) == 40
    assert_allclose(g.segments.length, 0.1, rtol=0, atol=1e-15)
    assert abs(g.segments.length.sum() - 4.0) < 1e-12


def test_rectangle_tiling():
    g = build_grid(Domain.rectangle(2.0, 1.0), 8)
    assert g.nx * g.ny == 128
    assert abs(g.segments.length.sum() - 6.0) < 1e-12


def test_resolution_floor():
    with pytest.raises(GeometryError):
        build_grid(Domain.unit_square(), 7)


def test_non_simple_polygon_rejected():
    with pytest.raises(GeometryError, match="not simple"):
        Domain.polygon([(0, 0), (1, 1), (1, 0), (0, 1)])


def test_normals_unit_and_outward():
    for dom in (Domain.unit_square(), Domain.polygon([(0, 0), (1, 0), (0.6, 0.9), (0.1, 0.7)])):
        g = build_grid(dom, 32)
        s = g.segments
        assert_allclose(np.hypot(*s.normal.T), 1.0, atol=1e-14)
        X, Y = g.centers()
        inner = np.stack([X[s.cell[:, 0], s.cell[:, 1]], Y[s.cell[:, 0], s.cell[:, 1]]], 1)
        assert np.all(((inner - s.midpoint) * s.normal).sum(1) < 0)


def test_boundary_normals(square10):
    assert_allclose(boundary_normal(square10, (0.5, 0.0)), (0, -1))
    assert_allclose(boundary_normal(square10, (1.0, 0.3)), (1, 0))
    assert_allclose(boundary_normal(square10, (0.0, 0.0)), np.array([-1, -1]) / np.sqrt(2))
    with pytest.raises(GeometryError):
        boundary_normal(square10, (0.5, 0.5))


def test_measures(square10):
    g = build_grid(Domain.unit_square(), 128)
    m = frame_region(g).measure
    assert m.boundary == 4.0
    assert ControlRegion.empty(g).measure.total == 0.0
    c = corner_patch(square10).measure
    assert_allclose((c.interior, c.boundary), (0.01, 0.2), atol=1e-15)


def test_measure_mask_mismatch(square10):
    with pytest.raises(GeometryError):
        measure_masks(square10, np.zeros((3, 3), bool))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_measure_additivity(seed):
    g = build_grid(Domain.unit_square(), 16)
    rng = np.random.default_rng(seed)
    A = rng.random(g.shape) < 0.3
    B = (rng.random(g.shape) < 0.3) & ~A
    mA, mB = measure_masks(g, A), measure_masks(g, B)
    mAB = measure_masks(g, A | B)
    assert mAB.interior == mA.interior + mB.interior
    assert mAB.boundary == mA.boundary + mB.boundary


def test_eigenvalue_unit_square():
    lam = first_dirichlet_eigenvalue(build_grid(Domain.unit_square(), 64))
    assert abs(lam - 2 * np.pi**2) / (2 * np.pi**2) < 0.01


def test_eigenvalue_rectangle():
    lam = first_dirichlet_eigenvalue(build_grid(Domain.rectangle(2.0, 1.0), 32))
    exact = np.pi**2 * (0.25 + 1.0)
    assert abs(lam - exact) / exact < 0.01


def test_eigenvalue_second_order():
    exact = 2 * np.pi**2
    e1 = abs(first_dirichlet_eigenvalue(build_grid(Domain.unit_square(), 16)) - exact)
    e2 = abs(first_dirichlet_eigenvalue(build_grid(Domain.unit_square(), 32)) - exact)
    assert 3.5 < e1 / e2 < 4.5


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_eigenvalue_domain_monotonicity(a, b, c, d):
    g = build_grid(Domain.unit_square(), 24)
    big = np.zeros(g.shape, bool)
    big[a:24 - b, c:24 - d] = True
    small = np.zeros(g.shape, bool)
    small[a + 1:23 - b, c + 1:23 - d] = True
    lam_full = first_dirichlet_eigenvalue(g)
    lam_big = first_dirichlet_eigenvalue(g, mask=big)
    lam_small = first_dirichlet_eigenvalue(g, mask=small)
    assert lam_full <= lam_big * (1 + 1e-10)
    assert lam_big <= lam_small * (1 + 1e-10)


def test_disk_area_first_order():
    dom = Domain.unit_square()
    errs = []
    for r in (32, 64, 128):
        g = build_grid(dom, r)
        X, Y = g.centers()
        inside = (X - 0.5) ** 2 + (Y - 0.5) ** 2 < 0.3**2
        errs.append(abs(measure_masks(g, inside).interior - np.pi * 0.09))
    assert errs[2] < errs[0]
    assert errs[2] < 2e-3


def test_speed_bump_bounds():
    s = SpeedField.gaussian_bump(0.5)
    assert (s.c_min, s.c_max) == (1.0, 1.5)
    with pytest.raises(GeometryError):
        SpeedField.gaussian_bump(-1.0)
