from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from sphereproc.geom import (
    SpatialPoint,
    SpherePoint,
    ball_volume,
    cap_measure,
    geodesic,
    geodesic_distance,
    reg_inc_beta,
    sphere_surface_measure,
)


@pytest.mark.parametrize(
    "u1, u2, expected",
    [((0, 0, 1), (0, 0, 1), 0.0), ((0, 0, 1), (0, 0, -1), math.pi), ((1, 0, 0), (0, 1, 0), math.pi / 2)],
)
def test_geodesic_examples(u1, u2, expected):
    assert geodesic_distance(u1, u2) == pytest.approx(expected, abs=1e-15)


def test_geodesic_dimension_mismatch():
    with pytest.raises(ValueError):
        geodesic_distance((1, 0, 0), (1, 0))


def test_geodesic_clamps_rounding():
    u = np.array([1.0, 1e-9, 0.0])
    assert geodesic_distance(u / np.linalg.norm(u) * (1 + 1e-16), (1.0, 0.0, 0.0)) >= 0.0
    assert not math.isnan(geodesic_distance((1.0 + 1e-15, 0, 0), (1.0, 0, 0)))


def test_geodesic_metric_on_random_triples(rng):
    u = rng.normal(size=(3, 1000, 3))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    a, b, c = u
    dab, dba, dbc, dac = geodesic(a, b), geodesic(b, a), geodesic(b, c), geodesic(a, c)
    assert np.all(dab >= 0) and np.all(dab <= math.pi)
    np.testing.assert_array_equal(dab, dba)
    assert np.all(dac <= dab + dbc + 1e-12)
    assert np.all(geodesic(a, a) <= 1e-7)


def test_sphere_point_normalizes_or_rejects():
    assert np.linalg.norm(np.asarray(SpherePoint((0, 0, 2)))) == pytest.approx(1.0, abs=1e-15)
    assert SpherePoint((0, 0, 2)).k == 2
    with pytest.raises(ValueError):
        SpherePoint((0, 0, 1 + 1e-9), strict=True)
    SpherePoint((0, 0, 1.0), strict=True)
    with pytest.raises(ValueError):
        SpherePoint((1.0,))
    assert SpatialPoint((0.5,)).d == 1


@pytest.mark.parametrize("k, expected", [(1, 2 * math.pi), (2, 4 * math.pi), (3, 2 * math.pi**2)])
def test_sphere_surface_measure(k, expected):
    assert sphere_surface_measure(k) == pytest.approx(expected, rel=1e-14)


def test_sphere_surface_measure_against_gamma_function():
    for k in range(1, 8):
        expected = 2 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)
        assert sphere_surface_measure(k) == pytest.approx(expected, rel=1e-13)
    with pytest.raises(ValueError):
        sphere_surface_measure(0)


@pytest.mark.parametrize("s, expected", [(math.pi, 4 * math.pi), (math.pi / 2, 2 * math.pi), (math.pi / 3, math.pi)])
def test_cap_measure_examples(s, expected):
    assert cap_measure(2, s) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_cap_measure_matches_colatitude_quadrature(k):
    for s in np.linspace(0.05, math.pi, 13):
        oracle, _ = integrate.quad(lambda t: sphere_surface_measure(k - 1) * math.sin(t) ** (k - 1), 0, s,
                                   epsabs=0, epsrel=1e-13) if k > 1 else (2 * s, 0)
        assert cap_measure(k, s) == pytest.approx(oracle, rel=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_cap_measure_complement_and_monotone(k):
    s = np.linspace(0.0, math.pi, 201)
    vals = np.array([cap_measure(k, t) for t in s])
    np.testing.assert_allclose(vals + vals[::-1], sphere_surface_measure(k), rtol=1e-12)
    assert np.all(np.diff(vals) > 0)
    assert cap_measure(k, math.pi) == pytest.approx(sphere_surface_measure(k), rel=1e-14)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 6])
def test_cap_measure_branches_meet_at_right_angle(k):
    below = cap_measure(k, math.pi / 2 * (1 - 1e-15))
    above = cap_measure(k, math.pi / 2 * (1 + 1e-15))
    assert below == pytest.approx(above, rel=1e-10)
    assert cap_measure(k, math.pi / 2) == pytest.approx(sphere_surface_measure(k) / 2, rel=1e-12)


def test_cap_measure_domain():
    with pytest.raises(ValueError):
        cap_measure(2, -0.1)
    with pytest.raises(ValueError):
        cap_measure(2, math.pi + 0.1)


@pytest.mark.parametrize("a, b", [(0.5, 0.5), (1.0, 1.0), (2.5, 0.5), (10.0, 3.0)])
def test_reg_inc_beta_endpoints(a, b):
    assert reg_inc_beta(0.0, a, b) == 0.0
    assert reg_inc_beta(1.0, a, b) == 1.0


def test_reg_inc_beta_uniform_case():
    assert reg_inc_beta(0.25, 1.0, 1.0) == pytest.approx(0.25, rel=1e-14)


@given(st.floats(0.0, 1.0), st.floats(0.05, 30.0), st.floats(0.05, 30.0))
def test_reg_inc_beta_matches_scipy_and_reflects(x, a, b):
    ours = reg_inc_beta(x, a, b)
    assert ours == pytest.approx(float(special.betainc(a, b, x)), rel=1e-10, abs=1e-300)
    # make x and its complement exact partners in floating point
    comp = 1.0 - x
    x = 1.0 - comp
    assert reg_inc_beta(x, a, b) + reg_inc_beta(comp, b, a) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("x, a, b", [(-0.1, 1, 1), (1.1, 1, 1), (0.5, 0, 1), (0.5, 1, -1)])
def test_reg_inc_beta_domain(x, a, b):
    with pytest.raises(ValueError):
        reg_inc_beta(x, a, b)


@pytest.mark.parametrize("d, r, expected", [(1, 2.0, 4.0), (2, 1.0, math.pi), (3, 1.0, 4 * math.pi / 3)])
def test_ball_volume(d, r, expected):
    assert ball_volume(d, r) == pytest.approx(expected, rel=1e-14)


def test_ball_volume_matches_radial_quadrature():
    for d in range(1, 6):
        surface = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
        oracle, _ = integrate.quad(lambda t: surface * t ** (d - 1), 0, 0.7)
        assert ball_volume(d, 0.7) == pytest.approx(oracle, rel=1e-12)
    assert ball_volume(3, 0.0) == 0.0
