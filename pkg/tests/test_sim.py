from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from sphereproc.densities import VonMisesFisherKernel, neuron_orientation_mixture
from sphereproc.estimate import k_hat
from sphereproc.geom import geodesic, sphere_surface_measure
from sphereproc.model import GaussianKernel, LgcpCovariance, PoissonKParams, SncpParams, k_pois
from sphereproc.pattern import BoxWindow, SpaceSpherePattern
from sphereproc.sim import (
    CoarseGridWarning,
    IntensityBoundError,
    LgcpModel,
    PoissonModel,
    RngSeed,
    SncpModel,
    SphereCells,
    fibonacci_nodes,
    make_rng,
    permute_marks,
    sim_grf_interval,
    sim_grf_product,
    sim_grf_sphere,
    sim_lgcp,
    sim_poisson,
    sim_sncp,
    thin,
)

UNIT = BoxWindow.unit(1)
REF = LgcpCovariance(0.5, 0.05, 0.5, 0.132, 0.0)


def same_pattern(a, b):
    return a.n == b.n and np.array_equal(a.y, b.y) and np.array_equal(a.u, b.u)


# ---------------------------------------------------------------- streams and Poisson


def test_streams_are_reproducible_and_distinct():
    a = sim_poisson(10.0, UNIT, 2, make_rng(3, 1))
    b = sim_poisson(10.0, UNIT, 2, RngSeed(3, 1).generator())
    c = sim_poisson(10.0, UNIT, 2, make_rng(3, 2))
    assert same_pattern(a, b)
    assert not same_pattern(a, c)
    assert make_rng(3, 1, 5).random() == make_rng(3, 1, 5).random()
    assert make_rng(3, 1, 5).random() != make_rng(3, 1, 6).random()


def test_poisson_counts_mean_and_dispersion():
    reps = 10_000
    counts = np.array([sim_poisson(10.0, UNIT, 2, make_rng(11, i)).n for i in range(reps)])
    lam = 40 * math.pi
    assert abs(counts.mean() - lam) < 3 * math.sqrt(lam / reps)
    ratio = counts.var(ddof=1) / counts.mean()
    assert abs(ratio - 1.0) < 3 * math.sqrt((2.0 + 1.0 / lam) / reps)


def test_poisson_zero_intensity_and_validation():
    x = sim_poisson(0.0, UNIT, 2, make_rng(0))
    assert x.n == 0 and x.u.shape == (0, 3)
    with pytest.raises(ValueError):
        sim_poisson(-1.0, UNIT, 2, make_rng(0))
    with pytest.raises(ValueError):
        sim_poisson(lambda y, u: np.ones(len(y)), UNIT, 2, make_rng(0))


def test_poisson_points_inside_window_in_higher_dimensions():
    w = BoxWindow([-1.0, 0.0, 2.0], [1.0, 0.5, 2.5])
    x = sim_poisson(5.0, w, 3, make_rng(1))
    assert x.n > 0 and w.contains(x.y).all()
    np.testing.assert_allclose(np.linalg.norm(x.u, axis=1), 1.0, atol=1e-12)


def test_inhomogeneous_poisson_spherical_marginal_matches_density():
    f = neuron_orientation_mixture()
    rho1 = 10_000.0
    bound = rho1 * float(f.pdf(np.array([[0.0, 0.0, 1.0]]))[0])
    x = sim_poisson(lambda y, u: rho1 * f.pdf(u), UNIT, 2, make_rng(4), bound=bound)
    assert abs(x.n - rho1) < 4 * math.sqrt(rho1)
    edges = np.array([-1.0, -0.5, 0.0, 0.5, 0.8, 0.9, 0.95, 0.98, 1.0])
    z = np.linspace(-1, 1, 40001)
    zz = 0.5 * (z[1:] + z[:-1])
    phi = np.linspace(0, 2 * math.pi, 721)[:-1] + math.pi / 720
    rr = np.sqrt(1 - zz**2)
    grid = np.stack([rr[:, None] * np.cos(phi), rr[:, None] * np.sin(phi), np.repeat(zz[:, None], phi.size, 1)], -1)
    marg = f.pdf(grid.reshape(-1, 3)).reshape(zz.size, phi.size).sum(axis=1) * (2 / zz.size) * (2 * math.pi / phi.size)
    probs = np.array([marg[(zz >= a) & (zz < b)].sum() for a, b in zip(edges[:-1], edges[1:])])
    observed = np.histogram(x.u[:, 2], edges)[0]
    expected = probs / probs.sum() * x.n
    assert stats.chisquare(observed, expected).pvalue > 0.05


def test_bound_violation_is_reported():
    with pytest.raises(IntensityBoundError, match="exceeds the bound"):
        sim_poisson(lambda y, u: np.full(len(y), 20.0), UNIT, 2, make_rng(0), bound=10.0)


# ---------------------------------------------------------------- Gaussian fields


def test_interval_field_marginal_and_covariance():
    phi1 = 0.1
    grid = np.array([0.0, 1e-6, 0.3, 0.3 + phi1, 0.9])
    z = sim_grf_interval(phi1, grid, make_rng(2), size=10_000)
    se_var = math.sqrt(2 / 10_000)
    assert np.all(np.abs(z.var(axis=0) - 1) < 3 * se_var)
    corr = np.corrcoef(z[:, 2], z[:, 3])[0, 1]
    assert abs(corr - math.exp(-1)) < 3 * (1 - math.exp(-2)) / math.sqrt(10_000)
    assert np.corrcoef(z[:, 0], z[:, 1])[0, 1] > 0.999
    assert abs(z.mean(axis=0)).max() < 3 * 4 / math.sqrt(10_000)
    with pytest.raises(ValueError):
        sim_grf_interval(phi1, [0.5, 0.1], make_rng(0))


def test_sphere_field_covariance():
    nodes, _ = fibonacci_nodes(300)
    phi2 = 0.4
    z = sim_grf_sphere(phi2, nodes, make_rng(3), size=10_000)
    assert z.shape == (10_000, 300)
    dist = geodesic(nodes[:, None, :], nodes[None, :, :])
    pairs = [(0, 0), (10, 11), (5, 150), (100, 101), (20, 280)]
    for i, j in pairs:
        target = math.exp(-dist[i, j] / phi2)
        emp = float(np.mean(z[:, i] * z[:, j]))
        assert abs(emp - target) < 3 * math.sqrt((1 + target**2) / 10_000) + 1e-9
    with pytest.raises(ValueError):
        sim_grf_sphere(phi2, fibonacci_nodes(50)[0], make_rng(0), max_nodes=40)


def test_product_field_covariance_and_factors():
    sp = np.array([0.1, 0.15, 0.6])
    nodes, _ = fibonacci_nodes(40)
    phi1, phi2 = 0.1, 0.5
    draws = np.stack([sim_grf_product(phi1, phi2, sp, nodes, make_rng(7, i)).values for i in range(10_000)])
    dist = geodesic(nodes[:, None, :], nodes[None, :, :])
    se = lambda c: 3 * math.sqrt((1 + c**2) / 10_000)  # noqa: E731
    c2 = math.exp(-dist[0, 7] / phi2)
    assert abs(np.mean(draws[:, 1, 0] * draws[:, 1, 7]) - c2) < se(c2)
    c1 = math.exp(-0.05 / phi1)
    assert abs(np.mean(draws[:, 0, 3] * draws[:, 1, 3]) - c1) < se(c1)
    c12 = c1 * c2
    assert abs(np.mean(draws[:, 0, 0] * draws[:, 1, 7]) - c12) < se(c12)
    field = sim_grf_product(phi1, phi2, sp, nodes, make_rng(0))
    np.testing.assert_allclose(field.sphere_weights.sum(), 4 * math.pi)


# ---------------------------------------------------------------- equal-area cells


@pytest.mark.parametrize("n", [2, 3, 12, 97, 1000, 4096])
def test_sphere_cells_equal_area_and_locate(n):
    cells = SphereCells(n, 2)
    areas = (cells._z_hi - cells._z_lo) * cells._phi_w
    np.testing.assert_allclose(areas, 4 * math.pi / n, rtol=1e-9)
    assert cells.zone_counts.sum() == n
    idx = np.arange(n).repeat(3)
    pts = cells.sample(idx, make_rng(n))
    np.testing.assert_array_equal(cells.locate(pts), idx)


def test_sphere_cells_extent_rule():
    for extent in (0.5, 0.132 / 4, 0.3 / 4):
        cells = SphereCells.for_extent(extent, 2)
        assert cells.extent <= extent * (1 + 1e-12)
        assert SphereCells(cells.n - 1, 2).extent > extent or cells.n == 2
    circle = SphereCells.for_extent(0.1, 1)
    assert circle.extent <= 0.1
    np.testing.assert_array_equal(circle.locate(circle.sample(np.arange(circle.n), make_rng(1))),
                                  np.arange(circle.n))


# ---------------------------------------------------------------- LGCP


def test_lgcp_degenerate_field_is_poisson():
    flat = LgcpCovariance(0.0, 0.05, 0.0, 0.132, 0.0)
    assert same_pattern(sim_lgcp(50.0, flat, UNIT, 2, make_rng(9)), sim_poisson(50.0, UNIT, 2, make_rng(9)))


def test_lgcp_mean_count_at_reference_parameters():
    reps = 300
    counts = np.array([sim_lgcp(1000.0, REF, UNIT, 2, make_rng(21, i)).n for i in range(reps)])
    target = 1000 * 4 * math.pi
    assert abs(counts.mean() - target) < 3 * counts.std(ddof=1) / math.sqrt(reps)


def test_lgcp_clusters_at_small_lags():
    ratios = []
    for i in range(60):
        x = sim_lgcp(300.0, REF, UNIT, 2, make_rng(22, i))
        ratios.append(k_hat(x, 300.0, [0.05], [0.3]).values[0, 0] / k_pois(PoissonKParams(1, 2), 0.05, 0.3))
    ratios = np.array(ratios)
    assert ratios.mean() - 3 * ratios.std(ddof=1) / math.sqrt(ratios.size) > 1.0


def test_lgcp_coarse_grid_policy():
    with pytest.warns(CoarseGridWarning):
        sim_lgcp(10.0, REF, UNIT, 2, make_rng(0), spatial_cells=[4])
    with pytest.raises(ValueError):
        sim_lgcp(10.0, REF, UNIT, 2, make_rng(0), sphere_cells=20, on_coarse="error")


def test_lgcp_interaction_field_and_planar_window():
    cov = LgcpCovariance(0.3, 0.2, 0.3, 0.5, 0.8)
    w = BoxWindow([0.0, 0.0], [1.0, 0.5])
    x = sim_lgcp(20.0, cov, w, 2, make_rng(5))
    assert w.contains(x.y).all()
    model = LgcpModel(20.0, cov, w, 2)
    assert same_pattern(model.simulate(make_rng(5)), x)
    assert model.to_dict()["cov"]["delta"] == 0.8


# ---------------------------------------------------------------- shot noise


def _sncp_params(omega=0.02, kappa=50.0):
    return SncpParams(30.0, 3.0, 12.0, GaussianKernel(omega, 1), VonMisesFisherKernel(kappa, 2))


def test_sncp_mean_count():
    params = _sncp_params()
    reps = 2000
    counts = np.array([sim_sncp(params, UNIT, make_rng(31, i)).n for i in range(reps)])
    target = params.intensity * 4 * math.pi
    assert abs(counts.mean() - target) < 3 * counts.std(ddof=1) / math.sqrt(reps)


def test_sncp_zero_marks_and_small_bandwidth():
    params = _sncp_params()
    empty = sim_sncp(params, UNIT, make_rng(0), mark_sampler=lambda n, rng: np.zeros(n))
    assert empty.n == 0
    tight = _sncp_params(omega=1e-4, kappa=1e4)
    x = sim_sncp(tight, UNIT, make_rng(1))
    ratio = k_hat(x, tight.intensity, [0.002], [0.05]).values[0, 0] / k_pois(PoissonKParams(1, 2), 0.002, 0.05)
    assert ratio > 10
    with pytest.raises(ValueError):
        sim_sncp(params, UNIT, make_rng(0), mark_sampler=lambda n, rng: -np.ones(n))
    with pytest.raises(ValueError):
        sim_sncp(params, BoxWindow.unit(2), make_rng(0))
    assert same_pattern(SncpModel(params, UNIT).simulate(make_rng(2)), sim_sncp(params, UNIT, make_rng(2)))


# ---------------------------------------------------------------- thinning and permutation


def test_thin_limits_and_binomial_count(rng):
    x = sim_poisson(1000 / (4 * math.pi), UNIT, 2, make_rng(8))
    assert same_pattern(thin(x, 1.0, rng), x)
    assert thin(x, 0.0, rng).n == 0
    big = SpaceSpherePattern(np.linspace(0, 1, 1000)[:, None], np.tile([0, 0, 1.0], (1000, 1)), UNIT, 2)
    kept = np.array([thin(big, 0.5, make_rng(12, i)).n for i in range(200)])
    assert np.all(np.abs(kept - 500) < 3 * math.sqrt(250) * 2)
    assert abs(kept.mean() - 500) < 3 * math.sqrt(250 / 200)
    sub = thin(big, lambda y, u: (y[:, 0] < 0.5).astype(float), rng)
    np.testing.assert_array_equal(sub.y, big.y[big.y[:, 0] < 0.5])
    with pytest.raises(ValueError, match="outside"):
        thin(big, 1.5, rng)


def test_permute_marks_properties(rng):
    one = SpaceSpherePattern([[0.3]], [[0, 0, 1.0]], UNIT, 2)
    assert same_pattern(permute_marks(one, rng), one)
    x = sim_poisson(5.0, UNIT, 2, make_rng(1))
    p = permute_marks(x, rng)
    np.testing.assert_array_equal(p.y, x.y)
    np.testing.assert_array_equal(np.sort(p.u, axis=0), np.sort(x.u, axis=0))
    three = SpaceSpherePattern([[0.1], [0.5], [0.9]], np.eye(3), UNIT, 2)
    reps = 10_000
    freq = {perm: 0 for perm in itertools.permutations(range(3))}
    for i in range(reps):
        marks = permute_marks(three, make_rng(40, i)).u
        freq[tuple(int(np.argmax(row)) for row in marks)] += 1
    se = math.sqrt((1 / 6) * (5 / 6) / reps)
    for count in freq.values():
        assert abs(count / reps - 1 / 6) < 3 * se


def test_model_specs_round_trip():
    m = PoissonModel(3.0, UNIT, 2)
    assert same_pattern(m.simulate(make_rng(1)), sim_poisson(3.0, UNIT, 2, make_rng(1)))
    assert m.to_dict()["model"] == "poisson"
    assert sphere_surface_measure(2) == pytest.approx(4 * math.pi)
