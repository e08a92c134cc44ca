import numpy as np
import pytest

from dhl.errors import ArgumentError, DomainError
from dhl.graphgeom import Jet2
from dhl.grid import Disk, ScalarField, build_grid
from dhl.hypgeom import (
    HypJet,
    euclidean_relation,
    hyp_curvature_matrix,
    hyp_pogorelov_weight,
    level_set_domain,
)

from oracles import ellipsoid_ubar, ellipsoid_weights, random_rotation, sphere_cap_jet


def random_hyp_jet(rng, n):
    M = rng.normal(size=(n, n))
    return Jet2(rng.uniform(0.05, 3.0), rng.normal(size=n), M + M.T)


def test_needs_positive_height():
    with pytest.raises(DomainError):
        HypJet(Jet2(0.0, [0.0, 0.0], np.zeros((2, 2))))
    with pytest.raises(DomainError):
        HypJet(Jet2(-1.0, [0.0], [[0.0]]))


def test_horizontal_plane():
    hc = hyp_curvature_matrix(HypJet(Jet2(1.0, np.zeros(3), np.zeros((3, 3)))), 3)
    np.testing.assert_array_equal(hc.a_hyp, np.eye(3))
    np.testing.assert_allclose(hc.kappa_tilde.values, 1.0)


@pytest.mark.parametrize("n", [2, 3])
def test_upper_hemisphere_is_totally_geodesic(n):
    rng = np.random.default_rng(n)
    for _ in range(25):
        x = rng.uniform(-0.5, 0.5, size=n)
        hc = hyp_curvature_matrix(HypJet(Jet2(*sphere_cap_jet(x, 1.5, 1.0))), n)
        np.testing.assert_allclose(hc.kappa_tilde.values, 0.0, atol=1e-12)


def test_metric_and_relation_at_random_jets():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(2, 5))
        jet = random_hyp_jet(rng, n)
        hc = hyp_curvature_matrix(HypJet(jet), 1)
        g = (np.eye(n) + np.outer(jet.du, jet.du)) / jet.u**2
        np.testing.assert_allclose(hc.g_tilde, g, rtol=1e-12)
        rel = euclidean_relation(jet)
        np.testing.assert_allclose(hc.h_tilde, rel, rtol=1e-12, atol=1e-12 * np.abs(rel).max())


def test_invariant_under_horizontal_rotation():
    rng = np.random.default_rng(2)
    for _ in range(300):
        n = int(rng.integers(2, 5))
        jet = random_hyp_jet(rng, n)
        Q = random_rotation(rng, n)
        rot = Jet2(jet.u, Q @ jet.du, Q @ jet.d2u @ Q.T)
        a = hyp_curvature_matrix(HypJet(jet), 1).kappa_tilde.values
        b = hyp_curvature_matrix(HypJet(rot), 1).kappa_tilde.values
        np.testing.assert_allclose(a, b, atol=1e-10)


def cone_grid(res=41):
    g = build_grid(Disk((0.0, 0.0), 1.0), res, 0.0)
    return g, ScalarField.from_function(g, lambda x: 1.0 - np.linalg.norm(x, axis=1))


def test_level_set_empty_above_max():
    _, usub = cone_grid()
    with pytest.raises(DomainError):
        level_set_domain(usub, 1.5)
    with pytest.raises(ArgumentError):
        level_set_domain(usub, 0.0)


def test_level_set_matches_direct_mask():
    g, usub = cone_grid()
    mask, bidx, bval = level_set_domain(usub, 0.5)
    pts = g.coords(np.arange(g.n_nodes)).reshape(g.dims + (2,))
    r = np.linalg.norm(pts, axis=-1)
    expect = np.isfinite(usub.values) & (r < 0.5)
    assert np.array_equal(mask, expect)
    assert np.all(bval == 0.5)
    assert np.all(mask.ravel()[bidx])
    # every boundary node sits within one diagonal step of the radius-1/2 circle
    assert np.abs(r.ravel()[bidx] - 0.5).max() <= np.sqrt(2) * g.spacing


def test_level_set_nesting():
    _, usub = cone_grid()
    for lo, hi in [(0.1, 0.3), (0.2, 0.8), (0.05, 0.06)]:
        small, _, _ = level_set_domain(usub, hi)
        big, _, _ = level_set_domain(usub, lo)
        assert not np.any(small & ~big)


def test_pogorelov_weight_examples():
    g = build_grid(Disk((0.0, 0.0), 1.0), 33, 0.0)
    wts = ellipsoid_weights(2, 2)
    ubar = ScalarField.from_function(g, lambda x: ellipsoid_ubar(x, 1.0, wts))
    half = ScalarField(g, ubar.values / 2)
    zero = ScalarField(g, np.zeros(g.dims))
    assert np.nanmax(hyp_pogorelov_weight(ubar, ubar, 0.0).values) == 0
    np.testing.assert_array_equal(hyp_pogorelov_weight(ubar, zero, 0.0).values, ubar.values**2)
    got = hyp_pogorelov_weight(ubar, half, 0.1).values
    act = np.isfinite(got)
    direct = np.maximum(0.75 * ubar.values[act] ** 2 - 0.1, 0.0)
    np.testing.assert_allclose(got[act], direct, rtol=1e-15, atol=1e-16)
