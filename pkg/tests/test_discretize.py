import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from disp2d import specfun
from disp2d.discretize import (KernelOperator, build_grid, e0_operator, g0_operator, m_operator,
                               operator_norm, projections, resolvent_operator, sandwich,
                               to_symmetric, weighted_hs_norm)
from disp2d.errors import ConfigError, ZeroPotentialError
from disp2d.lowenergy import g_coefficient
from disp2d.potential import PotentialSpec, build_potential, zero_potential


def test_polar_area():
    g = build_grid("polar", n_r=16, n_theta=16, r_max=8.0)
    assert g.n == 256
    assert g.weights.sum() == pytest.approx(64 * math.pi, rel=1e-10)
    assert np.all(g.weights > 0)


def test_cartesian_area():
    g = build_grid("cartesian", n=20, L=5.0)
    assert g.n == 400
    assert g.weights.sum() == pytest.approx(100.0, rel=1e-12)


def test_polar_clusters_toward_origin():
    g = build_grid("polar", n_r=16, n_theta=8, r_max=8.0)
    r = np.unique(np.round(g.radii, 12))
    assert np.all(np.diff(np.diff(r)) > 0)


def test_gaussian_quadrature_converges():
    errs = []
    for n_r in (64, 128, 256, 512):
        g = build_grid("polar", n_r=n_r, n_theta=8, r_max=8.0)
        errs.append(abs(g.integrate(np.exp(-g.radii ** 2)) - math.pi))
    assert all(a > 3.5 * b for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-4


@pytest.mark.parametrize("params", [
    dict(n_r=4, n_theta=16, r_max=1.0), dict(n_r=16, n_theta=16, r_max=0.0),
    dict(n_r=16, n_theta=-3, r_max=1.0), dict(n_r=16, n_theta=16, r_max=1.0, r_scale=0.0)])
def test_bad_polar_sizes(params):
    with pytest.raises(ConfigError):
        build_grid("polar", **params)


def test_bad_scheme():
    with pytest.raises(ConfigError):
        build_grid("hexagonal", n=10)
    with pytest.raises(ConfigError):
        build_grid("cartesian", n=20, L=-1.0)


def test_g0_disk_center():
    g = build_grid("polar", n_r=32, n_theta=32, r_max=3.0)
    out = g0_operator(g)((g.radii <= 1).astype(float))
    i = np.argmin(g.radii)
    # R^2/4 - (R^2/2) log R at R = 1, plus the O(r^2) offset of the node
    assert out[i] == pytest.approx(0.25 - g.radii[i] ** 2 / 4, rel=0.01)
    assert out[i] == pytest.approx(0.25, rel=0.01)


def test_g0_symmetry_and_log_scaling(small_grid, rng):
    G = g0_operator(small_grid)
    k = G.kernel
    # A_ij / w_j against A_ji / w_i: equal up to the rounding of the division
    np.testing.assert_allclose(k, k.T, rtol=4.5e-16, atol=0)
    assert G.is_symmetric()
    # scaling the geometry by c shifts G0 f by -(log c / 2 pi) int f
    c = 2.5
    big = build_grid("polar", **{**small_grid.params, "r_max": c * small_grid.params["r_max"],
                                 "r_scale": c * small_grid.params["r_scale"]})
    f = rng.normal(size=small_grid.n)
    lhs = g0_operator(big).kernel @ (f * small_grid.weights)
    rhs = G(f) - math.log(c) / (2 * math.pi) * small_grid.integrate(f)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_projections(gauss_pot):
    pp = projections(gauss_pot)
    v = gauss_pot.v
    np.testing.assert_allclose(pp.P @ v, v, atol=1e-12)
    np.testing.assert_allclose(pp.Q @ v, 0, atol=1e-12)
    assert np.trace(pp.P) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(pp.P @ pp.P, pp.P, atol=1e-12)
    np.testing.assert_allclose(pp.Q @ pp.Q, pp.Q, atol=1e-12)
    np.testing.assert_allclose(pp.P @ pp.Q, 0, atol=1e-12)
    # P is self-adjoint in the weighted inner product
    S = to_symmetric(pp.P, gauss_pot.grid)
    np.testing.assert_allclose(S, S.T, atol=1e-14)


def test_projections_reject_zero(small_grid):
    with pytest.raises(ZeroPotentialError):
        projections(zero_potential(small_grid))


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-4, 20.0))
def test_m_conjugate_and_symmetric(lam):
    g = build_grid("polar", n_r=8, n_theta=8, r_max=4.0)
    pot = build_potential(PotentialSpec("gaussian", -0.5, 1.0), g)
    mp, mm = m_operator(1, lam, pot), m_operator(-1, lam, pot)
    np.testing.assert_allclose(mm.matrix, np.conj(mp.matrix), rtol=0, atol=1e-15)
    assert resolvent_operator(1, lam, g).is_symmetric()
    assert np.all(np.isfinite(mp.matrix))


def test_m_nonnegative_potential(repulsive_pot):
    lam = 0.3
    vrv = sandwich(repulsive_pot.v, resolvent_operator(1, lam, repulsive_pot.grid)).matrix
    np.testing.assert_allclose(m_operator(1, lam, repulsive_pot).matrix - vrv,
                               np.eye(repulsive_pot.grid.n), atol=1e-15)


def test_m_low_energy_limit(gauss_pot):
    g = gauss_pot.grid
    pp = projections(gauss_pot)
    base = np.diag(gauss_pot.U) + sandwich(gauss_pot.v, g0_operator(g)).matrix
    lams = np.geomspace(1e-5, 1e-2, 12)
    hs = []
    for lam in lams:
        diff = m_operator(1, lam, gauss_pot).matrix - g_coefficient(1, lam, gauss_pot.l1_norm) * pp.P - base
        hs.append(weighted_hs_norm(KernelOperator(diff, "E", g)))
        # the remainder is exactly v E0 v
        e = sandwich(gauss_pot.v, e0_operator(1, lam, g)).matrix
        np.testing.assert_allclose(diff, e, atol=1e-13)
    slope = np.polyfit(np.log(lams), np.log(hs), 1)[0]
    assert slope >= 0.45
    assert max(h / math.sqrt(l) for h, l in zip(hs, lams)) < 1.0


def test_weighted_hs_basic(small_grid):
    g = small_grid
    assert weighted_hs_norm(KernelOperator(np.zeros((g.n, g.n)), "0", g), s=2) == 0.0
    # diagonal kernel K_ii = 1/w_i, i.e. identity matrix in weighted coordinates
    I = KernelOperator(np.eye(g.n), "I", g)
    assert weighted_hs_norm(I) == pytest.approx(math.sqrt(g.n), rel=1e-14)
    rng = np.random.default_rng(0)
    A = rng.normal(size=(g.n, g.n))
    K = A / g.weights[None, :]
    wt = g.weights * (1 + g.radii) ** -3.0
    direct = math.sqrt(sum(wt[i] * wt[j] * K[i, j] ** 2 for i in range(g.n) for j in range(g.n)))
    assert weighted_hs_norm(KernelOperator(A, "A", g), s=1.5) == pytest.approx(direct, rel=1e-12)


def test_weighted_hs_rank_one_refinement():
    vals = []
    for n in (48, 96):
        g = build_grid("polar", n_r=n, n_theta=16, r_max=6.0)
        v = np.exp(-g.radii ** 2)
        vals.append(weighted_hs_norm(KernelOperator(np.outer(v, v * g.weights), "vv", g), s=2))
    # continuum value: int (1+r)^-4 e^{-2 r^2} dx, squared then rooted
    from scipy.integrate import quad
    exact = 2 * math.pi * quad(lambda r: (1 + r) ** -4 * math.exp(-2 * r * r) * r, 0, np.inf)[0]
    assert vals[0] == pytest.approx(vals[1], rel=0.01)
    assert vals[1] == pytest.approx(exact, rel=0.01)


def test_operator_norm_weighted(small_grid):
    P = np.outer(np.ones(small_grid.n), small_grid.weights) / small_grid.weights.sum()
    assert operator_norm(P, small_grid) == pytest.approx(1.0, rel=1e-12)


def test_hs_norms_stable_under_refinement():
    spec = PotentialSpec("gaussian", -0.5, 1.5)
    g = build_grid("polar", n_r=12, n_theta=12, r_max=6.0)
    out = []
    for grid in (g, g.refined()):
        pot = build_potential(spec, grid)
        out.append([weighted_hs_norm(sandwich(pot.v, g0_operator(grid))),
                    weighted_hs_norm(sandwich(pot.v, resolvent_operator(1, 0.5, grid))),
                    weighted_hs_norm(sandwich(pot.v, e0_operator(1, 1e-3, grid)))])
    np.testing.assert_allclose(out[0], out[1], rtol=0.05)


def test_resolvent_diagonal_rule(small_grid):
    lam = 0.7
    R = resolvent_operator(1, lam, small_grid)
    rc = small_grid.cell_radius
    expect = specfun.free_resolvent_kernel(1, lam, rc) + 1 / (4 * math.pi)
    np.testing.assert_allclose(np.diag(R.kernel), expect, rtol=1e-14)
    G = g0_operator(small_grid)
    np.testing.assert_allclose(np.diag(G.kernel), -(np.log(rc) - 0.5) / (2 * math.pi), rtol=1e-14)
