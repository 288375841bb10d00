import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from disp2d.discretize import build_grid
from disp2d.errors import ConfigError, DomainError
from disp2d.potential import (FAMILIES, PotentialSpec, build_potential, evaluate, from_values,
                              kato_norm, log_weight_k, zero_potential)


@pytest.fixture(scope="module")
def grid24():
    return build_grid("polar", n_r=24, n_theta=24, r_max=6.0, r_scale=1.0)


def test_gaussian_unit_gives_half_width_v(grid24):
    pot = build_potential(PotentialSpec("gaussian", 1.0, 1.0), grid24)
    np.testing.assert_allclose(pot.v, np.exp(-grid24.radii ** 2 / 2), rtol=1e-14)
    assert np.all(pot.U == 1)


def test_negative_disk_sign(grid24):
    pot = build_potential(PotentialSpec("disk-indicator", -1.0, 1.0), grid24)
    inside = grid24.radii <= 1
    assert np.all(pot.U[inside] == -1)
    assert np.all(pot.U[~inside] == 1)  # U = +1 where V = 0


def test_two_well_l1_positive_integral_zero(two_well_pot):
    assert two_well_pot.l1_norm > 0.1
    assert abs(two_well_pot.integral) <= 1e-12 * two_well_pot.l1_norm


def test_zero_potential():
    g = build_grid("polar", n_r=8, n_theta=8, r_max=2.0)
    with pytest.warns(RuntimeWarning):
        pot = build_potential(PotentialSpec("gaussian", 0.0, 1.0), g)
    assert pot.is_zero
    assert kato_norm(pot) == 0.0
    assert zero_potential(g).l1_norm == 0.0


def test_kato_unit_disk_closed_form():
    # 1 lands on a cell edge: log(1 + 1)/log(1 + 3) = 1/2 with an even n_r
    g = build_grid("polar", n_r=32, n_theta=32, r_max=3.0, r_scale=1.0)
    pot = build_potential(PotentialSpec("disk-indicator", 1.0, 1.0), g)
    assert pot.kato_norm == pytest.approx(5 * math.pi / 2, rel=0.01)
    assert pot.l1_norm == pytest.approx(math.pi, rel=1e-12)


def test_kato_gaussian_against_radial_integral():
    f = lambda r: (1 + max(-math.log(r), 0.0)) ** 2 * math.exp(-r * r) * r
    exact = 2 * math.pi * (quad(f, 0, 1, limit=200)[0] + quad(f, 1, np.inf)[0])
    coarse = fine = None
    for n in (48, 96):
        g = build_grid("polar", n_r=n, n_theta=n, r_max=6.0, r_scale=1.0)
        k = build_potential(PotentialSpec("gaussian", 1.0, 1.0), g).kato_norm
        coarse, fine = fine, k
    assert fine == pytest.approx(exact, rel=0.005)
    assert coarse == pytest.approx(fine, rel=0.005)


def test_log_weight_k_examples():
    assert log_weight_k((1.0, 0.0), (0.0, 1.0)) == pytest.approx(1 + 0 + max(-math.log(math.sqrt(2)), 0))
    assert log_weight_k((2.0, 0.0), (1.0, 0.0)) == pytest.approx(1.0)
    e = math.e
    assert log_weight_k((e + 1 / e, 0.0), (e, 0.0)) == pytest.approx(3.0)
    with pytest.raises(DomainError):
        log_weight_k((1.0, 1.0), (1.0, 1.0))


def test_log_weight_ratio_bounded(rng):
    x = rng.normal(size=(100_000, 2)) * np.exp(rng.uniform(-5, 5, size=(100_000, 1)))
    x1 = rng.normal(size=(100_000, 2)) * np.exp(rng.uniform(-5, 5, size=(100_000, 1)))
    d = np.hypot(*(x - x1).T)
    ratio = np.abs(np.log(d / (1 + np.hypot(*x.T)))) / log_weight_k(x, x1)
    assert np.all(np.isfinite(ratio))
    # |log(|x - x1|/(1+|x|))| <= log 2 + log+|x1| + log-|x - x1| <= 1.7 k
    assert ratio.max() <= 1.0 + math.log(2)


@pytest.mark.parametrize("family", FAMILIES)
def test_decomposition_and_envelope(family, grid24):
    d = {"family": family, "amplitude": -0.7, "length_scale": 1.2}
    if family == "radial-table":
        r = np.linspace(0, 4, 9)
        d.update(table_radii=r.tolist(), table_values=(-np.exp(-r)).tolist())
    pot = build_potential(PotentialSpec.from_dict(d), grid24)
    np.testing.assert_allclose(pot.U * pot.v * pot.v, pot.V, rtol=4.5e-16, atol=0)
    np.testing.assert_allclose(pot.v ** 2, np.abs(pot.V), rtol=1e-15)
    assert np.all(pot.U * pot.V >= 0)
    env = pot.envelope_C * (1 + grid24.radii) ** (-pot.spec.beta_claimed)
    assert np.all(np.abs(pot.V) <= env * (1 + 1e-12))


def test_beta_fit_compact_is_infinite(grid24):
    pot = build_potential(PotentialSpec("smooth-bump", 1.0, 2.0), grid24)
    assert pot.beta_fit == math.inf
    gauss = build_potential(PotentialSpec("gaussian", 1.0, 1.0), grid24)
    assert gauss.beta_fit > 3


def test_refinement_is_second_order():
    # quadrature-error model: midpoint rule, error ~ C / n^2, so each doubling
    # shrinks the change roughly fourfold; the extrapolated l1 hits pi A l^2
    g = build_grid("polar", n_r=12, n_theta=12, r_max=8.0, r_scale=1.0)
    spec = PotentialSpec("gaussian", -0.5, 1.5)
    pots = [build_potential(spec, g.refined(k)) for k in (1, 2, 4)]
    for attr in ("l1_norm", "kato_norm"):
        a, b, c = (getattr(p, attr) for p in pots)
        assert a < b < c
        assert (b - a) / (c - b) >= 3.0
    a, b, c = (p.l1_norm for p in pots)
    assert c + (c - b) / 3 == pytest.approx(math.pi * 0.5 * 1.5 ** 2, rel=1e-3)


@pytest.mark.parametrize("bad", [
    {"family": "cubic"},
    {"family": "gaussian", "length_scale": -1.0},
    {"family": "gaussian", "amplitude": float("nan")},
    {"family": "radial-table", "table_radii": [0, 2, 1], "table_values": [1, 1, 1]},
    {"family": "two-well-signed", "centers": [[0, 0]]},
    {"family": "gaussian", "colour": 3},
])
def test_invalid_specs(bad):
    with pytest.raises(ConfigError):
        PotentialSpec.from_dict(bad)


def test_from_values_shape_checked(grid24):
    with pytest.raises(ConfigError):
        from_values(grid24, np.ones(3))


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 5) | st.floats(-5, -1e-3), st.floats(0.2, 3.0))
def test_scaling_is_linear(amp, ell):
    g = build_grid("polar", n_r=8, n_theta=8, r_max=4.0)
    spec = PotentialSpec("gaussian", amp, ell)
    np.testing.assert_allclose(evaluate(spec.scaled(-2.0), g.nodes), -2.0 * evaluate(spec, g.nodes))
    pot = build_potential(spec, g)
    assert pot.l1_norm > 0
    np.testing.assert_allclose(pot.U * pot.v ** 2, pot.V, rtol=4.5e-16, atol=0)
