"""Oscillatory quadrature for integrals of the form int e^{i t lam^2} lam a(lam) dlam.

With mu = lam^2 the integral is ``(1/2) int e^{i t mu} a(sqrt(mu)) dmu``: the
phase is linear, so Filon's rule (exact integration of a piecewise-quadratic
interpolant of the amplitude against e^{i t mu}) is exact in the oscillation.
Panels are halved adaptively until the 3-point and 5-point rules agree.
"""
from dataclasses import dataclass
from typing import Callable, NamedTuple
import math

import numpy as np
from scipy.interpolate import CubicSpline

from . import specfun
from .errors import DomainError, QuadratureError

LAMBDA_FLOOR = 1e-10
_TAYLOR_THETA = 0.25
_KMAX = 9
_ROUNDING_FLOOR = 1e-12
_FACT = np.array([math.factorial(k) for k in range(2 * _KMAX + 2)], dtype=float)


def filon_moments(theta):
    """M_k = int_{-1}^{1} u^k e^{i theta u} du for k = 0, 1, 2."""
    th = np.asarray(theta, dtype=float)
    m0 = np.empty(th.shape, dtype=complex)
    m1 = np.empty(th.shape, dtype=complex)
    m2 = np.empty(th.shape, dtype=complex)
    small = np.abs(th) < _TAYLOR_THETA
    if np.any(small):
        s = th[small]
        a0 = np.zeros_like(s)
        a1 = np.zeros_like(s)
        a2 = np.zeros_like(s)
        for k in range(_KMAX):
            sg = (-1.0) ** k
            even = s ** (2 * k) / _FACT[2 * k]
            a0 += sg * even * 2.0 / (2 * k + 1)
            a2 += sg * even * 2.0 / (2 * k + 3)
            a1 += sg * s ** (2 * k + 1) / _FACT[2 * k + 1] * 2.0 / (2 * k + 3)
        m0[small], m1[small], m2[small] = a0, 1j * a1, a2
    big = ~small
    if np.any(big):
        s = th[big]
        sn, cs = np.sin(s), np.cos(s)
        m0[big] = 2.0 * sn / s
        m1[big] = 2.0j * (sn - s * cs) / s ** 2
        m2[big] = 2.0 * ((s * s - 2.0) * sn + 2.0 * s * cs) / s ** 3
    return m0, m1, m2


def filon_panel(t, lo, hi, f_lo, f_mid, f_hi):
    """int_lo^hi e^{i t mu} f(mu) dmu with f quadratic through the three samples."""
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    m0, m1, m2 = filon_moments(t * h)
    w_lo = 0.5 * (m2 - m1)
    w_mid = m0 - m2
    w_hi = 0.5 * (m2 + m1)
    return h * np.exp(1j * t * c) * (w_lo * f_lo + w_mid * f_mid + w_hi * f_hi)


class QuadratureResult(NamedTuple):
    value: complex
    error_estimate: float
    n_panels: int
    abs_scale: float


def _as_callable(a):
    if callable(a):
        return a
    lam, vals = (np.asarray(x) for x in a)
    spline = CubicSpline(lam, vals)
    lo, hi = lam[0], lam[-1]

    def amp(x):
        x = np.asarray(x, dtype=float)
        out = spline(np.clip(x, lo, hi))
        return np.where((x >= lo) & (x <= hi), out, 0.0)
    return amp


def _initial_panels(lam_max, breaks, lam_geo, n_uniform):
    lam_geo = min(lam_geo, lam_max)
    n_geo = max(1, int(math.ceil(math.log2(lam_geo / LAMBDA_FLOOR))))
    lam_edges = [LAMBDA_FLOOR * 2.0 ** k for k in range(n_geo)] + [lam_geo]
    mu = [x * x for x in lam_edges]
    if lam_max > lam_geo:
        mu.extend(np.linspace(lam_geo ** 2, lam_max ** 2, n_uniform + 1)[1:])
    for b in breaks or ():
        if LAMBDA_FLOOR < b < lam_max:
            mu.append(b * b)
    mu = np.unique(np.asarray(mu))
    return mu[:-1], mu[1:]


def oscillatory_quadrature(a, t, lam_max, rtol=1e-6, breaks=None, lam_geo=0.5,
                           n_uniform=16, max_levels=40, max_panels=2_000_000,
                           atol=0.0, full_output=False):
    """int_0^lam_max e^{i t lam^2} lam a(lam) dlam.

    ``a`` is a vectorized callable of lam, or a table ``(lam_nodes, values)``
    interpolated by a cubic spline (zero outside the table).  Near lam = 0 the
    panels are geometric in lam down to 1e-10 so log-singular amplitudes are
    integrable; ``breaks`` adds panel edges (e.g. cutoff transition points).

    Panels are accepted when the 3-point and 5-point Filon values differ by at
    most their length share of ``rtol * int |a| dmu / 2``; when cancellation
    makes the result much smaller than that scale a second pass tightens the
    tolerance so the target holds relative to the result itself (but never
    below ``atol`` or a rounding floor of 1e-12 relative to the scale).
    """
    if not lam_max > 0:
        raise DomainError("lam_max must be positive")
    amp = _as_callable(a)
    res = _adaptive(amp, t, lam_max, rtol, breaks, lam_geo, n_uniform, max_levels, max_panels,
                    atol)
    target = max(rtol * abs(res.value), atol)
    if res.error_estimate > target and res.abs_scale > 0:
        tight = max(target / res.abs_scale, _ROUNDING_FLOOR)
        res = _adaptive(amp, t, lam_max, tight, breaks, lam_geo, n_uniform, max_levels,
                        max_panels, atol)
    return res if full_output else res.value


def _adaptive(amp, t, lam_max, rtol, breaks, lam_geo, n_uniform, max_levels, max_panels,
              atol=0.0):
    def f(mu):
        return 0.5 * amp(np.sqrt(mu))

    lo, hi = _initial_panels(lam_max, breaks, lam_geo, n_uniform)
    mid = 0.5 * (lo + hi)
    f_lo, f_mid, f_hi = f(lo), f(mid), f(hi)
    coarse = filon_panel(t, lo, hi, f_lo, f_mid, f_hi)
    total_len = lam_max ** 2 - LAMBDA_FLOOR ** 2
    # scale for the tolerance: Simpson estimate of int |f| dmu
    scale = float(np.sum((hi - lo) / 6.0 * (np.abs(f_lo) + 4 * np.abs(f_mid) + np.abs(f_hi))))
    accepted = []
    err_total = 0.0
    n_panels = 0
    for level in range(max_levels):
        q1 = 0.5 * (lo + mid)
        q3 = 0.5 * (mid + hi)
        f_q1, f_q3 = f(q1), f(q3)
        left = filon_panel(t, lo, mid, f_lo, f_q1, f_mid)
        right = filon_panel(t, mid, hi, f_mid, f_q3, f_hi)
        fine = left + right
        diff = np.abs(fine - coarse)
        tol = max(rtol * scale, atol, 1e-300) * (hi - lo) / total_len
        # amplitudes are only accurate to ~1e-12 relative; do not chase their noise
        noise = _ROUNDING_FLOOR * (hi - lo) * (np.abs(f_lo) + np.abs(f_mid) + np.abs(f_hi))
        tol = np.maximum(tol, noise)
        ok = diff <= tol
        accepted.append(np.sum(fine[ok]))
        err_total += float(np.sum(diff[ok]))
        n_panels += int(np.count_nonzero(ok))
        bad = ~ok
        if not np.any(bad):
            break
        if level == max_levels - 1 or 2 * np.count_nonzero(bad) > max_panels:
            k = int(np.argmax(np.where(bad, diff - tol, -np.inf)))
            raise QuadratureError("oscillatory quadrature did not converge",
                                  worst_panel=(math.sqrt(lo[k]), math.sqrt(hi[k])))
        # split the rejected panels; each half already has its three samples
        lo, hi = np.concatenate([lo[bad], mid[bad]]), np.concatenate([mid[bad], hi[bad]])
        f_lo = np.concatenate([f_lo[bad], f_mid[bad]])
        f_hi = np.concatenate([f_mid[bad], f_hi[bad]])
        f_mid = np.concatenate([f_q1[bad], f_q3[bad]])
        coarse = np.concatenate([left[bad], right[bad]])
        mid = 0.5 * (lo + hi)
    return QuadratureResult(complex(np.sum(accepted)), err_total, n_panels, scale)


# --------------------------------------------------------------------------
# stationary phase bound

@dataclass
class StationaryPhaseCheck:
    t: float
    delta: float
    lhs: float
    rhs: float
    ratio: float


class Phase(NamedTuple):
    phi: Callable
    dphi: Callable
    d2phi: Callable


QUADRATIC_PHASE = Phase(lambda x: x * x, lambda x: 2.0 * x, lambda x: np.full_like(x, 2.0))


def _simpson(y, h):
    n = len(y)
    if n % 2 == 0:
        raise ValueError("Simpson needs an odd number of samples")
    return h / 3.0 * (y[0] + y[-1] + 4.0 * np.sum(y[1:-1:2]) + 2.0 * np.sum(y[2:-1:2]))


def lemma2_check(x, a, da, t, phase: Phase = QUADRATIC_PHASE, phi2_max=None,
                 points_per_wave=32, chunk=2_000_000) -> StationaryPhaseCheck:
    """Both sides of the stationary-phase bound for an amplitude tabulated on ``x``.

    ``a`` and ``da`` (its derivative) are samples on the uniform grid ``x`` and are
    interpolated by cubic splines; the amplitude must vanish at both ends of
    ``x``.  lhs = |int e^{i t phi} a| by composite Simpson with at least
    ``points_per_wave`` samples per local oscillation; rhs =
    delta^2 int (|a|/(delta^2 + x^2) + 1_{|x|>delta} |a'|/|x|) on the same fine
    grid, with delta = |t|^{-1/2}.
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a)
    da = np.asarray(da)
    if t == 0:
        raise DomainError("t must be nonzero")
    delta = abs(t) ** -0.5
    d2 = phase.d2phi(x)
    cmax = float(np.max(d2)) if phi2_max is None else phi2_max
    if np.min(d2) < 1.0 - 1e-12 or np.max(d2) > cmax * (1 + 1e-12):
        raise DomainError("phase must satisfy 1 <= phi'' <= C on the amplitude support")
    if not np.any(a):
        return StationaryPhaseCheck(float(t), delta, 0.0, 0.0, 0.0)
    lo, hi = x[0], x[-1]
    slope = float(np.max(np.abs(phase.dphi(np.array([lo, hi])))))
    h = min(2 * np.pi / (abs(t) * max(slope, 1.0) * points_per_wave), delta / 40.0,
            (hi - lo) / 4000.0)
    n = int(math.ceil((hi - lo) / h))
    n += n % 2  # even number of intervals
    h = (hi - lo) / n
    sa = CubicSpline(x, a)
    sda = CubicSpline(x, da)
    lhs_acc = 0.0 + 0.0j
    rhs_acc = 0.0
    # process in chunks of an even number of intervals, Simpson on each
    step = chunk - chunk % 2
    for s in range(0, n, step):
        e = min(s + step, n)
        xs = lo + h * np.arange(s, e + 1)
        av = sa(xs)
        lhs_acc += _simpson(np.exp(1j * t * phase.phi(xs)) * av, h)
        dv = sda(xs)
        ax = np.abs(xs)
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.where(ax > delta, np.abs(dv) / ax, 0.0)
        rhs_acc += _simpson(np.abs(av) / (delta ** 2 + xs ** 2) + tail, h)
    lhs = abs(lhs_acc)
    rhs = delta ** 2 * rhs_acc
    return StationaryPhaseCheck(float(t), delta, float(lhs), float(rhs),
                                float(lhs / rhs) if rhs > 0 else 0.0)


def amplitude_family(name, x):
    """Built-in compactly supported test amplitudes on the grid ``x``: values and derivative."""
    x = np.asarray(x, dtype=float)
    if name == "gaussian":
        # truncated far below double precision on the default grid [-6, 6]
        val = np.exp(-x * x)
        return val, -2.0 * x * val
    if name == "bump":
        s = x / 2.0
        inside = np.abs(s) < 1
        val = np.zeros_like(x)
        der = np.zeros_like(x)
        si = s[inside]
        val[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
        der[inside] = val[inside] * (-2.0 * si / (1.0 - si * si) ** 2) / 2.0
        return val, der
    if name == "shifted-gaussian":
        y = x - 1.0
        val = np.exp(-y * y) * (1.0 + 0.5 * x)
        return val, (-2.0 * y * (1.0 + 0.5 * x) + 0.5) * np.exp(-y * y)
    raise DomainError(f"unknown amplitude family {name!r}")


AMPLITUDE_FAMILIES = ("gaussian", "bump", "shifted-gaussian")


# --------------------------------------------------------------------------
# chain integrals

@dataclass(frozen=True)
class BornPhaseInstance:
    """A chain of m distances split into J (phase-carrying) and J* indices (1-based)."""
    d: tuple
    J: frozenset

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(float(x) for x in self.d))
        object.__setattr__(self, "J", frozenset(int(j) for j in self.J))
        if not self.d or any(not x > 0 for x in self.d):
            raise DomainError("chain distances must be positive")
        if not self.J <= set(range(1, self.m + 1)):
            raise DomainError("J must be a subset of {1..m}")

    @property
    def m(self):
        return len(self.d)

    @property
    def J_star(self):
        return frozenset(range(1, self.m + 1)) - self.J

    @property
    def s(self):
        return sum(self.d[j - 1] for j in self.J)

    def lambda0(self, t):
        return self.s / (2.0 * t)

    def log_weight(self):
        """prod over J* of (1 + log- d)."""
        return math.prod(1.0 + max(-math.log(self.d[k - 1]), 0.0) for k in self.J_star)


class ChainValue(NamedTuple):
    value: complex
    t_abs_value: float


def born_chain_integral(inst: BornPhaseInstance, t, L=16.0, sign=-1, y0=8.0,
                        rtol=1e-6) -> ChainValue:
    """int_0^inf lam e^{i(t lam^2 +- lam s)} chi1(lam) chi2(lam/L) prod_J w+(lam d_j)
    prod_J* w-(lam d_l) dlam, with w+- the large/small-argument parts of the
    Hankel amplitude.  ``L = inf`` is not allowed; pass a large L instead."""
    if not (L >= 1 and math.isfinite(L)):
        raise DomainError("L must be finite and >= 1")
    s = inst.s
    d = inst.d

    def amp(lam):
        lam = np.asarray(lam, dtype=float)
        out = np.zeros(lam.shape, dtype=complex)
        m = (lam > 1.0) & (lam < 2.0 * L)
        if not np.any(m):
            return out
        x = lam[m]
        val = specfun.CHI1(x) * specfun.CHI2(x / L) * np.exp(1j * sign * x * s)
        for j in range(1, inst.m + 1):
            sp = specfun.hankel_split(x * d[j - 1], y0)
            val = val * (sp.omega_plus if j in inst.J else sp.omega_minus)
        out[m] = val
        return out

    # panel edges at the cutoff transitions and the omega+- transitions
    br = [1.0, 2.0, L, 2.0 * L] + [y0 / x for x in d] + [2 * y0 / x for x in d]
    # t*|value| is what gets bounded, so an absolute floor of 1e-9/t suffices
    value = oscillatory_quadrature(amp, t, 2.0 * L, rtol=rtol, breaks=br, lam_geo=0.5,
                                   atol=1e-9 / abs(t),
                                   n_uniform=64)
    return ChainValue(value, abs(t) * abs(value))
