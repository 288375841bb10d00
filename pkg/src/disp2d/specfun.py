"""Order-0/1 Bessel and Hankel functions on (0, inf), Hankel splits, cutoffs and
the free-resolvent kernels of -Delta in the plane.

All evaluators are vectorised over numpy arrays and are pure functions.

Evaluation zones (``z`` real, positive):

* ``z <= SERIES_MAX``: ascending power series (40 terms).
* ``SERIES_MAX < z <= ASYMPTOTIC_MIN``: Miller backward recurrence for
  ``J_n`` normalised by ``J_0 + 2 sum J_2k = 1`` and Neumann series for ``Y_0``.
* ``z > ASYMPTOTIC_MIN``: Hankel asymptotic expansion (24 terms).
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError

EULER_GAMMA = 0.57721566490153286061
#: constant ``c`` in ``Y0(z) = (2/pi)(log z + c) J0(z) + r(z)``
LOG_CONST = EULER_GAMMA - np.log(2.0)

SERIES_MAX = 9.0
ASYMPTOTIC_MIN = 25.0
N_SERIES = 40
N_ASYMPTOTIC = 24

_SQRT_HALF = np.sqrt(0.5)


class BesselValues(NamedTuple):
    j0: np.ndarray
    y0: np.ndarray
    j1: np.ndarray
    y1: np.ndarray


def _harmonic(k):
    return np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, k + 1))])


# series coefficients: (-1)^k / (k!)^2, (-1)^k / (k!(k+1)!), harmonic numbers
_K = np.arange(N_SERIES)
_FACT = np.concatenate([[1.0], np.cumprod(np.arange(1, N_SERIES + 2, dtype=float))])
_C0 = (-1.0) ** _K / _FACT[_K] ** 2
_C1 = (-1.0) ** _K / (_FACT[_K] * _FACT[_K + 1])
_H = _harmonic(N_SERIES + 1)
_PSI = _H - EULER_GAMMA  # digamma(k + 1)


def _horner(coef, q):
    acc = np.zeros_like(q) + coef[-1]
    for c in coef[-2::-1]:
        acc = acc * q + c
    return acc


def _series(z):
    q = 0.25 * z * z
    logz2 = np.log(0.5 * z)
    j0 = _horner(_C0, q)
    j1 = 0.5 * z * _horner(_C1, q)
    y0 = (2.0 / np.pi) * (logz2 + EULER_GAMMA) * j0 - (2.0 / np.pi) * _horner(_C0 * _H[:N_SERIES], q)
    y1 = (-2.0 / (np.pi * z) + (2.0 / np.pi) * logz2 * j1
          - (0.5 * z / np.pi) * _horner(_C1 * (_PSI[:N_SERIES] + _PSI[1:N_SERIES + 1]), q))
    return j0, y0, j1, y1


def _miller(z):
    # even start index well above z; J_M(z) is then far below double precision
    top = int(np.ceil(1.3 * float(np.max(z)) + 40))
    top += top % 2
    jp1 = np.zeros_like(z)
    j = np.full_like(z, 1e-280)
    vals = [None] * (top + 2)
    vals[top + 1] = jp1
    vals[top] = j
    for k in range(top, 0, -1):
        jm1 = (2.0 * k / z) * j - jp1
        jp1, j = j, jm1
        vals[k - 1] = j
        big = np.abs(j) > 1e250
        if np.any(big):
            scale = np.where(big, 1e-250, 1.0)
            for idx in range(k - 1, top + 2):
                vals[idx] = vals[idx] * scale
            jp1 = vals[k]
            j = vals[k - 1]
    norm = vals[0] + 2.0 * sum(vals[2 * m] for m in range(1, top // 2 + 1))
    jn = [v / norm for v in vals[: top + 1]]
    j0, j1 = jn[0], jn[1]
    # Neumann series: Y0 = (2/pi)(log(z/2)+gamma)J0 - (4/pi) sum (-1)^k J_2k / k
    logterm = np.log(0.5 * z) + EULER_GAMMA
    neu = np.zeros_like(z)
    dneu = np.zeros_like(z)
    for m in range(1, top // 2):
        sgn = -1.0 if m % 2 else 1.0
        neu += sgn * jn[2 * m] / m
        dneu += sgn * 0.5 * (jn[2 * m - 1] - jn[2 * m + 1]) / m
    y0 = (2.0 / np.pi) * logterm * j0 - (4.0 / np.pi) * neu
    dy0 = (2.0 / (np.pi * z)) * j0 - (2.0 / np.pi) * logterm * j1 - (4.0 / np.pi) * dneu
    return j0, y0, j1, -dy0


def _asym_coeffs(nu, n):
    mu = 4.0 * nu * nu
    a = [1.0]
    for k in range(1, n):
        a.append(a[-1] * (mu - (2 * k - 1) ** 2) / (k * 8.0))
    return np.array(a)


_A0 = _asym_coeffs(0, N_ASYMPTOTIC)
_A1 = _asym_coeffs(1, N_ASYMPTOTIC)


def _pq(a, z):
    w = 1.0 / z
    p = np.zeros_like(z)
    qq = np.zeros_like(z)
    for k in range(len(a) - 1, -1, -1):
        sgn = -1.0 if (k // 2) % 2 else 1.0
        if k % 2 == 0:
            p = p + sgn * a[k] * w ** k
        else:
            qq = qq + sgn * a[k] * w ** k
    return p, qq


def _asymptotic(z):
    amp = np.sqrt(2.0 / (np.pi * z))
    c, s = np.cos(z), np.sin(z)
    p0, q0 = _pq(_A0, z)
    p1, q1 = _pq(_A1, z)
    # chi0 = z - pi/4, chi1 = z - 3pi/4, expanded to avoid rounding z - const
    cos0, sin0 = _SQRT_HALF * (c + s), _SQRT_HALF * (s - c)
    cos1, sin1 = _SQRT_HALF * (s - c), -_SQRT_HALF * (s + c)
    j0 = amp * (p0 * cos0 - q0 * sin0)
    y0 = amp * (p0 * sin0 + q0 * cos0)
    j1 = amp * (p1 * cos1 - q1 * sin1)
    y1 = amp * (p1 * sin1 + q1 * cos1)
    return j0, y0, j1, y1


def bessel_all(z) -> BesselValues:
    """J0, Y0, J1, Y1 at positive real ``z`` (array or scalar)."""
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise DomainError("Bessel functions of the second kind need z > 0")
    out = [np.empty_like(z) for _ in range(4)]
    for mask, fn in ((z <= SERIES_MAX, _series),
                     ((z > SERIES_MAX) & (z <= ASYMPTOTIC_MIN), _miller),
                     (z > ASYMPTOTIC_MIN, _asymptotic)):
        if np.any(mask):
            for dst, val in zip(out, fn(z[mask])):
                dst[mask] = val
    return BesselValues(*out)


def bessel_j0(z):
    """J0 on z >= 0; J0(0) = 1."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(np.isnan(z)):
        raise DomainError("J0 is evaluated on z >= 0 only")
    pos = z > 0
    out = np.ones_like(z)
    if np.any(pos):
        out[pos] = bessel_all(z[pos]).j0
    return out


def bessel_j0_y0(z):
    """Return ``(J0(z), Y0(z))``; raises ``DomainError`` for z <= 0."""
    b = bessel_all(z)
    return b.j0, b.y0


def _check_sign(sign):
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")


def hankel_h0(sign, z):
    """H0^{+/-}(z) = J0(z) +/- i Y0(z)."""
    _check_sign(sign)
    j0, y0 = bessel_j0_y0(z)
    return j0 + sign * 1j * y0


def hankel_rho(sign, z):
    """rho_{+/-}(z) = exp(-/+ i z) H0^{+/-}(z); smooth, |rho| ~ z^{-1/2} at infinity."""
    _check_sign(sign)
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise DomainError("rho is defined for z > 0")
    out = np.empty(z.shape, dtype=complex)
    far = z > ASYMPTOTIC_MIN
    near = ~far
    if np.any(near):
        zn = z[near]
        j0, y0 = bessel_j0_y0(zn)
        out[near] = np.exp(-1j * zn) * (j0 + 1j * y0)
    if np.any(far):
        zf = z[far]
        p0, q0 = _pq(_A0, zf)
        out[far] = np.sqrt(2.0 / (np.pi * zf)) * (p0 + 1j * q0) * np.exp(-0.25j * np.pi)
    return out if sign == 1 else np.conj(out)


# --------------------------------------------------------------------------
# cutoffs

def _psi(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smoothstep(s):
    """C-infinity monotone transition: 0 for s <= 0, 1 for s >= 1.

    Returns ``(value, derivative)``.
    """
    s = np.asarray(s, dtype=float)
    a, b = _psi(s), _psi(1.0 - s)
    den = a + b
    val = a / den
    da = np.zeros_like(s)
    db = np.zeros_like(s)
    ma, mb = a > 0, b > 0
    da[ma] = a[ma] / s[ma] ** 2
    db[mb] = -b[mb] / (1.0 - s[mb]) ** 2
    der = (da * b - a * db) / den ** 2
    return val, der


@dataclass(frozen=True)
class CutoffFamily:
    """``chi1`` is 0 on y <= 1 and 1 on y >= 2, ``chi2 = 1 - chi1``, and
    ``chi`` is the low-pass ``chi2(y / lambda1)``."""

    kind: str
    lambda1: float = 1.0

    def __post_init__(self):
        if self.kind not in ("chi", "chi1", "chi2"):
            raise ValueError(f"unknown cutoff kind {self.kind!r}")
        if self.kind == "chi" and not self.lambda1 > 0:
            raise ValueError("chi cutoff needs lambda1 > 0")

    def __call__(self, y):
        return smooth_cutoff(self, y)[0]


def smooth_cutoff(family: CutoffFamily, y):
    """Value and derivative of the cutoff at ``y``."""
    y = np.asarray(y, dtype=float)
    if family.kind == "chi1":
        return smoothstep(y - 1.0)
    if family.kind == "chi2":
        v, d = smoothstep(y - 1.0)
        return 1.0 - v, -d
    v, d = smoothstep(y / family.lambda1 - 1.0)
    return 1.0 - v, -d / family.lambda1


CHI1 = CutoffFamily("chi1")
CHI2 = CutoffFamily("chi2")


# --------------------------------------------------------------------------
# Hankel split

@dataclass(frozen=True)
class HankelSplit:
    z: np.ndarray
    omega: np.ndarray
    omega_plus: np.ndarray
    omega_minus: np.ndarray
    rho_plus: np.ndarray
    rho_minus: np.ndarray
    y0: float


def hankel_omega(z):
    """omega with H0^+(y) = exp(i(y-1)) omega(y) for y >= 1 and omega = H0^+ below 1."""
    z = np.asarray(z, dtype=float)
    rho = hankel_rho(1, z)
    return np.where(z >= 1.0, np.exp(1j) * rho, np.exp(1j * z) * rho)


def hankel_split(z, y0=8.0) -> HankelSplit:
    if y0 < 4:
        raise ValueError("split scale y0 must be >= 4")
    z = np.asarray(z, dtype=float)
    om = hankel_omega(z)
    plus = CHI1(z / y0) * om
    rho = hankel_rho(1, z)
    return HankelSplit(z=z, omega=om, omega_plus=plus, omega_minus=om - plus,
                       rho_plus=rho, rho_minus=np.conj(rho), y0=float(y0))


# --------------------------------------------------------------------------
# resolvent kernels

def free_resolvent_kernel(sign, lam, r):
    """R0^{+/-}(lam^2)(x, y) = +/- (i/4) H0^{+/-}(lam |x - y|), with r = |x - y|."""
    _check_sign(sign)
    r = np.asarray(r, dtype=float)
    if np.any(r == 0):
        raise DomainError("free resolvent kernel is singular at r = 0")
    if np.any(~(np.asarray(lam) > 0)) or np.any(r < 0):
        raise DomainError("need lambda > 0 and r > 0")
    j0, y0 = bessel_j0_y0(lam * r)
    return sign * 0.25j * j0 - 0.25 * y0


def low_energy_constant(sign, lam):
    """Scalar multiplying P0 in the low-energy expansion of R0^{+/-}(lam^2)."""
    return sign * 0.25j - EULER_GAMMA / (2 * np.pi) - np.log(lam / 2.0) / (2 * np.pi)


E0_SERIES_MAX = 2.0


def e0_error_kernel(sign, lam, r):
    """E0^{+/-}(lam)(x, y) = R0 - [low-energy constant] + log|x - y| / (2 pi).

    Small arguments lam*r use the series with the constant and logarithm removed
    analytically, so the result keeps full relative accuracy as lam -> 0.
    """
    _check_sign(sign)
    lam, r = np.broadcast_arrays(np.asarray(lam, dtype=float), np.asarray(r, dtype=float))
    if np.any(~(lam > 0)) or np.any(~(r > 0)):
        raise DomainError("need lambda > 0 and r > 0")
    z = lam * r
    out = np.empty(z.shape, dtype=complex)
    small = z <= E0_SERIES_MAX
    if np.any(small):
        zs = z[small]
        q = 0.25 * zs * zs
        j0m1 = q * _horner(_C0[1:], q)  # J0 - 1 without cancellation
        hsum = q * _horner(_C0[1:] * _H[1:N_SERIES], q)  # sum_{k>=1} H_k (-q)^k/(k!)^2
        out[small] = (sign * 0.25j * j0m1
                      - (np.log(0.5 * zs) + EULER_GAMMA) * j0m1 / (2 * np.pi)
                      + hsum / (2 * np.pi))
    big = ~small
    if np.any(big):
        rb, lb = r[big], lam[big]
        out[big] = (free_resolvent_kernel(sign, lb, rb) - low_energy_constant(sign, lb)
                    + np.log(rb) / (2 * np.pi))
    return out[()]
