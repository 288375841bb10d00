"""Zero-energy regularity and the low-energy expansion of M(lam)^{-1}.

Notation (all matrices in weighted coordinates, see :mod:`disp2d.discretize`):

* ``T = U + v G0 v`` and ``A(lam) = g(lam) P + T`` is the logarithmic part of
  ``M(lam) = U + v R0(lam^2) v``;
* zero energy is *regular* when ``Q T Q`` is invertible on ``ran Q``; its
  inverse there is ``D0`` and ``Q D0 Q = D0``;
* ``A(lam)^{-1} = S / h(lam) + Q D0 Q`` with ``S`` of rank one and
  ``h(lam) = a log(lam) + z``; the remainder ``E = M^{-1} - S/h - QD0Q``.
"""
from dataclasses import dataclass, field
from typing import NamedTuple
import math
import warnings

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import brentq

from . import specfun
from .discretize import (Grid, g0_operator, resolvent_operator, e0_operator, projections,
                         m_operator, weighted_hs_norm, to_symmetric, operator_norm,
                         KernelOperator)
from .errors import SingularOperatorError, ZeroPotentialError, DomainError, NumericalError

TAU_REL = 1e-8
CASE2_TOL = 1e-10        # |int V| < CASE2_TOL * ||V||_1  -> Case 2
CASE1_TOL = 1e-6         # |int V| > CASE1_TOL * ||V||_1  -> Case 1; in between: both
COND_MAX = 1e13
LADDER_PER_DECADE = 24


def lambda_ladder(lo=1e-6, hi=1e-2, per_decade=LADDER_PER_DECADE):
    n = int(round(per_decade * math.log10(hi / lo))) + 1
    return np.geomspace(lo, hi, n)


def _require_nonzero(pot):
    if pot.is_zero:
        raise ZeroPotentialError("low-energy analysis needs a nonzero potential")


def t_operator(pot) -> np.ndarray:
    """T = U + v G0 v."""
    g0 = g0_operator(pot.grid).matrix
    T = pot.v[:, None] * g0 * pot.v[None, :]
    T[np.diag_indices_from(T)] += pot.U
    return T


def _ran_q_basis(pot):
    # orthonormal basis (Euclidean, symmetric coordinates) of the complement of W^{1/2} v
    e = np.sqrt(pot.grid.weights) * pot.v
    return null_space(e[None, :] / np.linalg.norm(e))


@dataclass(eq=False)
class RegularityReport:
    sigma_min: float
    regular: bool
    tau: float
    qtq_norm: float
    integral_of_V: float
    n_negative: int
    n_positive: int
    D0: np.ndarray | None = None
    abs_bound: float = math.nan
    residual: float = math.nan

    def to_dict(self):
        return {"sigma_min": self.sigma_min, "regular": self.regular, "tau": self.tau,
                "qtq_norm": self.qtq_norm, "integral_of_V": self.integral_of_V,
                "n_negative": self.n_negative, "n_positive": self.n_positive,
                "abs_bound": self.abs_bound, "residual": self.residual}


def _restricted_spectrum(pot, T=None, basis=None):
    T = t_operator(pot) if T is None else T
    B = _ran_q_basis(pot) if basis is None else basis
    Ts = to_symmetric(T, pot.grid)
    Ts = 0.5 * (Ts + Ts.T)
    return np.linalg.eigvalsh(B.T @ Ts @ B)


def regularity_test(pot, tau=None) -> RegularityReport:
    """Decide whether Q(U + vG0v)Q is invertible on ran Q.

    ``sigma_min`` is the smallest singular value of the restriction, computed on
    an orthonormal basis of ran Q; ``tau`` defaults to ``1e-8 * ||QTQ||``.  When
    regular, ``D0 = Q (QTQ + P)^{-1} Q`` which agrees with the inverse of the
    restriction on ran Q and vanishes on ran P.
    """
    _require_nonzero(pot)
    T = t_operator(pot)
    pq = projections(pot)
    eig = _restricted_spectrum(pot, T)
    qtq_norm = float(np.max(np.abs(eig)))
    tau = TAU_REL * qtq_norm if tau is None else float(tau)
    sigma_min = float(np.min(np.abs(eig)))
    rep = RegularityReport(sigma_min=sigma_min, regular=sigma_min > tau, tau=tau,
                           qtq_norm=qtq_norm, integral_of_V=pot.integral,
                           n_negative=int(np.sum(eig < 0)), n_positive=int(np.sum(eig > 0)))
    if rep.regular:
        Q = pq.Q
        QTQ = Q @ T @ Q
        D0 = Q @ np.linalg.solve(QTQ + pq.P, Q)
        rep.D0 = D0
        rep.abs_bound = operator_norm(np.abs(D0), pot.grid)
        rep.residual = float(np.linalg.norm(to_symmetric(D0 @ QTQ - Q, pot.grid), 2))
    return rep


class ScanRow(NamedTuple):
    c: float
    sigma_min: float
    regular: bool
    n_negative: int


@dataclass
class CouplingScan:
    rows: list
    crossings: list = field(default_factory=list)   # located couplings c*
    brackets: list = field(default_factory=list)    # (c_lo, c_hi) per crossing
    monotone: list = field(default_factory=list)    # sigma_min monotone on each side of c*
    tau: float = math.nan

    def flips(self):
        """Number of regular -> not-regular transitions along the (sorted) scan."""
        reg = [r.regular for r in sorted(self.rows, key=lambda r: r.c)]
        return sum(1 for a, b in zip(reg, reg[1:]) if a and not b)


def coupling_scan(pot, c_values, tau_rel=TAU_REL, n_monotone=9) -> CouplingScan:
    """Scan c -> c V, locate sign changes of the restricted spectrum of QTQ.

    Along the coarse grid of couplings the inertia (number of negative
    eigenvalues) of the restriction is tracked; each change is bracketed and
    the eigenvalue that changes sign is driven to zero by Brent's method.  The
    located couplings are appended to the scan so that the not-regular points
    appear in it.
    """
    _require_nonzero(pot)
    B = _ran_q_basis(pot)          # ran Q depends only on the shape of v
    base_T0 = np.diag(pot.U)
    base_vgv = t_operator(pot) - base_T0

    def spectrum(c):
        return _restricted_spectrum(pot, base_T0 + c * base_vgv, B)

    def row(c, eig, tau):
        sm = float(np.min(np.abs(eig)))
        return ScanRow(float(c), sm, sm > tau, int(np.sum(eig < 0)))

    cs = np.sort(np.asarray(c_values, dtype=float))
    eigs = [spectrum(c) for c in cs]
    # tau fixed from the norm at each coupling
    taus = [tau_rel * np.max(np.abs(e)) for e in eigs]
    scan = CouplingScan(rows=[row(c, e, t) for c, e, t in zip(cs, eigs, taus)],
                        tau=float(np.median(taus)))
    for k in range(len(cs) - 1):
        n_lo, n_hi = scan.rows[k].n_negative, scan.rows[k + 1].n_negative
        if n_lo == n_hi:
            continue
        lo, hi = cs[k], cs[k + 1]
        idx = min(n_lo, n_hi)      # eigenvalue index that changes sign

        def f(c):
            return spectrum(c)[idx]

        c_star = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        eig = spectrum(c_star)
        tau = tau_rel * np.max(np.abs(eig))
        scan.rows.append(row(c_star, eig, tau))
        scan.crossings.append(float(c_star))
        scan.brackets.append((float(lo), float(hi)))
        left = [float(np.min(np.abs(spectrum(c)))) for c in np.linspace(lo, c_star, n_monotone)]
        right = [float(np.min(np.abs(spectrum(c)))) for c in np.linspace(c_star, hi, n_monotone)]
        scan.monotone.append(bool(np.all(np.diff(left) <= 0) and np.all(np.diff(right) >= 0)))
    scan.rows.sort(key=lambda r: r.c)
    return scan


class QUQInverse(NamedTuple):
    f: np.ndarray
    case: int
    other: np.ndarray | None = None   # the Case-2 solution when both are returned


def quq_explicit_inverse(g, pot, case2_tol=CASE2_TOL, case1_tol=CASE1_TOL) -> QUQInverse:
    """Closed-form inverse of QUQ on ran Q.

    Case 1 (int V != 0): ``f = Ug + c0 Uv`` with ``c0 = -<Ug, v>/int V`` solves
    ``QUQ f = g`` with ``Qf = f``.  Case 2 (int V = 0): ``f = Ug + c1 v - c1 Uv``
    with ``c1 = -<g, Uv>/||V||_1`` solves ``(QUQ + pi0) f = g`` where
    ``pi0 f = <f, Uv> Uv / ||V||_1``.  Between the two tolerances a warning is
    issued and both solutions are returned (Case 1 in ``f``).
    """
    _require_nonzero(pot)
    g = np.asarray(g)
    w, v, U = pot.grid.weights, pot.v, pot.U
    l1 = pot.l1_norm

    def inner(a, b):
        return np.sum(w * a * np.conj(b))

    gnorm = math.sqrt(float(np.real(inner(g, g))))
    if gnorm == 0:
        return QUQInverse(np.zeros_like(g), 1 if abs(pot.integral) >= case2_tol * l1 else 2)
    if abs(inner(g, v)) > 1e-8 * gnorm * math.sqrt(l1):
        raise DomainError("right-hand side must lie in ran Q (orthogonal to v)")

    def case1():
        c0 = -inner(U * g, v) / pot.integral
        return U * g + c0 * U * v

    def case2():
        c1 = -inner(g, U * v) / l1
        return U * g + c1 * v - c1 * U * v

    ratio = abs(pot.integral) / l1
    if ratio < case2_tol:
        return QUQInverse(case2(), 2)
    if ratio > case1_tol:
        return QUQInverse(case1(), 1)
    warnings.warn(f"|int V|/||V||_1 = {ratio:.3e} is between the Case 1 and Case 2 "
                  "tolerances; returning both explicit inverses", RuntimeWarning, stacklevel=2)
    return QUQInverse(case1(), 1, case2())


def _checked_inv(a, block, lam=None):
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise SingularOperatorError("block inversion failed", block=block, cond=cond, lam=lam)
    return np.linalg.inv(a)


def feshbach_invert(a11, a12, a21, a22):
    """Inverse of the 2x2 block matrix [[a11, a12], [a21, a22]] through the Schur
    complement ``a = (a11 - a12 a22^{-1} a21)^{-1}``."""
    a11, a12, a21, a22 = (np.atleast_2d(np.asarray(x)) for x in (a11, a12, a21, a22))
    d = _checked_inv(a22, "a22")
    a = _checked_inv(a11 - a12 @ d @ a21, "schur complement")
    top_right = -a @ a12 @ d
    bottom_left = -d @ a21 @ a
    bottom_right = d + d @ a21 @ a @ a12 @ d
    return np.block([[a, top_right], [bottom_left, bottom_right]])


def g_coefficient(sign, lam, l1_norm):
    """g(lam) = ||V||_1 (+-i/4 - gamma/2pi - log(lam/2)/2pi)."""
    return l1_norm * specfun.low_energy_constant(sign, lam)


class ExpansionError(NamedTuple):
    lam: float
    E: np.ndarray
    hs: float
    hs_scaled: float          # ||lam^{-1/2} E||_HS
    d_hs_scaled: float        # ||lam^{1/2} dE/dlam||_HS (central difference)
    cond: float


@dataclass(eq=False)
class LowEnergyExpansion:
    pot: object
    report: RegularityReport
    a: float
    z: complex
    trace_term: complex
    S: np.ndarray
    QD0Q: np.ndarray
    T: np.ndarray

    @property
    def rank_S(self):
        sv = np.linalg.svd(to_symmetric(self.S, self.pot.grid), compute_uv=False)
        return int(np.sum(sv > 1e-10 * sv[0]))

    def h(self, lam, sign=1):
        zz = self.z if sign > 0 else np.conj(self.z)
        return self.a * np.log(lam) + zz

    def a_inverse(self, lam, sign=1):
        return self.S / self.h(lam, sign) + self.QD0Q

    def m_inverse(self, lam, sign=1):
        M = m_operator(sign, lam, self.pot).matrix
        cond = np.linalg.cond(to_symmetric(M, self.pot.grid))
        if not np.isfinite(cond) or cond > COND_MAX:
            raise SingularOperatorError("M(lambda) is numerically singular", block="M",
                                        cond=cond, lam=lam)
        return np.linalg.inv(M), cond

    def E(self, lam, sign=1):
        """E(lam) = M(lam)^{-1} - S/h(lam) - QD0Q."""
        minv, _ = self.m_inverse(lam, sign)
        return minv - self.a_inverse(lam, sign)

    def to_dict(self):
        return {"a": self.a, "z": [self.z.real, self.z.imag], "rank_S": self.rank_S,
                "sigma_min": self.report.sigma_min,
                "trace_term": [self.trace_term.real, self.trace_term.imag]}


def low_energy_expansion(pot, lambda_ladder=None, report=None, tau=None) -> LowEnergyExpansion:
    """Coefficients of h(lam) = a log(lam) + z, the rank-one S and QD0Q.

    ``h = g + (<Tv, v> - <T QD0Q T v, v>) / ||V||_1`` so ``a = -||V||_1/2pi`` and
    ``Im z = ||V||_1/4``; ``S = (I - QD0Q T) P (I - T QD0Q)``.
    """
    _require_nonzero(pot)
    report = regularity_test(pot, tau) if report is None else report
    if not report.regular:
        raise SingularOperatorError(
            f"zero energy is not regular (sigma_min={report.sigma_min:.3e} <= tau={report.tau:.3e})",
            block="QTQ")
    T = t_operator(pot)
    pq = projections(pot)
    D = report.D0
    w, v, l1 = pot.grid.weights, pot.v, pot.l1_norm
    Tv = T @ v
    trace_term = (np.sum(w * Tv * v) - np.sum(w * (T @ (D @ Tv)) * v)) / l1
    a = -l1 / (2 * np.pi)
    z = l1 * (0.25j - specfun.LOG_CONST / (2 * np.pi)) + trace_term
    n = len(v)
    eye = np.eye(n)
    S = (eye - D @ T) @ pq.P @ (eye - T @ D)
    exp = LowEnergyExpansion(pot=pot, report=report, a=a, z=complex(z),
                             trace_term=complex(trace_term), S=S, QD0Q=D, T=T)
    if lambda_ladder is not None:
        hv = np.abs(exp.h(np.asarray(lambda_ladder)))
        if np.any(hv < 1e-12 * l1):
            raise NumericalError("h(lambda) vanishes on the ladder; shrink lambda1")
    return exp


def m_inverse_expansion_error(exp: LowEnergyExpansion, lam, sign=1,
                              per_decade=LADDER_PER_DECADE) -> ExpansionError:
    """E(lam) and its scaling diagnostics; the derivative uses the neighbours of
    ``lam`` on the geometric ladder."""
    q = 10.0 ** (1.0 / per_decade)
    minv, cond = exp.m_inverse(lam, sign)
    E = minv - exp.a_inverse(lam, sign)
    dE = (exp.E(lam * q, sign) - exp.E(lam / q, sign)) / (lam * (q - 1.0 / q))
    g = exp.pot.grid
    hs = weighted_hs_norm(KernelOperator(E, "E", g))
    dhs = weighted_hs_norm(KernelOperator(dE, "dE", g))
    return ExpansionError(lam=float(lam), E=E, hs=hs, hs_scaled=hs / math.sqrt(lam),
                          d_hs_scaled=math.sqrt(lam) * dhs, cond=float(cond))


class HFit(NamedTuple):
    a: float
    re_z: float
    im_z: float
    residual: float


def fit_h_coefficients(pot, lams, sign=1) -> HFit:
    """Fit 1/tr(P M(lam)^{-1} P) = a log(lam) + z over ``lams``.

    Since P S P = P and P QD0Q = 0, tr(P M^{-1} P) = 1/h(lam) + tr(P E P), so the
    reciprocal approaches h(lam) as lam -> 0.  Re is fitted linearly in log(lam);
    Im z is the mean of the imaginary part.
    """
    _require_nonzero(pot)
    w, v, l1 = pot.grid.weights, pot.v, pot.l1_norm
    lams = np.asarray(lams, dtype=float)
    hv = np.empty(len(lams), dtype=complex)
    for k, lam in enumerate(lams):
        M = m_operator(sign, lam, pot).matrix
        hv[k] = l1 / np.sum(w * np.linalg.solve(M, v.astype(complex)) * v)
    A = np.column_stack([np.log(lams), np.ones_like(lams)])
    coef, *_ = np.linalg.lstsq(A, hv.real, rcond=None)
    resid = float(np.max(np.abs(A @ coef - hv.real)))
    return HFit(a=float(coef[0]), re_z=float(coef[1]), im_z=float(sign * np.mean(hv.imag)),
                residual=resid)


def ve0v_operator(sign, lam, pot) -> KernelOperator:
    e0 = e0_operator(sign, lam, pot.grid)
    return KernelOperator(pot.v[:, None] * e0.matrix * pot.v[None, :], f"v{e0.tag}v", pot.grid)


def symmetric_resolvent(sign, lam, pot) -> KernelOperator:
    """R_V(lam^2) = R0 - R0 v M(lam)^{-1} v R0."""
    r0 = resolvent_operator(sign, lam, pot.grid)
    if pot.is_zero:
        return KernelOperator(r0.matrix.copy(), f"RV({lam:.6g})", pot.grid)
    M = m_operator(sign, lam, pot).matrix
    cond = np.linalg.cond(to_symmetric(M, pot.grid))
    if not np.isfinite(cond) or cond > COND_MAX:
        raise SingularOperatorError("M(lambda) is numerically singular", block="M",
                                    cond=cond, lam=lam)
    A0 = r0.matrix
    left = A0 * pot.v[None, :]
    right = pot.v[:, None] * A0
    rv = A0 - left @ np.linalg.solve(M, right)
    return KernelOperator(rv, f"RV({lam:.6g},{'+' if sign > 0 else '-'})", pot.grid)


def woodbury_resolvent(sign, lam, pot) -> KernelOperator:
    """(R0^{-1} + V)^{-1}; independent oracle for :func:`symmetric_resolvent`."""
    A0 = resolvent_operator(sign, lam, pot.grid).matrix
    inv = np.linalg.inv(A0)
    inv[np.diag_indices_from(inv)] += pot.V
    return KernelOperator(np.linalg.inv(inv), f"RVw({lam:.6g})", pot.grid)


def resolvent_decomposition(exp: LowEnergyExpansion, lam, sign=1):
    """Pieces of R_V = R0 - R0 v S v R0 / h - R0 v QD0Q v R0 - R0 v E v R0."""
    pot = exp.pot
    A0 = resolvent_operator(sign, lam, pot.grid).matrix
    left = A0 * pot.v[None, :]
    right = pot.v[:, None] * A0
    E = exp.E(lam, sign)
    return {"R0": A0,
            "S_term": -left @ exp.S @ right / exp.h(lam, sign),
            "D0_term": -left @ exp.QD0Q @ right,
            "E_term": -left @ E @ right}


def kernel_difference_identity(lam, d1, d2):
    """Both sides of R0+(d1)R0+(d2) - R0-(d1)R0-(d2) = -(i/8)(Y0(lam d1)J0(lam d2) + J0(lam d1)Y0(lam d2))."""
    rp1 = specfun.free_resolvent_kernel(1, lam, d1)
    rp2 = specfun.free_resolvent_kernel(1, lam, d2)
    rm1 = specfun.free_resolvent_kernel(-1, lam, d1)
    rm2 = specfun.free_resolvent_kernel(-1, lam, d2)
    j1, y1 = specfun.bessel_j0_y0(lam * np.asarray(d1))
    j2, y2 = specfun.bessel_j0_y0(lam * np.asarray(d2))
    return rp1 * rp2 - rm1 * rm2, -0.125j * (y1 * j2 + j1 * y2)
