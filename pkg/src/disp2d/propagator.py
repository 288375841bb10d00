"""Time evolution e^{itH} P_ac by three independent routes, and decay fits.

* spectral: ``<e^{itH} P_ac f, g> = (1/(pi i)) int e^{it lam^2} lam
  <[R_V^+ - R_V^-](lam^2) f, g> dlam``; for real f, g the bracket is
  ``2i Im <R_V^+ f, g>``.  The amplitude is tabulated on a lam ladder and the
  integral evaluated by :func:`disp2d.oscint.oscillatory_quadrature`.
* lattice: dense eigendecomposition of the five-point -Delta_h + V on a
  square with Dirichlet walls (reduced to the D4-invariant sector when the
  data allow it); P_ac is approximated by the nonnegative spectrum.
* free: direct quadrature against the exact kernel (i/(4 pi t)) e^{-i|x-y|^2/(4t)}.
"""
from dataclasses import dataclass, field
from typing import NamedTuple
import math
import warnings

import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.interpolate import CubicSpline

from . import specfun
from .discretize import Grid, KernelOperator, resolvent_operator, operator_norm, m_operator
from .lowenergy import symmetric_resolvent, regularity_test
from .oscint import oscillatory_quadrature
from .errors import ConfigError, DomainError, NumericalError, QuadratureError, SingularOperatorError

MIN_FIT_ROWS = 8


# --------------------------------------------------------------------------
# configuration and reports

@dataclass
class EvolutionConfig:
    t_list: tuple = tuple(np.geomspace(5.0, 50.0, 10))
    lambda1: float = 0.25
    lambda_max: float = 6.0
    quad_rtol: float = 1e-6
    born_terms: int = 6
    lam_low: float = 1e-6        # lower end of the geometric part of the amplitude table
    lam_split: float = 0.2       # geometric below, uniform above
    n_low: int = 40
    dlam: float = 0.04           # uniform table spacing above lam_split
    tail_check: bool = True

    def __post_init__(self):
        self.t_list = tuple(float(t) for t in self.t_list)
        self.validate()

    def validate(self):
        if not self.t_list:
            raise ConfigError("must be nonempty", "evolution.t_list")
        if any(b < a for a, b in zip(self.t_list, self.t_list[1:])):
            raise ConfigError("must be sorted ascending", "evolution.t_list")
        if not 0 < self.lambda1 < self.lambda_max:
            raise ConfigError("need 0 < lambda1 < lambda_max", "evolution.lambda1")
        if self.born_terms < 0:
            raise ConfigError("must be >= 0", "evolution.born_terms")
        if not 0 < self.lam_low < self.lam_split < self.lambda_max:
            raise ConfigError("need 0 < lam_low < lam_split < lambda_max", "evolution.lam_split")
        if self.n_low < 4 or not self.dlam > 0:
            raise ConfigError("table resolution too small", "evolution.n_low")

    @property
    def chi(self):
        return specfun.CutoffFamily("chi", self.lambda1)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)}", "evolution")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc), "evolution") from exc

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()}


class DecayRow(NamedTuple):
    t: float
    value: float
    flagged: bool = False


@dataclass
class DecayReport:
    rows: list
    method_tag: str
    fitted_exponent: float = math.nan
    exponent_ci: float = math.nan
    extra: dict = field(default_factory=dict)

    def fit(self, t_min=None, t_max=None):
        rows = [r for r in self.rows if not r.flagged
                and (t_min is None or r.t >= t_min) and (t_max is None or r.t <= t_max)]
        self.fitted_exponent, self.exponent_ci = decay_fit(rows)
        return self

    def summary(self):
        return {"exponent": self.fitted_exponent, "ci": self.exponent_ci,
                "method": self.method_tag}


def decay_fit(rows, confidence=0.95):
    """Least-squares slope of log(value) against log(t) and its confidence half-width.

    Rows are ``(t, value, ...)``; nonpositive values are dropped with a warning.
    At least 8 usable rows spanning a decade in t are required.
    """
    t = np.array([r[0] for r in rows], dtype=float)
    y = np.array([r[1] for r in rows], dtype=float)
    good = (y > 0) & (t > 0) & np.isfinite(y)
    if not np.all(good):
        warnings.warn(f"decay_fit: excluding {np.count_nonzero(~good)} nonpositive rows",
                      RuntimeWarning, stacklevel=2)
    t, y = t[good], y[good]
    if len(t) < MIN_FIT_ROWS:
        raise NumericalError(f"decay fit refused: {len(t)} usable rows, need {MIN_FIT_ROWS}")
    if t.max() < 10.0 * t.min() * (1 - 1e-12):
        raise NumericalError("decay fit refused: rows span less than one decade in t")
    res = stats.linregress(np.log(t), np.log(y))
    half = stats.t.ppf(0.5 + confidence / 2, len(t) - 2) * res.stderr
    return float(res.slope), float(half)


# --------------------------------------------------------------------------
# test data

def bump(center=(0.0, 0.0), width=1.5):
    """L1-normalised Gaussian bump exp(-|x - c|^2/s^2)/(pi s^2) as a callable of points."""
    cx, cy = map(float, center)
    s2 = float(width) ** 2

    def f(points):
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        return np.exp(-((p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2) / s2) / (np.pi * s2)
    f.center, f.width = (cx, cy), float(width)
    return f


# --------------------------------------------------------------------------
# Born series

class BornResult(NamedTuple):
    operator: KernelOperator
    contraction: float


def born_contraction(sign, lam, pot):
    r0 = resolvent_operator(sign, lam, pot.grid).matrix
    return operator_norm(pot.v[:, None] * r0 * pot.v[None, :], pot.grid)


def born_series_resolvent(sign, lam, N, pot) -> BornResult:
    """Partial sum sum_{l=0}^{N} R0 (-V R0)^l and the contraction factor ||v R0 v||."""
    if N < 0:
        raise ConfigError("must be >= 0", "born_terms")
    r0 = resolvent_operator(sign, lam, pot.grid).matrix
    step = -pot.V[:, None] * r0
    term = r0
    total = r0.copy()
    for _ in range(N):
        term = term @ step
        total += term
    rho = operator_norm(pot.v[:, None] * r0 * pot.v[None, :], pot.grid)
    return BornResult(KernelOperator(total, f"Born{N}({lam:.6g})", pot.grid), rho)


def born_truncation_errors(sign, lam, N_max, pot):
    """Operator-norm errors ||Born_N - R_V|| for N = 0..N_max and the contraction."""
    rv = symmetric_resolvent(sign, lam, pot).matrix
    r0 = resolvent_operator(sign, lam, pot.grid).matrix
    step = -pot.V[:, None] * r0
    term, total = r0, r0.copy()
    errs = [operator_norm(total - rv, pot.grid)]
    for _ in range(N_max):
        term = term @ step
        total = total + term
        errs.append(operator_norm(total - rv, pot.grid))
    rho = operator_norm(pot.v[:, None] * r0 * pot.v[None, :], pot.grid)
    return np.array(errs), rho


# --------------------------------------------------------------------------
# spectral route

def rolloff(lam, lam_max):
    """1 up to lam_max/2, smooth transition to 0 at lam_max."""
    return specfun.CHI2(2.0 * np.asarray(lam, dtype=float) / lam_max)


def spectral_weight(lam, cfg: EvolutionConfig, lam_max=None):
    """chi(lam) + (1 - chi(lam)) * rolloff(lam): low-energy cutoff closed by a smooth tail."""
    lam_max = cfg.lambda_max if lam_max is None else lam_max
    c = cfg.chi(lam)
    return c + (1.0 - c) * rolloff(lam, lam_max)


def amplitude_ladder(cfg: EvolutionConfig, lam_top):
    low = np.geomspace(cfg.lam_low, cfg.lam_split, cfg.n_low)
    n_hi = int(math.ceil((lam_top - cfg.lam_split) / cfg.dlam))
    high = np.linspace(cfg.lam_split, lam_top, n_hi + 1)[1:]
    return np.concatenate([low, high])


def resolvent_pairing(sign, lam, f, g, pot):
    """<R_V(lam^2) f, g> without forming R_V."""
    grid = pot.grid
    r0 = resolvent_operator(sign, lam, grid).matrix
    w = grid.weights
    r0f = r0 @ f
    base = np.sum(w * r0f * np.conj(g))
    if pot.is_zero:
        return base
    M = m_operator(sign, lam, pot).matrix
    try:
        x = np.linalg.solve(M, pot.v * r0f)
    except np.linalg.LinAlgError as exc:
        raise SingularOperatorError("M(lambda) is singular", block="M", lam=lam) from exc
    # <R0 v x, g> = sum_i w_i (R0 (v x))_i conj(g_i)
    return base - np.sum(w * (r0 @ (pot.v * x)) * np.conj(g))


def spectral_amplitude(lam_nodes, f, g, pot, independent_minus=False):
    """(1/(pi i)) <[R_V^+ - R_V^-] f, g> at each lam (real f, g give (2/pi) Im <R_V^+ f, g>)."""
    out = np.empty(len(lam_nodes), dtype=complex)
    for k, lam in enumerate(lam_nodes):
        plus = resolvent_pairing(1, lam, f, g, pot)
        if independent_minus:
            minus = resolvent_pairing(-1, lam, f, g, pot)
        else:
            # R_V^- has the conjugate kernel; <R^- f, g> = conj(<R^+ conj f, conj g>)
            minus = np.conj(resolvent_pairing(1, lam, np.conj(f), np.conj(g), pot)) \
                if (np.iscomplexobj(f) or np.iscomplexobj(g)) else np.conj(plus)
        out[k] = (plus - minus) / (np.pi * 1j)
    return out


def _integrate_table(lam_nodes, amp, t_list, weight_fn, lam_max, rtol, breaks):
    spline_re = CubicSpline(lam_nodes, amp.real)
    spline_im = CubicSpline(lam_nodes, amp.imag)
    lo = lam_nodes[0]

    def a(lam):
        lam = np.asarray(lam, dtype=float)
        x = np.clip(lam, lo, lam_nodes[-1])
        val = (spline_re(x) + 1j * spline_im(x)) * weight_fn(lam)
        # below the table the amplitude is frozen at its first value (contribution ~ lo^2)
        return np.where(lam <= lam_max, val, 0.0)

    values, flags = [], []
    for t in t_list:
        try:
            values.append(oscillatory_quadrature(a, t, lam_max, rtol=rtol, breaks=breaks))
            flags.append(False)
        except QuadratureError as exc:
            warnings.warn(f"t={t:g}: {exc}", RuntimeWarning, stacklevel=3)
            values.append(complex("nan"))
            flags.append(True)
    return np.array(values), flags


def spectral_evolution(f, g, cfg: EvolutionConfig, pot, independent_minus=False,
                       amplitude=None, check_regular=True) -> DecayReport:
    """<e^{itH} P_ac f, g> for each t of ``cfg.t_list``; rows hold the modulus.

    ``f`` and ``g`` are values on ``pot.grid``.  The amplitude is tabulated once
    up to ``2 * lambda_max`` so the tail check (doubling ``lambda_max``) reuses it.
    ``extra['values']`` keeps the complex results and ``extra['tail_change_rows']``
    the relative change of each row when the roll-off point is doubled.
    """
    f = np.asarray(f)
    g = np.asarray(g)
    if check_regular and amplitude is None and not pot.is_zero:
        report = regularity_test(pot)
        if not report.regular:
            raise DomainError(f"potential is not regular at zero energy "
                              f"(sigma_min={report.sigma_min:.3g} <= tau={report.tau:.3g})")
    top = 2.0 * cfg.lambda_max if cfg.tail_check else cfg.lambda_max
    if amplitude is None:
        lam_nodes = amplitude_ladder(cfg, top)
        amp = spectral_amplitude(lam_nodes, f, g, pot, independent_minus)
    else:
        lam_nodes, amp = amplitude
    L1 = cfg.lambda1
    breaks = [L1, 2 * L1, cfg.lambda_max / 2, cfg.lambda_max]
    values, flags = _integrate_table(lam_nodes, amp, cfg.t_list,
                                     lambda lam: spectral_weight(lam, cfg), cfg.lambda_max,
                                     cfg.quad_rtol, breaks)
    rep = DecayReport(rows=[DecayRow(t, float(abs(v)), fl)
                            for t, v, fl in zip(cfg.t_list, values, flags)],
                      method_tag="spectral",
                      extra={"values": values, "amplitude": (lam_nodes, amp)})
    if cfg.tail_check:
        lm2 = 2.0 * cfg.lambda_max
        v2, _ = _integrate_table(lam_nodes, amp, cfg.t_list,
                                 lambda lam: spectral_weight(lam, cfg, lm2), lm2,
                                 cfg.quad_rtol, breaks + [lm2 / 2, lm2])
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.abs(v2 - values) / np.abs(values)
        rep.extra["tail_change_rows"] = rel
        rep.extra["tail_change"] = float(np.nanmax(rel))
        rep.extra["values_doubled"] = v2
    return rep


# --------------------------------------------------------------------------
# free evolution

def free_kernel(t, r):
    """Kernel of e^{itH0}: (i/(4 pi t)) exp(-i r^2/(4t))."""
    r = np.asarray(r, dtype=float)
    return 1j / (4.0 * np.pi * t) * np.exp(-1j * r * r / (4.0 * t))


class FreeEvolution(NamedTuple):
    values: np.ndarray
    sup_norm: float


def free_evolution(f, t, grid: Grid, points=None, block=4096) -> FreeEvolution:
    """(e^{itH0} f)(x) at ``points`` (default: the grid nodes) by direct quadrature."""
    f = np.asarray(f)
    pts = grid.nodes if points is None else np.asarray(points, dtype=float).reshape(-1, 2)
    if t == 0:
        if points is not None:
            raise ConfigError("t = 0 needs evaluation on the grid itself", "t")
        vals = f.astype(complex)
        return FreeEvolution(vals, float(np.max(np.abs(vals))))
    supp = np.flatnonzero(f)
    wf = grid.weights[supp] * f[supp]
    ys = grid.nodes[supp]
    out = np.empty(len(pts), dtype=complex)
    for s in range(0, len(pts), block):
        xs = pts[s:s + block]
        d2 = (xs[:, None, 0] - ys[None, :, 0]) ** 2 + (xs[:, None, 1] - ys[None, :, 1]) ** 2
        out[s:s + block] = np.exp(-1j * d2 / (4.0 * t)) @ wf
    out *= 1j / (4.0 * np.pi * t)
    return FreeEvolution(out, float(np.max(np.abs(out))))


def free_decay(f, t_list, grid: Grid, points=None) -> DecayReport:
    rows = [DecayRow(float(t), free_evolution(f, t, grid, points).sup_norm) for t in t_list]
    return DecayReport(rows=rows, method_tag="free")


def free_pairing(f, g, t_list, grid: Grid):
    """<e^{itH0} f, g> on the grid for each t."""
    w = grid.weights
    return np.array([np.sum(w * free_evolution(f, t, grid).values * np.conj(g))
                     for t in t_list])


# --------------------------------------------------------------------------
# lattice oracle

def _d4_orbits(N):
    """Orbits of the square [-N, N]^2 under the dihedral group D4.

    Returns (site_index, orbit_index) pairs for every site and the orbit sizes.
    Representatives satisfy 0 <= j <= i <= N.
    """
    n = 2 * N + 1
    ii, jj = np.meshgrid(np.arange(-N, N + 1), np.arange(-N, N + 1), indexing="ij")
    a, b = np.abs(ii), np.abs(jj)
    hi, lo = np.maximum(a, b), np.minimum(a, b)
    orbit = hi * (hi + 1) // 2 + lo           # unique id for 0 <= lo <= hi <= N
    sizes = np.bincount(orbit.ravel(), minlength=(N + 1) * (N + 2) // 2)
    return orbit.ravel(), sizes, n


@dataclass(eq=False)
class LatticeModel:
    """-Delta_h + V on (2N+1)^2 sites with Dirichlet walls, diagonalised."""
    h: float
    N: int
    points: np.ndarray          # site coordinates, row-major
    energies: np.ndarray
    modes: np.ndarray           # columns are eigenvectors in the reduced coordinates
    basis: object               # sparse map reduced -> full (None for the full lattice)
    symmetric: bool

    def to_reduced(self, values):
        values = np.asarray(values)
        return values if self.basis is None else self.basis.T @ values

    def to_full(self, coeffs):
        return coeffs if self.basis is None else self.basis @ coeffs

    def coefficients(self, f_values):
        return self.modes.T @ self.to_reduced(f_values)

    def evolve(self, f_values, t, project=True):
        """Lattice values of e^{itH_h} (P_ac) f."""
        c = self.coefficients(f_values)
        phase = np.exp(1j * t * self.energies)
        if project:
            phase = np.where(self.energies >= 0, phase, 0.0)
        return self.to_full(self.modes @ (phase * c))

    def bound_state_norm(self, f_values):
        c = self.coefficients(f_values)
        return float(np.sqrt(np.sum(np.abs(c[self.energies < 0]) ** 2)) * self.h)

    def pairing(self, f_values, g_values, t, weight=None):
        """<e^{itH_h} W(sqrt H_h) P_ac f, g> with the h^2-weighted inner product."""
        cf = self.coefficients(f_values)
        cg = self.coefficients(g_values)
        pos = self.energies >= 0
        wts = np.ones_like(self.energies) if weight is None else weight(np.sqrt(np.abs(self.energies)))
        return self.h ** 2 * np.sum((np.exp(1j * t * self.energies) * wts * cf * np.conj(cg))[pos])


def _is_d4_invariant(values, n, rtol=1e-12):
    a = np.asarray(values).reshape(n, n)
    scale = max(np.max(np.abs(a)), 1e-300)
    for b in (a[::-1, :], a.T, np.rot90(a)):
        if np.max(np.abs(a - b)) > rtol * scale:
            return False
    return True


def build_lattice(h, L, potential=None, f_check=(), cap=4000, symmetry="auto") -> LatticeModel:
    """Assemble and diagonalise the lattice Hamiltonian.

    ``potential`` is a callable of an (n, 2) array of points (or None).  With
    ``symmetry='auto'`` the D4-invariant sector is used whenever V and every
    array in ``f_check`` are D4-invariant; this is exact for such data because
    e^{itH_h} preserves the sector.  The dense problem size must not exceed ``cap``.
    """
    if not h > 0 or not L > 0:
        raise ConfigError("lattice spacing and half-width must be positive", "lattice")
    N = int(round(L / h))
    n = 2 * N + 1
    x = h * np.arange(-N, N + 1)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    points = np.column_stack([xx.ravel(), yy.ravel()])
    V = np.zeros(n * n) if potential is None else np.asarray(potential(points), dtype=float)
    lap1 = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h ** 2
    eye = sp.identity(n)
    H = (sp.kron(lap1, eye) + sp.kron(eye, lap1) + sp.diags(V)).tocsr()
    use_sym = symmetry is True or (symmetry == "auto" and _is_d4_invariant(V, n)
                                   and all(_is_d4_invariant(f, n) for f in f_check))
    if use_sym:
        orbit, sizes, _ = _d4_orbits(N)
        m = len(sizes)
        if m > cap:
            raise ConfigError(f"reduced lattice has {m} orbits > cap {cap}; use a coarser h",
                              "lattice.h")
        B = sp.csr_matrix((1.0 / np.sqrt(sizes[orbit]), (np.arange(n * n), orbit)),
                          shape=(n * n, m))
        Hr = (B.T @ H @ B).toarray()
    else:
        if n * n > cap:
            raise ConfigError(f"lattice has {n * n} sites > cap {cap}; use a coarser h",
                              "lattice.h")
        B = None
        Hr = H.toarray()
    E, Phi = np.linalg.eigh(0.5 * (Hr + Hr.T))
    return LatticeModel(h=h, N=N, points=points, energies=E, modes=Phi, basis=B,
                        symmetric=use_sym)


def reflection_time(h, L, lam_max=None):
    """Time for the fastest lattice wave to reach the wall: L / (2 min(lam_max, 1/h)).

    The lattice group velocity 2 sin(h xi)/h never exceeds 2/h.
    """
    lam = 1.0 / h if lam_max is None else min(lam_max, 1.0 / h)
    return L / (2.0 * lam)


def lattice_oracle(f, t_list, potential=None, h=1.0, L=100.0, g=None, cap=6000,
                   mode="pair", model=None, weight=None, lam_max=None) -> DecayReport:
    """Decay rows from the lattice surrogate.

    ``f``, ``g`` are callables of points.  ``mode='pair'`` records
    |<e^{itH_h} P_ac f, g>| (g defaults to f); ``mode='sup'`` the sup norm of
    e^{itH_h} P_ac f.  Rows later than :func:`reflection_time` are flagged.
    The returned report's ``extra`` keeps the model.
    """
    if mode not in ("pair", "sup"):
        raise ConfigError(f"unknown mode {mode!r}", "lattice.mode")
    g = f if g is None else g
    if model is not None:
        h, L = model.h, model.h * model.N
    t_ref = reflection_time(h, L, lam_max)
    if model is None:
        N = int(round(L / h))
        x = h * np.arange(-N, N + 1)
        xx, yy = np.meshgrid(x, x, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        model = build_lattice(h, L, potential, f_check=(f(pts), g(pts)), cap=cap)
    fv = f(model.points)
    gv = g(model.points)
    rows = []
    for t in t_list:
        if mode == "pair":
            val = abs(model.pairing(fv, gv, t, weight))
        else:
            val = float(np.max(np.abs(model.evolve(fv, t))))
        rows.append(DecayRow(float(t), float(val), bool(abs(t) > t_ref * (1 + 1e-12))))
    return DecayReport(rows=rows, method_tag="lattice",
                       extra={"model": model, "t_reflect": t_ref})
