"""Potentials V on the plane, sampled on a quadrature grid.

A sampled potential carries ``v = |V|^{1/2}`` and ``U = sign V`` (with
``U = +1`` where ``V = 0``) so that ``V = U v^2`` holds exactly at every node.
"""
from dataclasses import dataclass, field, replace
import math
import warnings

import numpy as np

from .discretize import Grid
from .errors import ConfigError, DomainError

FAMILIES = ("gaussian", "disk-indicator", "smooth-bump", "two-well-signed", "radial-table")
COMPACT_FAMILIES = ("disk-indicator", "smooth-bump")
BETA_FIT_FLOOR = 1e-14


@dataclass(frozen=True)
class PotentialSpec:
    family: str
    amplitude: float = 1.0
    length_scale: float = 1.0
    centers: tuple = ((0.0, 0.0),)
    beta_claimed: float = 4.0
    table_radii: tuple = ()
    table_values: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(tuple(map(float, c)) for c in self.centers))
        object.__setattr__(self, "table_radii", tuple(map(float, self.table_radii)))
        object.__setattr__(self, "table_values", tuple(map(float, self.table_values)))
        self.validate()

    def validate(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}",
                              "potential.family")
        if not math.isfinite(self.amplitude):
            raise ConfigError("must be finite", "potential.amplitude")
        if not (math.isfinite(self.length_scale) and self.length_scale > 0):
            raise ConfigError("must be a positive finite number", "potential.length_scale")
        if not math.isfinite(self.beta_claimed):
            raise ConfigError("must be finite", "potential.beta_claimed")
        if not self.centers or any(len(c) != 2 or not all(map(math.isfinite, c))
                                   for c in self.centers):
            raise ConfigError("must be a nonempty list of finite 2D points", "potential.centers")
        if self.family == "two-well-signed" and len(self.centers) != 2:
            raise ConfigError("two-well-signed needs exactly two centers", "potential.centers")
        if self.family == "radial-table":
            r, val = np.array(self.table_radii), np.array(self.table_values)
            if len(r) < 2 or len(r) != len(val):
                raise ConfigError("needs >= 2 radii with matching values", "potential.table_radii")
            if r[0] < 0 or np.any(np.diff(r) <= 0):
                raise ConfigError("radii must be nonnegative and strictly increasing",
                                  "potential.table_radii")
            if not np.all(np.isfinite(val)):
                raise ConfigError("must be finite", "potential.table_values")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "family" not in d:
            raise ConfigError("missing", "potential.family")
        known = {"family", "amplitude", "length_scale", "centers", "beta_claimed",
                 "table_radii", "table_values"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)}", "potential")
        if d["family"] == "two-well-signed" and "centers" not in d:
            s = 1.5 * float(d.get("length_scale", 1.0))
            d["centers"] = ((-s, 0.0), (s, 0.0))
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), "potential") from exc

    def to_dict(self):
        return {"family": self.family, "amplitude": self.amplitude,
                "length_scale": self.length_scale, "centers": [list(c) for c in self.centers],
                "beta_claimed": self.beta_claimed, "table_radii": list(self.table_radii),
                "table_values": list(self.table_values)}

    def scaled(self, c):
        """Same shape, amplitude multiplied by ``c`` (coupling scans)."""
        if self.family == "radial-table":
            return replace(self, table_values=tuple(c * x for x in self.table_values))
        return replace(self, amplitude=c * self.amplitude)


def evaluate(spec: PotentialSpec, points):
    """Pointwise values of V at an (n, 2) array of points."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    A, ell = spec.amplitude, spec.length_scale

    def dist(c):
        return np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])

    out = np.zeros(len(pts))
    if spec.family == "gaussian":
        for c in spec.centers:
            out += A * np.exp(-(dist(c) / ell) ** 2)
    elif spec.family == "disk-indicator":
        for c in spec.centers:
            out += np.where(dist(c) <= ell, A, 0.0)
    elif spec.family == "smooth-bump":
        for c in spec.centers:
            s = dist(c) / ell
            inside = s < 1
            val = np.zeros_like(s)
            val[inside] = A * np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
            out += val
    elif spec.family == "two-well-signed":
        c1, c2 = spec.centers
        out = A * (np.exp(-(dist(c1) / ell) ** 2) - np.exp(-(dist(c2) / ell) ** 2))
    elif spec.family == "radial-table":
        r = dist(spec.centers[0])
        radii, vals = np.array(spec.table_radii), np.array(spec.table_values)
        out = np.where(r <= radii[-1], np.interp(r, radii, vals), 0.0)
    return out


@dataclass(eq=False)
class SampledPotential:
    grid: Grid
    V: np.ndarray
    v: np.ndarray
    U: np.ndarray
    l1_norm: float
    integral: float
    kato_norm: float
    beta_fit: float
    envelope_C: float
    spec: PotentialSpec | None = None
    meta: dict = field(default_factory=dict)

    @property
    def is_zero(self):
        return self.l1_norm == 0.0

    def scaled(self, c):
        return from_values(self.grid, c * self.V,
                           None if self.spec is None else self.spec.scaled(c))


def log_weight_k(x, x1):
    """k(x, x1) = 1 + log+|x1| + log-|x - x1|."""
    x, x1 = np.asarray(x, float), np.asarray(x1, float)
    d = np.hypot(*(x - x1).T) if x.ndim > 1 or x1.ndim > 1 else math.hypot(*(x - x1))
    r1 = np.hypot(*x1.T) if x1.ndim > 1 else math.hypot(*x1)
    if np.any(np.asarray(d) == 0):
        raise DomainError("log_weight_k is singular at x = x1")
    return 1.0 + np.maximum(np.log(r1), 0.0) + np.maximum(-np.log(d), 0.0)


def _disk_mean_log_minus_sq(a):
    # mean of (1 + log-|y|)^2 over the disk |y| <= a
    a = np.asarray(a, dtype=float)
    la = np.log(np.minimum(a, 1.0))
    small = 2.5 - 3.0 * la + la ** 2
    return np.where(a <= 1.0, small, 1.0 + 1.5 / a ** 2)


def kato_norm(pot) -> float:
    """sup_x of the quadrature of (1 + log-|x - y|)^2 |V(y)| over the grid nodes."""
    return _kato(pot.grid, np.abs(pot.V))


def _kato(grid: Grid, absV, block=2048):
    supp = np.flatnonzero(absV)
    if supp.size == 0:
        return 0.0
    mass = absV[supp] * grid.weights[supp]
    ys = grid.nodes[supp]
    # self-interaction: the singular diagonal is replaced by the cell-disk mean
    self_term = np.zeros(grid.n)
    self_term[supp] = _disk_mean_log_minus_sq(grid.cell_radius[supp]) * mass
    best = 0.0
    for start in range(0, grid.n, block):
        xs = grid.nodes[start:start + block]
        d = np.hypot(xs[:, None, 0] - ys[None, :, 0], xs[:, None, 1] - ys[None, :, 1])
        with np.errstate(divide="ignore"):
            k = (1.0 + np.maximum(-np.log(d), 0.0)) ** 2
        k[d == 0] = 0.0
        rows = k @ mass + self_term[start:start + block]
        best = max(best, float(rows.max()))
    return best


def _beta_fit(grid: Grid, V, family):
    if family in COMPACT_FAMILIES:
        return math.inf
    mask = np.abs(V) > BETA_FIT_FLOOR
    if np.count_nonzero(mask) < 3:
        return math.nan
    x = np.log1p(grid.radii[mask])
    if np.ptp(x) == 0:
        return math.nan
    slope = np.polyfit(x, np.log(np.abs(V[mask])), 1)[0]
    return float(-slope)


def from_values(grid: Grid, V, spec: PotentialSpec | None = None) -> SampledPotential:
    V = np.asarray(V, dtype=float)
    if V.shape != (grid.n,):
        raise ConfigError(f"expected {grid.n} values, got shape {V.shape}", "potential")
    v = np.sqrt(np.abs(V))
    U = np.where(V < 0, -1.0, 1.0)
    l1 = float(np.sum(grid.weights * np.abs(V)))
    beta_claimed = spec.beta_claimed if spec is not None else 0.0
    env = float(np.max(np.abs(V) * (1.0 + grid.radii) ** beta_claimed)) if grid.n else 0.0
    family = spec.family if spec is not None else ""
    return SampledPotential(
        grid=grid, V=V, v=v, U=U, l1_norm=l1,
        integral=float(np.sum(grid.weights * V)),
        kato_norm=_kato(grid, np.abs(V)),
        beta_fit=_beta_fit(grid, V, family) if l1 > 0 else math.nan,
        envelope_C=env, spec=spec)


def build_potential(spec: PotentialSpec, grid: Grid) -> SampledPotential:
    """Sample ``spec`` on ``grid``.  An identically zero result is returned with
    ``is_zero`` set; low-energy operations reject it."""
    if grid.n == 0:
        raise ConfigError("grid is empty", "grid")
    pot = from_values(grid, evaluate(spec, grid.nodes), spec)
    if pot.is_zero:
        warnings.warn("potential vanishes on every grid node", RuntimeWarning, stacklevel=2)
    return pot


def zero_potential(grid: Grid) -> SampledPotential:
    return from_values(grid, np.zeros(grid.n))
