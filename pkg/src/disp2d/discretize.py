"""Quadrature grids in the plane and integral operators as kernel matrices.

Matrices act on *weighted coordinates*: an operator with kernel K(x, y) is the
matrix ``A[i, j] = K(x_i, x_j) * w_j`` so that ``A @ f`` approximates
``int K(x_i, y) f(y) dy``.  Inner products are ``<f, g> = sum w f conj(g)``.

The logarithmic diagonal singularity of G0 and R0 is handled by replacing the
diagonal value with the average of the kernel over a disk of the same area as
the node's cell (radius ``r_c = sqrt(w / pi)``); the mean of ``log|y|`` over
such a disk is ``log r_c - 1/2``.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import specfun
from .errors import ConfigError, ZeroPotentialError

TWO_PI = 2.0 * np.pi


@dataclass(eq=False)
class Grid:
    nodes: np.ndarray
    weights: np.ndarray
    scheme: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ConfigError("nodes must be an (n, 2) array", "grid")
        if np.any(self.weights <= 0):
            raise ConfigError("quadrature weights must be positive", "grid")

    @property
    def n(self):
        return len(self.weights)

    @cached_property
    def radii(self):
        return np.hypot(self.nodes[:, 0], self.nodes[:, 1])

    @cached_property
    def cell_radius(self):
        return np.sqrt(self.weights / np.pi)

    @cached_property
    def distances(self):
        d = self.nodes[:, None, :] - self.nodes[None, :, :]
        return np.hypot(d[..., 0], d[..., 1])

    @cached_property
    def _upper(self):
        return np.triu_indices(self.n, k=1)

    def integrate(self, values):
        return np.sum(self.weights * np.asarray(values), axis=-1)

    def inner(self, f, g):
        return np.sum(self.weights * f * np.conj(g))

    def symmetric_kernel(self, offdiag, diag, dtype=complex):
        """Assemble ``K(x_i, x_j) * w_j`` from a radial kernel.

        ``offdiag`` maps an array of distances to kernel values and is called
        only on the upper triangle; ``diag`` maps cell radii to the regularised
        diagonal values.
        """
        iu, ju = self._upper
        k = np.empty((self.n, self.n), dtype=dtype)
        vals = offdiag(self.distances[iu, ju])
        k[iu, ju] = vals
        k[ju, iu] = vals
        k[np.diag_indices(self.n)] = diag(self.cell_radius)
        return k * self.weights[None, :]

    def refined(self, factor=2):
        if self.scheme == "polar":
            p = dict(self.params)
            p["n_r"] *= factor
            p["n_theta"] *= factor
            return build_grid("polar", **p)
        p = dict(self.params)
        p["n"] *= factor
        return build_grid("cartesian", **p)


def polar_edges(n_r, r_max, r_scale):
    # uniform in log(1 + r / r_scale): linear near the origin, geometric far out
    s = np.linspace(0.0, 1.0, n_r + 1)
    edges = r_scale * np.expm1(s * np.log1p(r_max / r_scale))
    edges[-1] = r_max
    return edges


def build_grid(scheme, **params) -> Grid:
    """Polar ``(n_r, n_theta, r_max[, r_scale])`` or cartesian ``(n, L)`` grid.

    Polar cells are annular sectors with edges uniform in ``log(1 + r/r_scale)``;
    the node sits at the area midpoint ``sqrt((r_k^2 + r_{k+1}^2)/2)``.  Cartesian
    grids cover ``[-L, L]^2`` with cell-centred nodes.
    """
    if scheme == "polar":
        n_r = int(params.get("n_r", 0))
        n_t = int(params.get("n_theta", 0))
        r_max = float(params.get("r_max", 0.0))
        r_scale = float(params.get("r_scale", 1.0))
        if n_r < 8:
            raise ConfigError("must be >= 8", "grid.n_r")
        if n_t < 8:
            raise ConfigError("must be >= 8", "grid.n_theta")
        if not r_max > 0:
            raise ConfigError("must be > 0", "grid.r_max")
        if not r_scale > 0:
            raise ConfigError("must be > 0", "grid.r_scale")
        edges = polar_edges(n_r, r_max, r_scale)
        r_node = np.sqrt(0.5 * (edges[:-1] ** 2 + edges[1:] ** 2))
        ring_area = np.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
        theta = TWO_PI * (np.arange(n_t) + 0.5) / n_t
        rr, tt = np.meshgrid(r_node, theta, indexing="ij")
        nodes = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])
        weights = np.repeat(ring_area / n_t, n_t)
        return Grid(nodes, weights, "polar",
                    dict(n_r=n_r, n_theta=n_t, r_max=r_max, r_scale=r_scale))
    if scheme == "cartesian":
        n = int(params.get("n", 0))
        half = float(params.get("L", 0.0))
        if n < 8:
            raise ConfigError("must be >= 8", "grid.n")
        if not half > 0:
            raise ConfigError("must be > 0", "grid.L")
        h = 2.0 * half / n
        x = -half + h * (np.arange(n) + 0.5)
        xx, yy = np.meshgrid(x, x, indexing="ij")
        nodes = np.column_stack([xx.ravel(), yy.ravel()])
        return Grid(nodes, np.full(n * n, h * h), "cartesian", dict(n=n, L=half))
    raise ConfigError(f"unknown grid scheme {scheme!r}", "grid.scheme")


@dataclass(eq=False)
class KernelOperator:
    matrix: np.ndarray
    tag: str
    grid: Grid

    @property
    def kernel(self):
        """Unweighted kernel values ``K(x_i, x_j)``."""
        return self.matrix / self.grid.weights[None, :]

    def is_symmetric(self, rtol=1e-12):
        k = self.kernel
        return np.allclose(k, k.T, rtol=rtol, atol=rtol * np.max(np.abs(k)))

    def __call__(self, f):
        return self.matrix @ f


def g0_operator(grid: Grid) -> KernelOperator:
    """G0 f(x) = -(1/2 pi) int log|x - y| f(y) dy."""
    mat = grid.symmetric_kernel(lambda r: -np.log(r) / TWO_PI,
                                lambda rc: -(np.log(rc) - 0.5) / TWO_PI, dtype=float)
    return KernelOperator(mat, "G0", grid)


def resolvent_operator(sign, lam, grid: Grid) -> KernelOperator:
    """R0^{+/-}(lam^2) with the cell-averaged logarithm on the diagonal.

    Near r = 0 the kernel is ``-(1/2pi) log r`` plus a continuous remainder; the
    remainder is taken at ``r_c`` and the log part replaced by its disk mean,
    which adds exactly ``1/(4 pi)``.
    """
    mat = grid.symmetric_kernel(
        lambda r: specfun.free_resolvent_kernel(sign, lam, r),
        lambda rc: specfun.free_resolvent_kernel(sign, lam, rc) + 1.0 / (4 * np.pi))
    return KernelOperator(mat, f"R0({lam:.6g},{'+' if sign > 0 else '-'})", grid)


def e0_operator(sign, lam, grid: Grid) -> KernelOperator:
    """Low-energy remainder E0^{+/-}(lam); consistent with :func:`resolvent_operator`
    and :func:`g0_operator` on the diagonal."""
    mat = grid.symmetric_kernel(lambda r: specfun.e0_error_kernel(sign, lam, r),
                                lambda rc: specfun.e0_error_kernel(sign, lam, rc))
    return KernelOperator(mat, f"E0({lam:.6g},{'+' if sign > 0 else '-'})", grid)


def sandwich(v, op: KernelOperator, tag=None) -> KernelOperator:
    """Operator ``v K v`` for a multiplication vector ``v``."""
    return KernelOperator(v[:, None] * op.matrix * v[None, :], tag or f"v{op.tag}v", op.grid)


@dataclass(eq=False)
class ProjectionPair:
    P: np.ndarray
    Q: np.ndarray


def projections(pot) -> ProjectionPair:
    """P = v <., v> / ||V||_1 and Q = I - P in the weighted inner product."""
    if pot.l1_norm == 0:
        raise ZeroPotentialError("projection onto v needs ||V||_1 > 0")
    v, w = pot.v, pot.grid.weights
    P = np.outer(v, v * w) / pot.l1_norm
    return ProjectionPair(P, np.eye(len(v)) - P)


def m_operator(sign, lam, pot) -> KernelOperator:
    """M^{+/-}(lam) = U + v R0^{+/-}(lam^2) v."""
    r0 = resolvent_operator(sign, lam, pot.grid)
    mat = pot.v[:, None] * r0.matrix * pot.v[None, :]
    mat[np.diag_indices_from(mat)] += pot.U
    return KernelOperator(mat, f"M({lam:.6g},{'+' if sign > 0 else '-'})", pot.grid)


def weighted_hs_norm(A: KernelOperator, s=0.0):
    """sqrt of the quadrature of (1+|x|)^{-2s} |K(x,y)|^2 (1+|y|)^{-2s}."""
    g = A.grid
    wt = g.weights * (1.0 + g.radii) ** (-2.0 * s)
    return float(np.sqrt(np.einsum("i,ij,j->", wt, np.abs(A.kernel) ** 2, wt)))


def to_symmetric(matrix, grid: Grid):
    """Similarity transform W^{1/2} A W^{-1/2}: weighted L2 becomes Euclidean."""
    sw = np.sqrt(grid.weights)
    return sw[:, None] * matrix / sw[None, :]


def operator_norm(matrix, grid: Grid):
    """L2 operator norm of a matrix in weighted coordinates."""
    return float(np.linalg.norm(to_symmetric(matrix, grid), 2))
