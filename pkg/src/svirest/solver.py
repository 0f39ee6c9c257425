"""Gram systems and the per-weight factorization reuse of the channel solve.

Every channel ``k`` solves ``(G_k + n mu I) c_k = z_k`` where ``G_k`` only
depends on the weight ``w[k]``. Channels sharing a weight share one Cholesky
factorization and are solved together as a block of right-hand sides.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

from .kernel import cpd_kernel

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a system cannot be factorized even after jitter."""

    def __init__(self, message, channel=None, diagnostics=None):
        super().__init__(message)
        self.channel = channel
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class GramSystem:
    matrix: np.ndarray
    ridge: float
    kernel_id: object = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def regularized(self) -> np.ndarray:
        return self.matrix + self.ridge * np.eye(self.n)


def as_points(points) -> np.ndarray:
    """``(n, d)`` float array; a flat array is read as ``n`` points in 1D."""
    pts = np.asarray(getattr(points, "points", points), dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


def pairwise_distances(points) -> np.ndarray:
    """Condensed Euclidean distances, one entry per unordered pair."""
    return pdist(as_points(points))


def assemble_gram(kernel, points, mu: float, n: int = None, kernel_id=None) -> GramSystem:
    """``G[i, j] = kernel(|y_i - y_j|)`` with ridge ``n * mu``.

    ``kernel`` is any vectorized radial function, e.g. a ``KernelTable``.
    The kernel is evaluated once per unordered pair, so the matrix is exactly
    symmetric.
    """
    pts = as_points(points)
    n = len(pts) if n is None else n
    dist = pairwise_distances(pts)
    vals = np.asarray(kernel(dist), dtype=float)
    diag = float(np.asarray(kernel(np.zeros(1)))[0])
    if not np.all(np.isfinite(vals)) or not np.isfinite(diag):
        bad = int(np.nonzero(~np.isfinite(vals))[0][0]) if vals.size else 0
        i, j = _condensed_pair(bad, len(pts))
        raise FloatingPointError(f"non-finite kernel value for locations ({i}, {j})")
    G = squareform(vals, checks=False)
    np.fill_diagonal(G, diag)
    return GramSystem(G, n * mu, kernel_id)


def _condensed_pair(idx, n):
    for i in range(n):
        row = n - 1 - i
        if idx < row:
            return i, i + 1 + idx
        idx -= row
    return n - 1, n - 1


class ChannelFactorization:
    """Cholesky factor of ``G + n mu I`` shared by all channels of one weight."""

    def __init__(self, system: GramSystem, weight_value=None):
        self.system = system
        self.weight_value = weight_value
        self.reuse_count = 0
        self.jitter = 0.0
        M = system.regularized()
        try:
            self.factor = linalg.cho_factor(M, lower=True, check_finite=False)
        except linalg.LinAlgError:
            self.jitter = 1e-12 * np.trace(M) / len(M)
            logger.warning("Cholesky failed (weight %s); retrying with jitter %.3g",
                           weight_value, self.jitter)
            try:
                self.factor = linalg.cho_factor(M + self.jitter * np.eye(len(M)),
                                                lower=True, check_finite=False)
            except linalg.LinAlgError:
                raise FactorizationError(
                    "matrix G + n mu I is not positive definite even after jitter",
                    diagnostics=_conditioning(M)) from None

    def solve(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        self.reuse_count += 1 if z.ndim == 1 else z.shape[1]
        return linalg.cho_solve(self.factor, z, check_finite=False)

    def residual(self) -> float:
        """``max|M - L L^T| / max|M|``."""
        M = self.system.regularized()
        L = np.tril(self.factor[0])
        return float(np.abs(M - L @ L.T).max() / np.abs(M).max())


def _conditioning(M):
    eig = np.linalg.eigvalsh(M)
    return {"min_eigenvalue": float(eig[0]), "max_eigenvalue": float(eig[-1]),
            "condition": float(abs(eig[-1] / eig[0])) if eig[0] != 0 else np.inf}


def solve_channel(system, z) -> np.ndarray:
    """Coefficients ``c`` with ``(G + n mu I) c = z``."""
    fact = system if isinstance(system, (ChannelFactorization, CpdFactorization)) \
        else ChannelFactorization(system)
    return fact.solve(z)


@dataclass
class ChannelSolution:
    """Per-channel representer coefficients and the solve bookkeeping."""

    coefficients: np.ndarray          # (N, n)
    polynomial: np.ndarray            # (N, p), empty for positive definite channels
    factorization_count: int
    solve_count: int
    factorizations: dict


def group_channels(weights) -> dict:
    """Map each distinct weight to the channel indices carrying it (O(N))."""
    groups = {}
    for k, w in enumerate(np.asarray(weights, dtype=float)):
        groups.setdefault(float(w), []).append(k)
    return groups


def solve_all_channels(points, observations, weights, mu: float, kernel_for_weight,
                       cpd_order=None, cpd_scale: float = 1.0) -> ChannelSolution:
    """Solve every channel, factorizing once per distinct weight.

    Parameters
    ----------
    points : (n, d) array
    observations : (n, N) array
        ``observations[i, k]`` is the noisy coefficient of channel ``k`` at
        location ``i``.
    weights : (N,) array
    mu : float
        Ridge parameter of the Gram system, which is ``G + n mu I``.
    kernel_for_weight : callable
        Returns the radial kernel for a positive weight.
    cpd_order : int, optional
        Polynomial order ``s`` used for channels whose kernel is conditionally
        positive definite (weight 0). Such channels use the polyharmonic
        kernel scaled by ``1 / cpd_scale``.
    """
    pts = as_points(points)
    F = np.asarray(observations, dtype=float)
    n, N = F.shape
    if len(weights) != N:
        raise ValueError(f"{len(weights)} weights for {N} channels")
    if len(pts) != n:
        raise ValueError("one observation row per location is required")
    coef = np.zeros((N, n))
    poly = None
    factorizations = {}
    solves = 0
    for w, channels in group_channels(weights).items():
        if w == 0.0:
            if cpd_order is None:
                raise ValueError("zero weights need cpd_order for the polyharmonic path")
            fact = CpdFactorization(pts, cpd_order, mu, a=cpd_scale)
        else:
            system = assemble_gram(kernel_for_weight(w), pts, mu, kernel_id=w)
            try:
                fact = ChannelFactorization(system, weight_value=w)
            except FactorizationError as exc:
                exc.channel = channels[0]
                raise
        factorizations[w] = fact
        sol = fact.solve(F[:, channels])
        if isinstance(fact, CpdFactorization):
            c, beta = sol
            if poly is None:
                poly = np.zeros((N, beta.shape[0]))
            poly[channels] = beta.T
        else:
            c = sol
        coef[channels] = c.T
        solves += len(channels)
    if poly is None:
        poly = np.zeros((N, 0))
    return ChannelSolution(coef, poly, len(factorizations), solves, factorizations)


# -- conditionally positive definite path ------------------------------------

def monomial_exponents(degree: int, dim: int) -> list:
    """Multi-indices of total degree ``<= degree``, graded, constant first."""
    out = []
    for total in range(degree + 1):
        for combo in itertools.product(range(total + 1), repeat=dim):
            if sum(combo) == total:
                out.append(combo)
    return sorted(out, key=lambda e: (sum(e), tuple(-v for v in e)))


def polynomial_matrix(points, degree: int) -> np.ndarray:
    pts = as_points(points)
    exps = monomial_exponents(degree, pts.shape[1])
    return np.stack([np.prod(pts ** np.asarray(e), axis=1) for e in exps], axis=1)


class CpdFactorization:
    """LU factorization of the saddle system ``[[G + n mu I, P], [P^T, 0]]``."""

    weight_value = 0.0

    def __init__(self, points, s: int, mu: float, a: float = 1.0):
        pts = as_points(points)
        n, d = pts.shape
        self.s, self.d, self.a = s, d, a
        self.kernel = cpd_kernel(s, d, a)
        self.P = polynomial_matrix(pts, s - 1)
        p = self.P.shape[1]
        if n < p or np.linalg.matrix_rank(self.P) < p:
            raise FactorizationError("locations not unisolvent")
        self.system = assemble_gram(self.kernel, pts, mu, kernel_id=("cpd", s, d, a))
        M = np.zeros((n + p, n + p))
        M[:n, :n] = self.system.regularized()
        M[:n, n:] = self.P
        M[n:, :n] = self.P.T
        self.matrix = M
        self.lu = linalg.lu_factor(M, check_finite=False)
        self.n, self.p = n, p
        self.reuse_count = 0

    def solve(self, z):
        z = np.asarray(z, dtype=float)
        self.reuse_count += 1 if z.ndim == 1 else z.shape[1]
        rhs = np.concatenate([z, np.zeros((self.p,) + z.shape[1:])], axis=0)
        sol = linalg.lu_solve(self.lu, rhs, check_finite=False)
        return sol[:self.n], sol[self.n:]


def cpd_solve(points, z, s: int, d: int = None, mu: float = 0.0, a: float = 1.0):
    """Polyharmonic smoothing with polynomial augmentation of degree ``s - 1``.

    Returns ``(c, beta)`` solving ``[[G + n mu I, P], [P^T, 0]] [c; beta] = [z; 0]``.
    """
    pts = as_points(points)
    if d is not None and pts.shape[1] != d:
        raise ValueError("point dimension does not match d")
    return CpdFactorization(pts, s, mu, a).solve(z)
