"""Radial reproducing kernels defined by their Fourier transform.

The kernel of channel ``k`` has spectral profile

    ((1 - alpha) * |xi| ** (2 s) + alpha * w[k]) ** -1

under the symmetric Fourier convention with ``(2 pi) ** (-d / 2)`` factors.
Its spatial form is obtained by radial Fourier inversion

    rho(r) = r ** (1 - d/2) * int_0^inf profile(t) t ** (d/2) J_{d/2-1}(r t) dt

evaluated between consecutive Bessel zeros with Wynn-epsilon acceleration,
tabulated on a log-spaced grid and interpolated with a cubic spline in
``log r``. When ``alpha * w == 0`` the profile is singular at the origin and
the kernel is the conditionally positive definite polyharmonic spline.
"""
from __future__ import annotations

import functools
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

TAIL_RATIO = 1e-10
R_MIN_RATIO = 1e-6
DECAY_LENGTHS = 30.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


class KernelQuadratureError(RuntimeError):
    """Radial inversion did not reach the requested tolerance."""

    def __init__(self, message, radius, error):
        super().__init__(message)
        self.radius = radius
        self.error = error


@dataclass(frozen=True)
class RadialKernelSpec:
    dim: int
    order: int
    alpha: float
    weight: float = 1.0

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError("kernel order s must be a positive integer")
        if 2 * self.order <= self.dim:
            raise ValueError(f"need 2s > d, got s={self.order}, d={self.dim}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def a(self) -> float:
        return 1.0 - self.alpha

    @property
    def b(self) -> float:
        return self.alpha * self.weight

    @property
    def is_positive_definite(self) -> bool:
        return self.b > 0

    @property
    def knee(self) -> float:
        """Frequency where both terms of the profile are equal."""
        return (self.b / self.a) ** (1.0 / (2 * self.order))

    @property
    def decay_rate(self) -> float:
        """Exponential decay rate of rho, from the closest complex pole."""
        return self.knee * math.sin(math.pi / (2 * self.order))


def spectral_profile(spec: RadialKernelSpec, xi_norm):
    xi = np.asarray(xi_norm, dtype=float)
    if np.any(xi < 0):
        raise ValueError("frequency magnitude must be nonnegative")
    if spec.b == 0 and np.any(xi == 0):
        raise ValueError("spectral profile singular at origin (CPD kernel)")
    out = 1.0 / (spec.a * xi ** (2 * spec.order) + spec.b)
    return float(out) if out.ndim == 0 else out


def _rho_zero(spec, tol):
    d = spec.dim
    val, err = integrate.quad(lambda t: spectral_profile(spec, t) * t ** (d - 1),
                              0, np.inf, epsabs=0, epsrel=max(tol, 1e-13), limit=400)
    return 2 ** (1 - d / 2) / math.gamma(d / 2) * val


def _bessel_zeros(nu, count):
    """Positive zeros of J_nu; McMahon's formula is exact for |nu| = 1/2."""
    if float(nu).is_integer():
        return special.jn_zeros(int(nu), count)
    m = np.arange(1, count + 1)
    return (m + nu / 2 - 0.25) * np.pi


def _bessel_j(nu):
    """Fast J_nu for the orders that occur in low dimensions."""
    if nu == -0.5:
        return lambda x: np.sqrt(2 / (np.pi * x)) * np.cos(x)
    if nu == 0.5:
        return lambda x: np.sqrt(2 / (np.pi * x)) * np.sin(x)
    if nu == 0:
        return special.j0
    if nu == 1:
        return special.j1
    return lambda x: special.jv(nu, x)


def _wynn_epsilon(partial_sums):
    """Last even-column entry of Wynn's epsilon table."""
    prev = np.zeros(len(partial_sums) + 1)
    cur = np.asarray(partial_sums, dtype=float)
    best = cur[-1]
    k = 0
    while len(cur) > 1:
        diff = np.diff(cur)
        if np.any(diff == 0):
            break
        new = prev[1:len(cur)] + 1.0 / diff
        prev, cur = cur, new
        k += 1
        if k % 2 == 0 and np.isfinite(cur[-1]):
            best = cur[-1]
    return best


def _gauss_panels(f, edges, nodes, weights):
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    t = mid[:, None] + half[:, None] * nodes[None, :]
    return (f(t) * weights).sum(axis=1) * half


def _graded_edges(stop, width, max_step):
    """Panel edges on ``[0, stop]``: step ``width`` near the origin, growing
    with ``t`` (poles recede) but never wider than ``max_step``."""
    edges = [0.0]
    t = 0.0
    while t < stop:
        t = min(t + min(max(width, 0.5 * t), max_step), stop)
        edges.append(t)
    return np.asarray(edges)


def _invert(spec, radii, panels=48):
    """Radial inversion at each radius; returns values and error estimates.

    The integrand is analytic on the real axis with poles a distance
    ``decay_rate`` away, so composite Gauss-Legendre panels no wider than
    that distance (or half an oscillation) converge geometrically.
    """
    d = spec.dim
    nu = d / 2 - 1
    zeros = _bessel_zeros(nu, 4096)
    knee = spec.knee
    width = spec.decay_rate
    coarse_nodes, coarse_weights = np.polynomial.legendre.leggauss(20)
    bessel = _bessel_j(nu)

    values = np.empty(len(radii))
    errors = np.empty(len(radii))
    for n, r in enumerate(radii):

        def integrand(t):
            return spectral_profile(spec, t) * t ** (d / 2) * bessel(r * t)

        i0 = int(np.searchsorted(zeros / r, 4 * knee))
        if i0 + panels + 2 >= len(zeros):
            raise KernelQuadratureError(f"radius {r:g} needs more Bessel zeros", r, np.inf)
        t_head = zeros[i0] / r
        head_edges = _graded_edges(t_head, width, np.pi / r)
        head = _gauss_panels(integrand, head_edges, _GL_NODES, _GL_WEIGHTS).sum()
        head_coarse = _gauss_panels(integrand, head_edges, coarse_nodes, coarse_weights).sum()
        pieces = _gauss_panels(integrand, zeros[i0:i0 + panels + 1] / r, _GL_NODES, _GL_WEIGHTS)
        sums = head + np.cumsum(pieces)
        est = _wynn_epsilon(sums[-24:])
        est_short = _wynn_epsilon(sums[-26:-2])
        scale = r ** (1 - d / 2)
        values[n] = scale * est
        errors[n] = scale * (abs(est - est_short) + abs(head - head_coarse))
    return values, errors


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Tabulated spatial kernel ``rho(r)`` of a positive definite spec."""

    spec: RadialKernelSpec
    radii: np.ndarray
    values: np.ndarray
    rho_zero: float
    tail_cutoff: float
    _spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=float)
        values = np.asarray(self.values, dtype=float)
        radii.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_spline", CubicSpline(np.log(radii), values))

    @property
    def r_min(self) -> float:
        return float(self.radii[0])

    @property
    def r_max(self) -> float:
        return float(self.radii[-1])

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape)
        inner = r < self.r_min
        if np.any(inner):
            frac = r[inner] / self.r_min
            out[inner] = (1 - frac) * self.rho_zero + frac * self.values[0]
        mid = (r >= self.r_min) & (r <= self.tail_cutoff)
        if np.any(mid):
            out[mid] = self._spline(np.log(r[mid]))
        return out

    def to_bytes(self) -> bytes:
        """Little-endian float64 blob: header, radii, values."""
        s = self.spec
        header = np.array([s.dim, s.order, s.alpha, s.weight, len(self.radii),
                           self.r_max, self.rho_zero, self.tail_cutoff], dtype="<f8")
        return (header.tobytes() + self.radii.astype("<f8").tobytes()
                + self.values.astype("<f8").tobytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "KernelTable":
        header = np.frombuffer(blob[:64], dtype="<f8")
        d, s, alpha, w, M = header[:5]
        M = int(M)
        body = np.frombuffer(blob[64:64 + 16 * M], dtype="<f8")
        spec = RadialKernelSpec(int(d), int(s), float(alpha), float(w))
        return cls(spec, body[:M].copy(), body[M:].copy(), float(header[6]), float(header[7]))

    @property
    def nbytes(self) -> int:
        return 64 + 16 * len(self.radii)


def default_r_max(spec: RadialKernelSpec) -> float:
    return DECAY_LENGTHS / spec.decay_rate


@functools.lru_cache(maxsize=256)
def build_table(spec: RadialKernelSpec, r_max: float = None, nodes: int = 2048,
                quad_tolerance: float = 1e-10) -> KernelTable:
    """Tabulate ``rho`` on ``nodes`` log-spaced radii in ``[1e-6 r_max, r_max]``.

    Results are cached per argument tuple; tables are immutable.
    """
    if not spec.is_positive_definite:
        raise ValueError("CPD spec (alpha * w == 0): use polyharmonic instead")
    if nodes < 64:
        raise ValueError("need at least 64 table nodes")
    if quad_tolerance > 1e-6:
        raise ValueError("quad_tolerance must be at most 1e-6")
    r_max = default_r_max(spec) if r_max is None else float(r_max)
    rho0 = _rho_zero(spec, min(quad_tolerance, 1e-12))
    radii = np.geomspace(R_MIN_RATIO * r_max, r_max, nodes)
    values, errors = _invert(spec, radii)
    worst = int(np.argmax(errors))
    if errors[worst] > quad_tolerance * abs(rho0):
        raise KernelQuadratureError(
            f"radial inversion missed tolerance {quad_tolerance:g} at r={radii[worst]:g} "
            f"(error estimate {errors[worst]:.3g})", radii[worst], errors[worst])
    big = np.nonzero(np.abs(values) > TAIL_RATIO * abs(rho0))[0]
    last = int(big[-1]) if big.size else 0
    cutoff = radii[min(last + 1, nodes - 1)]
    values = np.where(radii > cutoff, 0.0, values)
    return KernelTable(spec, radii, values, rho0, float(cutoff))


def evaluate(spec: RadialKernelSpec, table: KernelTable, r):
    """``rho(r)`` for a positive definite spec, read from its table."""
    if not spec.is_positive_definite:
        raise ValueError("CPD spec: evaluate with polyharmonic/cpd_kernel")
    if table.spec != spec:
        raise ValueError("table was built for a different spec")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    out = table(r)
    return float(out) if out.ndim == 0 else out


def polyharmonic(s: int, d: int, r):
    """Raw polyharmonic spline ``r**(2s-d)``, times ``log r`` for even ``d``."""
    if 2 * s <= d:
        raise ValueError(f"need 2s > d, got s={s}, d={d}")
    r = np.asarray(r, dtype=float)
    beta = 2 * s - d
    if d % 2:
        out = r ** beta
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0, r ** beta * np.log(np.where(r > 0, r, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def polyharmonic_constant(s: int, d: int) -> float:
    """Factor making ``c * polyharmonic(s, d, .)`` have generalized Fourier
    transform ``|xi| ** (-2 s)`` (symmetric convention).

    This also fixes the sign so the kernel is conditionally positive definite
    of order ``s``.
    """
    beta = 2 * s - d
    if d % 2:
        return math.gamma(-beta / 2) / (2 ** (beta + d / 2) * math.gamma(s))
    k = beta // 2
    return (-1) ** (k + 1) / (2 ** (2 * k - 1 + d / 2) * math.gamma(s) * math.factorial(k))


def cpd_kernel(s: int, d: int, a: float = 1.0):
    """Kernel with generalized Fourier transform ``(a |xi|**(2s)) ** -1``."""
    c = polyharmonic_constant(s, d) / a

    def kernel(r):
        return c * polyharmonic(s, d, r)

    return kernel
