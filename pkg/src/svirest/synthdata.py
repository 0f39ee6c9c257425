"""Ground-truth SVIR phantoms and noisy PSF datasets.

PSFs are centered at ``x = 0`` in SVIR coordinates, so the x grid is
symmetric about the origin. Phantoms are defined as functions of the
location normalized to the unit box, ``t = (y - lower) / (upper - lower)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import __version__
from .basis import BasisSpec, analyze_batch, synthesize_batch
from .estimator import SvirGrid, grid_nodes
from .geometry import BoxDomain, LocationSet

DATASET_FORMAT = "svirest-dataset"
DATASET_VERSION = 1


@dataclass(frozen=True)
class SmoothnessBall:
    r: float
    s: float
    A1: float = 1.0
    A2: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.r <= self.dim / 2 or self.s <= self.dim / 2:
            raise ValueError("both r and s must exceed d/2")


def _normalized(domain: BoxDomain, y):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return (y - np.asarray(domain.lower)) / domain.sides


class GaussianPhantom:
    """Isotropic Gaussian PSFs whose width varies along the first coordinate.

    ``variant="fig1"``: ``sigma(t) = 0.05 (1 + 2 min(t, 1 - t))``;
    ``variant="experiment"``: ``sigma(t) = 1 + 2 max(1 - t, t)``.
    """

    def __init__(self, variant="experiment", x_axes=None, domain: BoxDomain = None):
        if variant not in ("fig1", "experiment"):
            raise ValueError("variant must be 'fig1' or 'experiment'")
        self.variant = variant
        self.x_axes = tuple(np.asarray(a, dtype=float) for a in x_axes)
        self.dim = len(self.x_axes)
        self.domain = domain or BoxDomain.unit(self.dim)
        if self.domain.dim != self.dim:
            raise ValueError("x and y dimensions must agree")

    def width(self, y) -> np.ndarray:
        t = _normalized(self.domain, y)[:, 0]
        if self.variant == "fig1":
            return 0.05 * (1 + 2 * np.minimum(t, 1 - t))
        return 1 + 2 * np.maximum(1 - t, t)

    def psfs(self, y) -> np.ndarray:
        """PSFs at each location, shape ``(n, *x_shape)``."""
        sig = self.width(y)
        mesh = np.meshgrid(*self.x_axes, indexing="ij")
        r2 = sum(m ** 2 for m in mesh)
        sig = sig.reshape((-1,) + (1,) * self.dim)
        norm = (2 * np.pi * sig ** 2) ** (-self.dim / 2)
        return norm * np.exp(-r2[None] / (2 * sig ** 2))

    def svir(self, y_axes) -> SvirGrid:
        return _grid_from_psfs(self, self.x_axes, y_axes)


def _grid_from_psfs(phantom, x_axes, y_axes) -> SvirGrid:
    y_axes = tuple(np.asarray(a, dtype=float) for a in y_axes)
    cols = phantom.psfs(grid_nodes(y_axes))
    x_shape = tuple(len(a) for a in x_axes)
    values = np.moveaxis(cols, 0, -1).reshape(x_shape + tuple(len(a) for a in y_axes))
    return SvirGrid(x_axes, y_axes, values)


def gaussian_svir_1d(variant, x_grid, y_grid, domain: BoxDomain = None) -> SvirGrid:
    return GaussianPhantom(variant, (x_grid,), domain).svir((y_grid,))


def gaussian_svir_2d(x_grid, y_grid, domain: BoxDomain = None) -> SvirGrid:
    """``x_grid`` and ``y_grid`` are pairs of axes."""
    return GaussianPhantom("experiment", tuple(x_grid), domain).svir(tuple(y_grid))


class PrescribedSmoothnessPhantom:
    """SVIR with closed-form coefficients of known decay.

    ``F(y)[k] = (k + 1) ** (-(2r + d) / (2d)) * g_k(y)`` with
    ``g_k(y) = 1 + 0.5 cos(2 pi <m_k, t> + theta_k)``, integer frequencies
    ``m_k`` in ``{1, 2}^d`` and random phases. On the unit box every ``g_k``
    has squared ``L2`` norm ``9 / 8``, so the tail energy of the channels
    ``k >= N`` is ``9/8 * sum_{k >= N} (k + 1) ** (-(2r + d) / d)``.
    """

    G_ENERGY = 1.125

    def __init__(self, r, s, seed, basis: BasisSpec, x_axes=None, domain: BoxDomain = None):
        self.ball = SmoothnessBall(r, s, dim=basis.dim)
        self.r, self.s, self.seed = float(r), float(s), seed
        self.basis = basis
        self.dim = basis.dim
        if x_axes is None:
            x_axes = (np.arange(basis.signal_length) - (basis.signal_length - 1) / 2,) * basis.dim
        self.x_axes = tuple(np.asarray(a, dtype=float) for a in x_axes)
        self.domain = domain or BoxDomain.unit(self.dim)
        rng = np.random.default_rng(seed)
        K = basis.size
        self.freqs = rng.integers(1, 3, size=(K, self.dim))
        self.phases = rng.uniform(0, 2 * np.pi, size=K)
        k = np.arange(1, K + 1, dtype=float)
        self.amplitudes = k ** (-(2 * self.r + self.dim) / (2 * self.dim))

    def coefficients(self, y) -> np.ndarray:
        """Exact coefficient vectors, shape ``(n, basis.size)``."""
        t = _normalized(self.domain, y)
        g = 1 + 0.5 * np.cos(2 * np.pi * t @ self.freqs.T + self.phases)
        return g * self.amplitudes

    def psfs(self, y) -> np.ndarray:
        return synthesize_batch(self.coefficients(y), self.basis)

    def svir(self, y_axes) -> SvirGrid:
        return _grid_from_psfs(self, self.x_axes, y_axes)

    def truncation_error_sq(self, N: int, x_cell: float = 1.0) -> float:
        """``||S - S_N||^2`` over ``R^d x unit box`` from the coefficient tail."""
        tail = self.amplitudes[N:] ** 2
        return float(x_cell * self.G_ENERGY * tail.sum() * np.prod(self.domain.sides))


def prescribed_smoothness_svir(r, s, seed, x_grid, y_grid, basis: BasisSpec = None) -> SvirGrid:
    x_axes = tuple(x_grid) if isinstance(x_grid, (tuple, list)) else (x_grid,)
    y_axes = tuple(y_grid) if isinstance(y_grid, (tuple, list)) else (y_grid,)
    if basis is None:
        basis = BasisSpec("haar", len(x_axes[0]), None, len(x_axes))
    return PrescribedSmoothnessPhantom(r, s, seed, basis, x_axes).svir(y_axes)


@dataclass
class PsfDataset:
    locations: LocationSet
    observations: np.ndarray      # (n, N)
    basis: BasisSpec
    noise_sigma: float
    seed: int
    truth: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=float)
        if self.observations.ndim != 2 or len(self.observations) != len(self.locations):
            raise ValueError("need one observation vector per location")

    @property
    def n_channels(self) -> int:
        return self.observations.shape[1]

    def save(self, stem) -> tuple:
        stem = Path(stem)
        manifest = {
            "format": DATASET_FORMAT, "version": DATASET_VERSION,
            "artifact_version": __version__,
            "basis": self.basis.to_dict(), "N": self.n_channels,
            "sigma": self.noise_sigma, "seed": self.seed,
            "locations": json.loads(self.locations.to_json()),
        }
        json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
        json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
        bin_path.write_bytes(self.observations.astype("<f8").tobytes())
        return json_path, bin_path

    @classmethod
    def load(cls, stem) -> "PsfDataset":
        stem = Path(stem)
        manifest = json.loads(stem.with_suffix(".json").read_text())
        if manifest.get("format") != DATASET_FORMAT:
            raise ValueError("not a dataset manifest")
        if manifest.get("version") != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {manifest.get('version')}")
        locations = LocationSet.from_json(json.dumps(manifest["locations"]))
        obs = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
        obs = obs.reshape(len(locations), int(manifest["N"])).astype(float)
        return cls(locations, obs, BasisSpec.from_dict(manifest["basis"]),
                   float(manifest["sigma"]), manifest["seed"])


def _interpolate_columns(grid: SvirGrid, points):
    """Linear interpolation of PSF columns along ``y``."""
    lo = [a[0] - 0.5 * (a[1] - a[0]) for a in grid.y_axes]
    hi = [a[-1] + 0.5 * (a[1] - a[0]) for a in grid.y_axes]
    if np.any(points < np.asarray(lo)) or np.any(points > np.asarray(hi)):
        raise ValueError("locations outside the phantom's y domain")
    nx = len(grid.x_shape)
    vals = np.moveaxis(grid.values.reshape((-1,) + grid.y_shape), 0, -1)
    interp = RegularGridInterpolator(grid.y_axes, vals, bounds_error=False, fill_value=None)
    cols = interp(points)
    return cols.reshape((len(points),) + grid.x_shape) if nx else cols


def sample_psfs(phantom, Y: LocationSet, basis: BasisSpec, N: int = None,
                sigma: float = 0.0, seed: int = 0) -> PsfDataset:
    """Noisy truncated coefficients ``analyze(S(., y_i))[:N] + eps_i``.

    ``phantom`` is either an ``SvirGrid`` (interpolated linearly along
    ``y``) or an analytic phantom exposing ``psfs(points)``.
    """
    N = basis.size if N is None else N
    if N > basis.size:
        raise ValueError(f"N={N} exceeds basis size {basis.size}")
    pts = Y.points
    if isinstance(phantom, SvirGrid):
        cols = _interpolate_columns(phantom, pts)
    else:
        if not np.all(phantom.domain.contains(pts, atol=1e-12)):
            raise ValueError("locations outside the phantom's y domain")
        cols = phantom.psfs(pts)
    truth = analyze_batch(cols, basis)[:, :N]
    rng = np.random.default_rng(seed)
    noise = sigma * rng.standard_normal(truth.shape)
    return PsfDataset(Y, truth + noise, basis, float(sigma), seed, truth)
