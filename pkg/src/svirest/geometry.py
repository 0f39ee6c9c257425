"""Sampling-set geometry: fill distance, separation distance, quasi-uniformity.

Locations live in an axis-aligned box. In one dimension the fill distance is
computed exactly from the sorted gaps; in higher dimensions it is estimated
on a regular probe grid that includes the box corners.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

SCHEMES = ("midpoint-grid", "jittered-grid", "uniform-random", "halton")


@dataclass(frozen=True)
class BoxDomain:
    """Open box ``prod(lower[j], upper[j])``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lower) != len(upper) or len(lower) < 1:
            raise ValueError("lower and upper must be non-empty and of equal length")
        if any(u <= l for l, u in zip(lower, upper)):
            raise ValueError("upper bound must exceed lower bound on every axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unit(cls, dim: int) -> "BoxDomain":
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def sides(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def contains(self, points, atol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(points)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return np.all((pts >= lo - atol) & (pts <= hi + atol), axis=1)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class LocationSet:
    """Scattered, pairwise distinct sample locations inside a box."""

    points: np.ndarray
    domain: BoxDomain = field(default=None)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a non-empty (n, d) array")
        domain = self.domain
        if domain is None:
            domain = BoxDomain.unit(pts.shape[1])
        if domain.dim != pts.shape[1]:
            raise ValueError("point dimension does not match the domain")
        if not np.all(domain.contains(pts)):
            raise ValueError("every location must lie in the closed domain box")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("locations must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "domain", domain)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_json(self) -> str:
        doc = {"dim": self.dim, "points": self.points.tolist(),
               "domain": self.domain.to_dict()}
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "LocationSet":
        doc = json.loads(text)
        pts = np.asarray(doc["points"], dtype=float).reshape(-1, int(doc["dim"]))
        domain = None
        if "domain" in doc:
            domain = BoxDomain(doc["domain"]["lower"], doc["domain"]["upper"])
        return cls(pts, domain)


@dataclass(frozen=True)
class GeometryReport:
    fill: float
    separation: float
    ratio: float
    probe_resolution: float

    def to_dict(self) -> dict:
        return {"fill": self.fill, "separation": self.separation,
                "ratio": self.ratio, "probe_resolution": self.probe_resolution}


def separation_distance(Y: LocationSet) -> float:
    """Half the smallest pairwise Euclidean distance (exact)."""
    pts = Y.points
    if len(pts) < 2:
        raise ValueError("separation undefined for a single point")
    dist, _ = cKDTree(pts).query(pts, k=2)
    return 0.5 * float(dist[:, 1].min())


def _fill_distance_1d(x, lower, upper) -> float:
    x = np.sort(x)
    gaps = np.diff(x)
    candidates = [x[0] - lower, upper - x[-1]]
    if gaps.size:
        candidates.append(0.5 * gaps.max())
    return float(max(candidates))


def probe_grid(domain: BoxDomain, probe_resolution: float) -> np.ndarray:
    """Regular grid with spacing at most ``probe_resolution``, corners included."""
    axes = []
    for lo, hi in zip(domain.lower, domain.upper):
        m = int(np.ceil((hi - lo) / probe_resolution)) + 1
        axes.append(np.linspace(lo, hi, max(m, 2)))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def fill_distance(Y: LocationSet, domain: BoxDomain = None,
                  probe_resolution: float = None) -> float:
    """Largest distance from a point of the box to its nearest location.

    Exact in one dimension. For ``d >= 2`` the supremum is taken over a
    probe grid, so the result is a lower bound that is accurate to within
    ``probe_resolution * sqrt(d) / 2``.
    """
    domain = Y.domain if domain is None else domain
    if domain.dim == 1:
        return _fill_distance_1d(Y.points[:, 0], domain.lower[0], domain.upper[0])
    if probe_resolution is None:
        probe_resolution = float(domain.sides.min()) / 512
    if probe_resolution <= 0:
        raise ValueError("probe_resolution must be positive")
    tree = cKDTree(Y.points)
    probes = probe_grid(domain, probe_resolution)
    best = 0.0
    for chunk in np.array_split(probes, max(1, len(probes) // 65536)):
        dist, _ = tree.query(chunk, k=1)
        best = max(best, float(dist.max()))
    return best


def quasi_uniformity_ratio(Y: LocationSet, domain: BoxDomain = None,
                           probe_resolution: float = None) -> GeometryReport:
    domain = Y.domain if domain is None else domain
    if probe_resolution is None:
        probe_resolution = float(domain.sides.min()) / 512
    q = separation_distance(Y)
    h = fill_distance(Y, domain, probe_resolution)
    return GeometryReport(fill=h, separation=q, ratio=h / q,
                          probe_resolution=float(probe_resolution))


def _grid_side(n: int, dim: int) -> int:
    side = int(round(n ** (1.0 / dim)))
    for cand in (side - 1, side, side + 1):
        if cand >= 1 and cand ** dim == n:
            return cand
    raise ValueError(f"grid schemes need a perfect {dim}-th power, got n={n}")


def generate_locations(n: int, domain: BoxDomain, scheme: str = "midpoint-grid",
                       seed: int = 0) -> LocationSet:
    """Generate ``n`` locations in ``domain``.

    ``jittered-grid`` moves each midpoint-grid node by at most a quarter cell
    per coordinate, so the separation is at least a quarter cell and the
    quasi-uniformity ratio is bounded by ``3 * sqrt(d)`` (``3`` in 1D).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    lo, sides, d = np.asarray(domain.lower), domain.sides, domain.dim
    rng = np.random.default_rng(seed)
    if scheme in ("midpoint-grid", "jittered-grid"):
        m = _grid_side(n, d)
        centers = (np.arange(m) + 0.5) / m
        mesh = np.meshgrid(*([centers] * d), indexing="ij")
        unit = np.stack([g.ravel() for g in mesh], axis=1)
        if scheme == "jittered-grid":
            unit = unit + rng.uniform(-0.25, 0.25, size=unit.shape) / m
    elif scheme == "uniform-random":
        unit = rng.uniform(0.0, 1.0, size=(n, d))
    else:
        unit = qmc.Halton(d=d, scramble=True, seed=seed).random(n)
    return LocationSet(lo + unit * sides, domain)
