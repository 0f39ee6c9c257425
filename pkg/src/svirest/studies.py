"""Convergence and discretization studies with log-log slope fits."""
from __future__ import annotations

import hashlib
import io
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import __version__
from .basis import BasisSpec, analyze_batch
from .estimator import (IrcEstimator, RegularizationFloorWarning, MU_FLOOR,
                        regularization_schedule, select_mu)
from .geometry import BoxDomain, generate_locations
from .synthdata import GaussianPhantom, PrescribedSmoothnessPhantom

CSV_COLUMNS = ("n", "N", "mu", "alpha", "error_mean", "error_std", "seed")
CSV_VERSION = 1


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return asdict(self)


def fit_loglog_slope(x, y, level=0.95) -> SlopeFit:
    """Least-squares slope of ``log y`` against ``log x``.

    The interval is the t-based normal-theory interval; it is NaN when only
    two points are given.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need matching 1D x and y with at least two points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive x and y")
    lx, ly = np.log(x), np.log(y)
    res = stats.linregress(lx, ly)
    dof = len(x) - 2
    if dof > 0:
        half = stats.t.ppf(0.5 + level / 2, dof) * res.stderr
    else:
        half = np.nan
    return SlopeFit(float(res.slope), float(res.intercept),
                    float(res.slope - half), float(res.slope + half))


@dataclass
class StudyConfig:
    """Settings shared by the convergence and discretization studies.

    ``phantom`` is ``{"kind": "prescribed", "r": .., "seed": ..}`` or
    ``{"kind": "gaussian", "variant": .., "x_half_width": ..}``. ``mu_policy``
    is ``{"kind": "schedule", "C": ..}``, ``{"kind": "fixed", "value": ..}``
    or ``{"kind": "cross-validate", "candidates": [..], "folds": ..}``.
    """

    phantom: dict = field(default_factory=lambda: {"kind": "prescribed", "r": 1.0, "seed": 0})
    basis: dict = field(default_factory=lambda: {"kind": "haar", "signal_length": 64})
    n_grid: list = field(default_factory=lambda: [32, 64, 128, 256, 512])
    N: int = 64
    N_grid: list = field(default_factory=lambda: [2, 4, 8, 16, 32, 64])
    sigma: float = 0.1
    alpha: float = 0.0
    s: float = 1
    r: float = 1.0
    mu_policy: dict = field(default_factory=lambda: {"kind": "schedule", "C": 0.1})
    trials: int = 10
    seed: int = 0
    scheme: str = "jittered-grid"
    eval_points: int = 1024
    dense_points: int = 256
    out: str = None

    def __post_init__(self):
        for name in ("n_grid", "N_grid"):
            g = list(getattr(self, name))
            if any(b <= a for a, b in zip(g, g[1:])):
                raise ValueError(f"{name} must be strictly increasing")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.mu_policy.get("kind") not in ("schedule", "fixed", "cross-validate"):
            raise ValueError("mu_policy kind must be schedule, fixed or cross-validate")

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = cls.__dataclass_fields__
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown study config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def basis_spec(self) -> BasisSpec:
        b = dict(self.basis)
        return BasisSpec(b["kind"], int(b["signal_length"]), b.get("levels"), int(b.get("dim", 1)))


@dataclass(frozen=True)
class StudyRow:
    n: int
    N: int
    mu: float
    alpha: float
    error_mean: float
    error_std: float
    seed: int


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list
    fit: SlopeFit
    abscissa: str = "n"

    def to_csv(self) -> str:
        header = {"format": "svirest-study", "version": CSV_VERSION,
                  "artifact_version": __version__, "config_hash": self.config.digest(),
                  "abscissa": self.abscissa, "slope": self.fit.to_dict()}
        buf = io.StringIO()
        buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for row in self.rows:
            buf.write(",".join(_fmt(getattr(row, c)) for c in CSV_COLUMNS) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def make_phantom(config: StudyConfig, basis: BasisSpec):
    p = dict(config.phantom)
    kind = p.pop("kind", "prescribed")
    if kind == "prescribed":
        return PrescribedSmoothnessPhantom(p.get("r", config.r), config.s, p.get("seed", 0), basis)
    if kind == "gaussian":
        L = basis.signal_length
        half = p.get("x_half_width", 10.0)
        h = 2 * half / (L - 1)
        x = -half + h * np.arange(L)
        return GaussianPhantom(p.get("variant", "experiment"), (x,) * basis.dim)
    raise ValueError(f"unknown phantom kind {kind!r}")


def phantom_coefficients(phantom, y, basis: BasisSpec) -> np.ndarray:
    if isinstance(phantom, PrescribedSmoothnessPhantom):
        return phantom.coefficients(y)
    return analyze_batch(phantom.psfs(y), basis)


def _x_cell(phantom) -> float:
    return float(np.prod([a[1] - a[0] for a in phantom.x_axes]))


def _eval_grid(m, d):
    c = (np.arange(m) + 0.5) / m
    mesh = np.meshgrid(*([c] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def squared_hs_error(est: IrcEstimator, truth: np.ndarray, points, x_cell) -> float:
    """``||S - S_hat||^2`` by the midpoint rule on the unit box.

    By orthonormality of the basis the ``x`` integral equals the sum of
    squared coefficient differences times the ``x`` cell.
    """
    pred = est.predict(points)
    N = pred.shape[1]
    diff = truth.copy()
    diff[:, :N] -= pred
    return float(x_cell * np.mean(np.sum(diff * diff, axis=1)))


def _choose_mu(config, n, N, d, X=None, obs=None, seed=0):
    pol = config.mu_policy
    if pol["kind"] == "fixed":
        return float(pol["value"])
    if pol["kind"] == "schedule":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RegularizationFloorWarning)
            return regularization_schedule(n, N, config.sigma ** 2, config.alpha,
                                           config.s, d, pol.get("C", 1.0))
    return select_mu(X, obs, pol["candidates"], pol.get("folds", 5), seed,
                     basis=config.basis_spec(), r=config.r, s=config.s, alpha=config.alpha)


def run_convergence_study(config: StudyConfig) -> StudyResult:
    """Mean squared HS error against the number of sampled PSFs.

    Trial ``t`` uses seed ``config.seed + t`` for both locations and noise.
    """
    basis = config.basis_spec()
    d = basis.dim
    N = config.N
    if N > basis.size:
        raise ValueError(f"N={N} exceeds basis size {basis.size}")
    phantom = make_phantom(config, basis)
    domain = BoxDomain.unit(d)
    side = max(2, int(round(config.eval_points ** (1 / d))))
    ev = _eval_grid(side, d)
    truth = phantom_coefficients(phantom, ev, basis)
    xc = _x_cell(phantom)
    rows = []
    for n in config.n_grid:
        errors, mus = [], []
        for t in range(config.trials):
            seed = config.seed + t
            Y = generate_locations(n, domain, config.scheme, seed)
            clean = phantom_coefficients(phantom, Y.points, basis)[:, :N]
            rng = np.random.default_rng(seed)
            obs = clean + config.sigma * rng.standard_normal(clean.shape)
            mu = _choose_mu(config, n, N, d, Y.points, obs, seed)
            est = IrcEstimator(basis=basis, r=config.r, s=config.s,
                               alpha=config.alpha, mu=mu).fit(Y.points, obs)
            errors.append(squared_hs_error(est, truth, ev, xc))
            mus.append(mu)
        rows.append(StudyRow(int(n), int(N), float(np.mean(mus)), float(config.alpha),
                             float(np.mean(errors)), float(np.std(errors)), int(config.seed)))
    fit = fit_loglog_slope([r.n for r in rows], [r.error_mean for r in rows])
    return StudyResult(config, rows, fit, "n")


def run_discretization_study(config: StudyConfig) -> StudyResult:
    """Noise-free truncation error against the channel count.

    Locations are the midpoint nodes of a dense grid and the error is measured
    on the same nodes, so with ``mu`` at the floor the estimate reproduces
    the sampled coefficients and the error is the discarded tail.
    """
    basis = config.basis_spec()
    d = basis.dim
    phantom = make_phantom(config, basis)
    domain = BoxDomain.unit(d)
    side = max(2, int(round(config.dense_points ** (1 / d))))
    Y = generate_locations(side ** d, domain, "midpoint-grid", config.seed)
    truth = phantom_coefficients(phantom, Y.points, basis)
    xc = _x_cell(phantom)
    rows = []
    for N in config.N_grid:
        if N > basis.size:
            raise ValueError(f"N={N} exceeds basis size {basis.size}")
        est = IrcEstimator(basis=basis, r=config.r, s=config.s, alpha=config.alpha,
                           mu=MU_FLOOR).fit(Y.points, truth[:, :N])
        err = squared_hs_error(est, truth, Y.points, xc)
        rows.append(StudyRow(int(len(Y)), int(N), MU_FLOOR, float(config.alpha),
                             err, 0.0, int(config.seed)))
    usable = [(r.N, r.error_mean) for r in rows if r.error_mean > 0 and r.N < basis.size]
    fit = fit_loglog_slope(*zip(*usable)) if len(usable) >= 2 else SlopeFit(*(4 * [np.nan]))
    return StudyResult(config, rows, fit, "N")
