"""Operator estimation from scattered impulse responses.

``IrcEstimator`` follows the scikit-learn estimator API. ``fit`` takes PSF
locations ``X`` of shape ``(n, d)`` and observed basis coefficients ``y`` of
shape ``(n, N)``; ``predict`` returns the estimated coefficient vectors at new
locations. Channel ``k`` is smoothed with the kernel whose Fourier transform
is ``((1 - alpha) |xi|^(2s) + alpha w[k]) ** -1``, which minimizes

    1/n sum_i (F_i[k] - f(y_i))^2
        + mu (alpha w[k] ||f||^2_L2 + (1 - alpha) |f|^2_BL^s).
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft
from scipy.sparse.linalg import LinearOperator
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.model_selection import GridSearchCV, KFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import __version__
from .basis import BasisSpec, atoms, subband_weights, synthesize_batch
from .kernel import KernelTable, RadialKernelSpec, build_table, cpd_kernel
from .solver import as_points, polynomial_matrix, solve_all_channels

MU_FLOOR = 1e-12
ESTIMATE_FORMAT = "svirest-estimate"
ESTIMATE_VERSION = 1


class RegularizationFloorWarning(UserWarning):
    """The schedule hit the noise-free floor value."""


@dataclass(frozen=True)
class SvirGrid:
    """Space-varying impulse response ``S(x, y)`` sampled on a tensor grid.

    ``values`` has shape ``x_shape + y_shape``; axes are uniform 1D arrays.
    """

    x_axes: tuple
    y_axes: tuple
    values: np.ndarray

    def __post_init__(self):
        xa = tuple(np.asarray(a, dtype=float) for a in self.x_axes)
        ya = tuple(np.asarray(a, dtype=float) for a in self.y_axes)
        vals = np.asarray(self.values, dtype=float)
        shape = tuple(len(a) for a in xa) + tuple(len(a) for a in ya)
        if vals.shape != shape:
            raise ValueError(f"values shape {vals.shape} does not match axes {shape}")
        for a in xa + ya:
            if len(a) > 1 and not np.all(np.diff(a) > 0):
                raise ValueError("grid axes must be strictly increasing")
        object.__setattr__(self, "x_axes", xa)
        object.__setattr__(self, "y_axes", ya)
        object.__setattr__(self, "values", vals)

    @property
    def x_shape(self):
        return tuple(len(a) for a in self.x_axes)

    @property
    def y_shape(self):
        return tuple(len(a) for a in self.y_axes)

    @property
    def x_cell(self) -> float:
        return float(np.prod([_spacing(a) for a in self.x_axes]))

    @property
    def y_cell(self) -> float:
        return float(np.prod([_spacing(a) for a in self.y_axes]))

    def y_nodes(self) -> np.ndarray:
        return grid_nodes(self.y_axes)

    def columns(self) -> np.ndarray:
        """PSFs as an array of shape ``(M_y, *x_shape)``."""
        nx = len(self.x_shape)
        flat = self.values.reshape(self.x_shape + (-1,))
        return np.moveaxis(flat, nx, 0)

    def same_grid(self, other: "SvirGrid") -> bool:
        return (self.values.shape == other.values.shape
                and all(np.array_equal(a, b) for a, b in zip(self.x_axes, other.x_axes))
                and all(np.array_equal(a, b) for a, b in zip(self.y_axes, other.y_axes)))


def _spacing(axis) -> float:
    if len(axis) < 2:
        raise ValueError("cannot infer spacing of a single-node axis")
    return float(axis[1] - axis[0])


def grid_nodes(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def centered_axis(n: int, spacing: float = 1.0) -> np.ndarray:
    """``n`` nodes symmetric about 0 (half-cell offset when ``n`` is even)."""
    return (np.arange(n) - (n - 1) / 2) * spacing


def midpoint_axis(n: int, lower: float = 0.0, upper: float = 1.0) -> np.ndarray:
    return lower + (np.arange(n) + 0.5) * (upper - lower) / n


def hilbert_schmidt_error(A: SvirGrid, B: SvirGrid) -> float:
    """Rectangle-rule ``L2`` norm of ``A - B`` over the tensor grid."""
    if not A.same_grid(B):
        raise ValueError("Hilbert-Schmidt error needs identical grids")
    diff = A.values - B.values
    return float(np.sqrt(np.sum(diff * diff) * A.x_cell * A.y_cell))


class IrcEstimator(RegressorMixin, BaseEstimator):
    """Kernel smoothing of impulse response coefficients, channel by channel.

    Parameters
    ----------
    basis : BasisSpec, optional
        Basis the coefficients are expressed in. Needed for subband weights
        and for synthesizing impulse responses. Defaults to the canonical
        basis with one channel per column of ``y``.
    r : float
        Smoothness exponent of the impulse responses (sets the weights).
    s : int
        Smoothness order of the variations along ``y``.
    alpha : float in [0, 1)
        Balance between the weighted ``L2`` term and the Beppo-Levi term.
        ``alpha = 0`` gives a polyharmonic spline shared by all channels.
    mu : float
        Regularization parameter.
    weights : array-like, optional
        Explicit per-channel weights, overriding the subband weights.
        Zero entries are solved with the polyharmonic spline.
    kernel_nodes, quad_tolerance
        Kernel table resolution and radial-inversion tolerance.
    """

    def __init__(self, basis=None, r=1.0, s=1, alpha=0.3, mu=1e-3, weights=None,
                 kernel_nodes=2048, quad_tolerance=1e-10):
        self.basis = basis
        self.r = r
        self.s = s
        self.alpha = alpha
        self.mu = mu
        self.weights = weights
        self.kernel_nodes = kernel_nodes
        self.quad_tolerance = quad_tolerance

    def _resolve_weights(self, N, basis):
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if len(w) < N:
                raise ValueError(f"{len(w)} weights for {N} channels")
            return w[:N].copy()
        if self.alpha == 0:
            return np.zeros(N)
        return subband_weights(basis, self.r).weights[:N].copy()

    def _kernel(self, w):
        if w == 0.0:
            return cpd_kernel(self.s, self.n_features_in_, 1.0 - self.alpha)
        return self.kernels_[w]

    def fit(self, X, y):
        X, y = check_X_y(as_points(X), y, multi_output=True, y_numeric=True)
        if y.ndim == 1:
            y = y[:, None]
        n, N = y.shape
        d = X.shape[1]
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        basis = self.basis
        if basis is None:
            basis = BasisSpec("canonical", N, None, 1)
        if N > basis.size:
            raise ValueError(f"{N} channels exceed the basis size {basis.size}")
        weights = self._resolve_weights(N, basis)
        # with alpha = 0 the weights drop out of every kernel
        effective = weights if self.alpha > 0 else np.zeros(N)
        self.n_features_in_ = d
        self.basis_ = basis
        self.weights_ = weights
        self.kernels_ = {}
        for w in np.unique(effective):
            if w > 0:
                spec = RadialKernelSpec(d, self.s, self.alpha, float(w))
                self.kernels_[float(w)] = build_table(spec, None, self.kernel_nodes,
                                                      self.quad_tolerance)
        # the kernel is normalized in the Fourier convention, which scales the
        # RKHS norm by (2 pi)^(-d/2) relative to the penalty
        gram_mu = self.mu * (2 * math.pi) ** (d / 2)
        sol = solve_all_channels(X, y, effective, gram_mu, lambda w: self.kernels_[w],
                                 cpd_order=self.s, cpd_scale=1.0 - self.alpha)
        self.centers_ = X.copy()
        self.channel_weights_ = effective
        self.coef_ = sol.coefficients
        self.poly_coef_ = sol.polynomial
        self.factorization_count_ = sol.factorization_count
        self.solve_count_ = sol.solve_count
        return self

    def predict(self, X):
        """Estimated coefficient vectors ``F(y)`` at each row of ``X``."""
        check_is_fitted(self, "coef_")
        X = check_array(as_points(X))
        if X.shape[1] != self.n_features_in_:
            raise ValueError("location dimension differs from the fitted one")
        out = np.zeros((len(X), self.coef_.shape[0]))
        groups = {}
        for k, w in enumerate(self.channel_weights_):
            groups.setdefault(float(w), []).append(k)
        for start in range(0, len(X), 4096):
            chunk = X[start:start + 4096]
            dist = cdist(chunk, self.centers_)
            for w, channels in groups.items():
                K = self._kernel(w)(dist)
                block = K @ self.coef_[channels].T
                if w == 0.0 and self.poly_coef_.shape[1]:
                    P = polynomial_matrix(chunk, self.s - 1)
                    block += P @ self.poly_coef_[channels].T
                out[start:start + len(chunk), channels] = block
        return out

    # -- operator views ----------------------------------------------------

    def evaluate_irc(self, y) -> np.ndarray:
        return self.predict(np.atleast_2d(np.asarray(y, dtype=float)))[0]

    def reconstruct_svir(self, x_axes, y_axes) -> SvirGrid:
        """Estimated SVIR on the tensor grid ``x_axes x y_axes``."""
        check_is_fitted(self, "coef_")
        x_axes = tuple(np.atleast_1d(a) for a in x_axes)
        y_axes = tuple(np.atleast_1d(a) for a in y_axes)
        if tuple(len(a) for a in x_axes) != self.basis_.shape:
            raise ValueError(f"x grid must have shape {self.basis_.shape}")
        F = self.predict(grid_nodes(y_axes))
        psfs = synthesize_batch(F, self.basis_)
        values = np.moveaxis(psfs, 0, -1).reshape(self.basis_.shape
                                                  + tuple(len(a) for a in y_axes))
        return SvirGrid(x_axes, y_axes, values)

    def operator(self, x_axes, y_axes, mode="same") -> "ProductConvolution":
        return ProductConvolution.from_estimate(self, x_axes, y_axes, mode)

    def apply_operator(self, u, x_axes, y_axes, mode="full") -> np.ndarray:
        op = self.operator(x_axes, y_axes, mode)
        return op.apply(u)

    # -- persistence -------------------------------------------------------

    def save(self, stem) -> tuple:
        return save_estimate(self, stem)


class ProductConvolution(LinearOperator):
    """Space-varying operator as a sum of product-convolutions.

    ``H u = cell * sum_k phi_k * (F[k] u)``, with linear (zero-padded)
    convolutions computed by FFT and accumulated in the frequency domain.
    ``irc`` holds the coefficient maps ``F[k]`` sampled on the input grid,
    shape ``(N, *y_shape)``. ``mode="full"`` returns the whole linear
    convolution support; ``mode="same"`` crops it to the input grid, aligning
    ``x = 0``. For the canonical basis the atoms are unit impulses and the
    convolutions reduce to shifted sums, which are done directly.
    """

    def __init__(self, basis: BasisSpec, irc, x_axes, y_axes, mode="same"):
        if mode not in ("full", "same"):
            raise ValueError("mode must be 'full' or 'same'")
        self.basis = basis
        self.x_axes = tuple(np.asarray(a, dtype=float) for a in x_axes)
        self.y_axes = tuple(np.asarray(a, dtype=float) for a in y_axes)
        if tuple(len(a) for a in self.x_axes) != basis.shape:
            raise ValueError(f"x grid must have shape {basis.shape}")
        if len(self.y_axes) != basis.dim:
            raise ValueError("y grid dimension must match the basis dimension")
        for xa, ya in zip(self.x_axes, self.y_axes):
            hx, hy = _spacing(xa), _spacing(ya)
            if abs(hx - hy) > 1e-9 * abs(hy):
                raise ValueError(f"x spacing {hx} differs from y spacing {hy}")
        self.mode = mode
        self.y_shape = tuple(len(a) for a in self.y_axes)
        self.x_shape = basis.shape
        self.irc = np.asarray(irc, dtype=float)
        if self.irc.shape[1:] != self.y_shape or self.irc.shape[0] > basis.size:
            raise ValueError(f"irc must have shape (N <= {basis.size}, *{self.y_shape})")
        N = self.irc.shape[0]
        self.full_shape = tuple(ny + nx - 1 for ny, nx in zip(self.y_shape, self.x_shape))
        self.fft_shape = tuple(sp_fft.next_fast_len(m, real=True) for m in self.full_shape)
        self.cell = float(np.prod([_spacing(a) for a in self.y_axes]))
        self._axes = tuple(range(1, basis.dim + 1))
        if basis.kind == "canonical":
            self.atom_fft = None
            self._shifts = np.stack(np.unravel_index(np.arange(N), basis.shape), axis=1)
        else:
            self.atom_fft = sp_fft.rfftn(atoms(basis, N), s=self.fft_shape, axes=self._axes)
        if mode == "same":
            self.offset = tuple(int(round(-xa[0] / _spacing(xa))) for xa in self.x_axes)
            out_shape = self.y_shape
        else:
            self.offset = (0,) * basis.dim
            out_shape = self.full_shape
        self.out_shape = out_shape
        h = [_spacing(a) for a in self.y_axes]
        self.out_axes = tuple(ya[0] + xa[0] + (np.arange(m) + o) * hh
                              for ya, xa, m, o, hh in zip(self.y_axes, self.x_axes,
                                                          out_shape, self.offset, h))
        super().__init__(dtype=np.float64,
                         shape=(int(np.prod(out_shape)), int(np.prod(self.y_shape))))

    @classmethod
    def from_estimate(cls, estimate, x_axes, y_axes, mode="same"):
        check_is_fitted(estimate, "coef_")
        y_axes = tuple(np.asarray(a, dtype=float) for a in y_axes)
        N = estimate.coef_.shape[0]
        irc = estimate.predict(grid_nodes(y_axes)).T.reshape((N,) + tuple(len(a) for a in y_axes))
        return cls(estimate.basis_, irc, x_axes, y_axes, mode)

    def _crop(self):
        return tuple(slice(o, o + m) for o, m in zip(self.offset, self.out_shape))

    def _shift_slices(self, k):
        return tuple(slice(int(o), int(o) + m) for o, m in zip(self._shifts[k], self.y_shape))

    def apply(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.y_shape:
            raise ValueError(f"input grid {u.shape} does not match {self.y_shape}")
        if self.atom_fft is None:
            full = np.zeros(self.full_shape)
            for k in range(self.irc.shape[0]):
                full[self._shift_slices(k)] += self.irc[k] * u
        else:
            spec = sp_fft.rfftn(self.irc * u, s=self.fft_shape, axes=self._axes)
            total = np.einsum("k...,k...->...", spec, self.atom_fft)
            full = sp_fft.irfftn(total, s=self.fft_shape)
        return self.cell * full[self._crop()]

    def apply_adjoint(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != self.out_shape:
            raise ValueError(f"adjoint input grid {v.shape} does not match {self.out_shape}")
        padded = np.zeros(self.fft_shape)
        padded[self._crop()] = v
        if self.atom_fft is None:
            out = np.zeros(self.y_shape)
            for k in range(self.irc.shape[0]):
                out += self.irc[k] * padded[self._shift_slices(k)]
            return self.cell * out
        V = sp_fft.rfftn(padded)
        corr = sp_fft.irfftn(np.conj(self.atom_fft) * V, s=self.fft_shape, axes=self._axes)
        corr = corr[(slice(None),) + tuple(slice(0, m) for m in self.y_shape)]
        return self.cell * np.sum(self.irc * corr, axis=0)

    def _matvec(self, x):
        return self.apply(np.reshape(x, self.y_shape)).ravel()

    def _rmatvec(self, x):
        return self.apply_adjoint(np.reshape(x, self.out_shape)).ravel()


def apply_operator(estimate: IrcEstimator, u, x_axes, y_axes, mode="full") -> np.ndarray:
    return estimate.apply_operator(u, x_axes, y_axes, mode)


def evaluate_irc(estimate: IrcEstimator, y) -> np.ndarray:
    return estimate.evaluate_irc(y)


def reconstruct_svir(estimate: IrcEstimator, x_axes, y_axes) -> SvirGrid:
    return estimate.reconstruct_svir(x_axes, y_axes)


# -- regularization ------------------------------------------------------------

def regularization_schedule(n, N, sigma2, alpha, s, d, C=1.0) -> float:
    """``mu = C (N sigma^2 / n)^(2s/(2s+d)) (1 - alpha)^(-d/(2s+d))``."""
    if n < 1 or sigma2 < 0 or C <= 0:
        raise ValueError("need n >= 1, sigma2 >= 0 and C > 0")
    if sigma2 == 0:
        warnings.warn("noise-free data: using the regularization floor",
                      RegularizationFloorWarning, stacklevel=2)
        return MU_FLOOR
    p = 2 * s / (2 * s + d)
    return C * (N * sigma2 / n) ** p * (1 - alpha) ** (-d / (2 * s + d))


def _harmonic_order(r, s):
    return 1.0 / (1.0 / r + 1.0 / s)


def balanced_schedule(n, sigma2, alpha, r, s, d, C=1.0) -> float:
    """``mu`` for the channel count balanced against the noise level:
    ``C (sigma^2 / n)^(2q/(2q+d)) (1 - alpha)^(-d/(2s+d))`` with
    ``1/q = 1/r + 1/s``."""
    if n < 1 or sigma2 < 0 or C <= 0:
        raise ValueError("need n >= 1, sigma2 >= 0 and C > 0")
    if sigma2 == 0:
        warnings.warn("noise-free data: using the regularization floor",
                      RegularizationFloorWarning, stacklevel=2)
        return MU_FLOOR
    q = _harmonic_order(r, s)
    return C * (sigma2 / n) ** (2 * q / (2 * q + d)) * (1 - alpha) ** (-d / (2 * s + d))


def channel_schedule(n, sigma2, alpha, r, s, d, basis: BasisSpec, C=1.0) -> int:
    """Number of channels balancing truncation against estimation error.

    Rounded to a power of two for wavelet bases and clipped to ``[4, size]``.
    """
    size = basis.size
    if sigma2 <= 0:
        return size
    q = _harmonic_order(r, s)
    N = C * (sigma2 / n) ** (-d * q / (r * (2 * q + d))) \
        * (1 - alpha) ** ((d * d + s * d) * q / (r * s * (2 * q + d)))
    if basis.kind != "canonical":
        N = 2.0 ** round(math.log2(max(N, 1.0)))
    return int(min(max(round(N), 4), size))


def select_mu(X, y, candidates, folds=5, seed=0, **params) -> float:
    """Pick ``mu`` by k-fold cross-validation over PSF locations.

    The score is the held-out mean squared coefficient error; ``params`` are
    passed to ``IrcEstimator``.
    """
    grid = sorted({float(c) for c in candidates})
    if not grid:
        raise ValueError("empty candidate grid")
    if len(grid) == 1:
        return grid[0]
    if folds < 2 or len(as_points(X)) < folds:
        raise ValueError("need folds >= 2 and at least one location per fold")
    search = GridSearchCV(IrcEstimator(**params), {"mu": grid},
                          scoring="neg_mean_squared_error",
                          cv=KFold(folds, shuffle=True, random_state=seed))
    search.fit(as_points(X), y)
    return float(search.best_params_["mu"])


# -- persistence -----------------------------------------------------------------

def save_estimate(est: IrcEstimator, stem) -> tuple:
    """Write ``<stem>.json`` (manifest) and ``<stem>.bin`` (little-endian float64).

    The blob holds the channel-major coefficient matrix, the polynomial
    coefficients, then one kernel table per positive channel weight.
    """
    check_is_fitted(est, "coef_")
    stem = Path(stem)
    chunks = [est.coef_.astype("<f8").tobytes(), est.poly_coef_.astype("<f8").tobytes()]
    offset = sum(len(c) for c in chunks)
    kernels = []
    for w in sorted(est.kernels_):
        blob = est.kernels_[w].to_bytes()
        kernels.append({"weight": w, "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    layout = []
    for k, w in enumerate(est.weights_):
        if layout and layout[-1][0] == float(w) and layout[-1][2] == k:
            layout[-1][2] = k + 1
        else:
            layout.append([float(w), k, k + 1])
    manifest = {
        "format": ESTIMATE_FORMAT,
        "version": ESTIMATE_VERSION,
        "artifact_version": __version__,
        "basis": est.basis_.to_dict(),
        "params": {"r": est.r, "s": est.s, "alpha": est.alpha, "mu": est.mu,
                   "kernel_nodes": est.kernel_nodes, "quad_tolerance": est.quad_tolerance},
        "dim": est.n_features_in_,
        "n_channels": int(est.coef_.shape[0]),
        "n_centers": int(est.coef_.shape[1]),
        "n_poly": int(est.poly_coef_.shape[1]),
        "weights_layout": layout,
        "centers": est.centers_.tolist(),
        "kernels": kernels,
    }
    json_path = stem.with_suffix(".json")
    bin_path = stem.with_suffix(".bin")
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    bin_path.write_bytes(b"".join(chunks))
    return json_path, bin_path


def load_estimate(stem) -> IrcEstimator:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    if manifest.get("format") != ESTIMATE_FORMAT:
        raise ValueError("not an estimate manifest")
    if manifest.get("version") != ESTIMATE_VERSION:
        raise ValueError(f"unsupported estimate version {manifest.get('version')}")
    blob = stem.with_suffix(".bin").read_bytes()
    N, n, p = manifest["n_channels"], manifest["n_centers"], manifest["n_poly"]
    basis = BasisSpec.from_dict(manifest["basis"])
    weights = np.zeros(N)
    for w, a, b in manifest["weights_layout"]:
        weights[a:b] = w
    est = IrcEstimator(basis=basis, **manifest["params"])
    est.n_features_in_ = manifest["dim"]
    est.basis_ = basis
    est.weights_ = weights
    est.channel_weights_ = weights if est.alpha > 0 else np.zeros(N)
    est.centers_ = np.asarray(manifest["centers"], dtype=float).reshape(n, -1)
    est.coef_ = np.frombuffer(blob, dtype="<f8", count=N * n).reshape(N, n).astype(float)
    est.poly_coef_ = np.frombuffer(blob, dtype="<f8", count=N * p,
                                   offset=8 * N * n).reshape(N, p).astype(float)
    est.kernels_ = {}
    for entry in manifest["kernels"]:
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        est.kernels_[float(entry["weight"])] = KernelTable.from_bytes(raw)
    est.factorization_count_ = None
    est.solve_count_ = None
    return est
