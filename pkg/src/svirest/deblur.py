"""Total-variation deblurring with an estimated space-varying operator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec
from .estimator import IrcEstimator, ProductConvolution, grid_nodes
from .geometry import BoxDomain, generate_locations
from .synthdata import GaussianPhantom, sample_psfs


class DivergenceError(RuntimeError):
    """The objective increased over too many consecutive iterations."""

    def __init__(self, message, iteration, history):
        super().__init__(message)
        self.iteration = iteration
        self.history = history


class InfinitePsnr(ValueError):
    """Raised when the two images are identical."""


def psnr(a, b, peak=1.0) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        raise InfinitePsnr("infinite pSNR: images are identical")
    return float(10 * np.log10(peak ** 2 / mse))


def gradient(u):
    """Forward differences with a zero last row/column."""
    g = np.zeros((2,) + u.shape)
    g[0, :-1] = u[1:] - u[:-1]
    g[1, :, :-1] = u[:, 1:] - u[:, :-1]
    return g


def divergence(p):
    """Negative adjoint of :func:`gradient`."""
    d = np.zeros(p.shape[1:])
    d[:-1] += p[0, :-1]
    d[1:] -= p[0, :-1]
    d[:, :-1] += p[1, :, :-1]
    d[:, 1:] -= p[1, :, :-1]
    return d


def total_variation(u) -> float:
    g = gradient(u)
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))


def tv_objective(op, u, f, lam) -> float:
    r = op.apply(u) - f
    return 0.5 * float(np.sum(r * r)) + lam * total_variation(u)


def operator_norm_sq(op, shape, iterations=20, seed=0) -> float:
    """Power-method estimate of ``||H||^2 + ||grad||^2`` bound for ``K = [H; grad]``."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(shape)
    u /= np.linalg.norm(u)
    lam = 0.0
    for _ in range(iterations):
        v = op.apply_adjoint(op.apply(u)) - divergence(gradient(u))
        lam = float(np.linalg.norm(v))
        if lam == 0:
            break
        u = v / lam
    return lam


@dataclass
class DeblurResult:
    image: np.ndarray
    objective: list = field(repr=False)
    iterations: int = 0


def deblur_tv(degraded, op, lam, iterations=300, *, theta=1.0, patience=10,
              seed=0) -> DeblurResult:
    """Minimize ``0.5 ||H u - f||^2 + lam TV(u)`` with a primal-dual scheme.

    ``op`` maps images to images of the same shape through ``apply`` and
    ``apply_adjoint``. Step sizes satisfy ``tau sigma ||K||^2 < 1`` for
    ``K = [H; grad]``, with the norm from 20 power iterations. The run stops
    with :class:`DivergenceError` if the objective rises ``patience`` times
    in a row.
    """
    f = np.asarray(degraded, dtype=float)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    L2 = 1.05 * operator_norm_sq(op, f.shape, 20, seed)
    tau = sigma = 0.99 / np.sqrt(L2)
    u = f.copy()
    ubar = u.copy()
    q = np.zeros_like(f)           # dual of the data term
    p = np.zeros((2,) + f.shape)   # dual of TV
    history = [tv_objective(op, u, f, lam)]
    rises = 0
    for it in range(iterations):
        q = (q + sigma * (op.apply(ubar) - f)) / (1 + sigma)
        p = p + sigma * gradient(ubar)
        norm = np.sqrt(p[0] ** 2 + p[1] ** 2)
        p /= np.maximum(1.0, norm / lam) if lam > 0 else np.inf
        if lam == 0:
            p[:] = 0.0
        u_new = u - tau * (op.apply_adjoint(q) - divergence(p))
        ubar = u_new + theta * (u_new - u)
        u = u_new
        obj = tv_objective(op, u, f, lam)
        if not np.isfinite(obj):
            raise DivergenceError(f"objective not finite at iteration {it}", it, history)
        rises = rises + 1 if obj > history[-1] else 0
        history.append(obj)
        if rises >= patience:
            raise DivergenceError(
                f"objective increased for {patience} consecutive iterations "
                f"(iteration {it}, objective {obj:.6g}, tau=sigma={tau:.3g})", it, history)
    return DeblurResult(u, history, iterations)


def piecewise_constant_image(size=128, seed=0) -> np.ndarray:
    """Rectangles and disks on a dark background, values in ``[0, 1]``."""
    rng = np.random.default_rng(seed)
    img = np.full((size, size), 0.1)
    yy, xx = np.mgrid[:size, :size]
    for _ in range(6):
        r0, c0 = rng.integers(0, size - size // 4, 2)
        h, w = rng.integers(size // 10, size // 3, 2)
        img[r0:r0 + h, c0:c0 + w] = rng.uniform(0.3, 0.9)
    for _ in range(5):
        cy, cx = rng.uniform(0.15, 0.85, 2) * size
        rad = rng.uniform(0.04, 0.12) * size
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= rad ** 2] = rng.uniform(0.2, 1.0)
    return img


@dataclass
class DeblurDemo:
    truth: np.ndarray
    degraded: np.ndarray
    exact: ProductConvolution
    estimated: ProductConvolution
    estimator: IrcEstimator


def build_deblur_demo(size=128, patch=17, grid=8, noise=0.01, psf_noise=0.0,
                      s=2, mu=1e-6, seed=0, truth=None) -> DeblurDemo:
    """Synthetic 2D blur with Gaussian PSFs widening away from the middle row.

    All coordinates are in pixels. The true operator uses the phantom PSF at
    every pixel; the estimated one is fitted from ``grid x grid`` sampled PSFs
    with a thin-plate smoother on the canonical basis. ``truth`` replaces
    the generated piecewise-constant image (square, side ``size``).
    """
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        if truth.ndim != 2 or truth.shape[0] != truth.shape[1]:
            raise ValueError("demo images must be square")
        size = truth.shape[0]
    half = patch // 2
    x_axis = np.arange(-half, half + 1, dtype=float)
    y_axis = np.arange(size, dtype=float)
    domain = BoxDomain((0.0, 0.0), (size - 1.0, size - 1.0))
    phantom = GaussianPhantom("experiment", (x_axis, x_axis), domain)
    basis = BasisSpec("canonical", patch, None, 2)

    nodes = grid_nodes((y_axis, y_axis))
    true_irc = phantom.psfs(nodes).reshape(len(nodes), -1).T.reshape((-1, size, size))
    exact = ProductConvolution(basis, true_irc, (x_axis, x_axis), (y_axis, y_axis), "same")

    Y = generate_locations(grid * grid, domain, "midpoint-grid", seed)
    data = sample_psfs(phantom, Y, basis, basis.size, psf_noise, seed)
    est = IrcEstimator(basis=basis, s=s, alpha=0.0, mu=mu).fit(Y.points, data.observations)
    estimated = ProductConvolution.from_estimate(est, (x_axis, x_axis), (y_axis, y_axis), "same")

    if truth is None:
        truth = piecewise_constant_image(size, seed)
    rng = np.random.default_rng(seed + 1)
    degraded = exact.apply(truth) + noise * rng.standard_normal(truth.shape)
    return DeblurDemo(truth, degraded, exact, estimated, est)
