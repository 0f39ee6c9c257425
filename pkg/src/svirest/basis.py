"""Orthonormal bases for impulse responses and their subband weights.

Wavelet transforms are periodized, so analysis and synthesis are exact
orthogonal inverses on power-of-two grids. Coefficients are flattened coarse
to fine: the scaling block first, then the detail subbands from the coarsest
scale ``j = 1`` to the finest ``j = J``. In 2D each scale contributes three
subbands (horizontal, vertical, diagonal detail).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("canonical", "haar", "daubechies-4")

_SQ3 = np.sqrt(3.0)
_LOWPASS = {
    "haar": np.array([1.0, 1.0]) / np.sqrt(2.0),
    # 4-tap Daubechies filter, two vanishing moments
    "daubechies-4": np.array([1 + _SQ3, 3 + _SQ3, 3 - _SQ3, 1 - _SQ3]) / (4 * np.sqrt(2.0)),
}


def _highpass(h):
    g = h[::-1].copy()
    g[1::2] *= -1
    return g


@dataclass(frozen=True)
class BasisSpec:
    """Description of an orthonormal basis on a square grid.

    Parameters
    ----------
    kind : {"canonical", "haar", "daubechies-4"}
    signal_length : int
        Grid points per axis. Must be a power of two for wavelet kinds.
    levels : int, optional
        Number of decomposition levels; defaults to the full depth.
    dim : {1, 2}
    """

    kind: str = "daubechies-4"
    signal_length: int = 64
    levels: int = None
    dim: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}; expected one of {KINDS}")
        if self.dim not in (1, 2):
            raise ValueError("only 1D and 2D bases are supported")
        L = int(self.signal_length)
        if L < 1:
            raise ValueError("signal_length must be positive")
        object.__setattr__(self, "signal_length", L)
        if self.kind == "canonical":
            object.__setattr__(self, "levels", 0)
            return
        m = L.bit_length() - 1
        if L != 1 << m or m < 1:
            raise ValueError("wavelet bases need a power-of-two signal_length >= 2")
        levels = m if self.levels is None else int(self.levels)
        if not 1 <= levels <= m:
            raise ValueError(f"levels must lie in [1, {m}] for signal_length={L}")
        object.__setattr__(self, "levels", levels)

    @property
    def size(self) -> int:
        """Number of coefficients, ``signal_length ** dim``."""
        return self.signal_length ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.signal_length,) * self.dim

    def to_dict(self) -> dict:
        return {"kind": self.kind, "signal_length": self.signal_length,
                "levels": self.levels, "dim": self.dim}

    @classmethod
    def from_dict(cls, doc: dict) -> "BasisSpec":
        return cls(doc["kind"], doc["signal_length"], doc["levels"] or None, doc["dim"])


@dataclass(frozen=True)
class CoefficientVector:
    values: np.ndarray
    basis: BasisSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.basis.size,):
            raise ValueError(f"expected {self.basis.size} coefficients, got shape {v.shape}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class WeightSequence:
    """Per-channel weights ``w[k]``.

    ``unique_values`` lists ``(value, start, stop)`` per subband (or per
    channel for the canonical basis). ``constant`` is the largest ``c`` with
    ``w[k] >= c * (1 + k**2) ** (r / d)`` over all channels.
    """

    weights: np.ndarray
    smoothness_r: float
    unique_values: tuple
    constant: float
    dim: int = 1

    def __len__(self):
        return len(self.weights)

    def truncated(self, N: int) -> "WeightSequence":
        groups = tuple((v, a, min(b, N)) for v, a, b in self.unique_values if a < N)
        w = self.weights[:N]
        return WeightSequence(w, self.smoothness_r, groups,
                              _growth_constant(w, self.smoothness_r, self.dim), self.dim)


# -- 1D periodized filter bank ---------------------------------------------

def _analysis_step(x, h, axis):
    """One level along ``axis``: returns (approximation, detail)."""
    x = np.moveaxis(x, axis, -1)
    L = x.shape[-1]
    g = _highpass(h)
    idx = (2 * np.arange(L // 2)[:, None] + np.arange(len(h))[None, :]) % L
    blocks = x[..., idx]
    a = blocks @ h
    d = blocks @ g
    return np.moveaxis(a, -1, axis), np.moveaxis(d, -1, axis)


def _synthesis_step(a, d, h, axis):
    a = np.moveaxis(a, axis, -1)
    d = np.moveaxis(d, axis, -1)
    half = a.shape[-1]
    L = 2 * half
    g = _highpass(h)
    out = np.zeros(a.shape[:-1] + (L,))
    base = 2 * np.arange(half)
    for m in range(len(h)):
        # indices are distinct for a fixed tap, so fancy += is safe
        out[..., (base + m) % L] += h[m] * a + g[m] * d
    return np.moveaxis(out, -1, axis)


def _forward(x, basis):
    """Transform signals with trailing grid axes into flat coefficient arrays."""
    batch = x.shape[:x.ndim - basis.dim]
    if basis.kind == "canonical":
        return x.reshape(batch + (basis.size,)).astype(float, copy=True)
    h = _LOWPASS[basis.kind]
    details = []
    approx = np.asarray(x, dtype=float)
    if basis.dim == 1:
        for _ in range(basis.levels):
            approx, det = _analysis_step(approx, h, -1)
            details.append([det])
    else:
        for _ in range(basis.levels):
            lo, hi = _analysis_step(approx, h, -1)
            ll, lh = _analysis_step(lo, h, -2)
            hl, hh = _analysis_step(hi, h, -2)
            approx = ll
            details.append([lh, hl, hh])
    parts = [approx.reshape(batch + (-1,))]
    for group in reversed(details):
        parts.extend(band.reshape(batch + (-1,)) for band in group)
    return np.concatenate(parts, axis=-1)


def _inverse(c, basis):
    batch = c.shape[:-1]
    if basis.kind == "canonical":
        return c.reshape(batch + basis.shape).astype(float, copy=True)
    h = _LOWPASS[basis.kind]
    L, J = basis.signal_length, basis.levels
    side = L >> J
    if basis.dim == 1:
        pos = side
        approx = c[..., :side]
        for _ in range(J):
            det = c[..., pos:pos + side]
            approx = _synthesis_step(approx, det, h, -1)
            pos += side
            side *= 2
        return approx
    pos = side * side
    approx = c[..., :pos].reshape(batch + (side, side))
    for _ in range(J):
        n = side * side
        lh, hl, hh = (c[..., pos + i * n:pos + (i + 1) * n].reshape(batch + (side, side))
                      for i in range(3))
        pos += 3 * n
        lo = _synthesis_step(approx, lh, h, -2)
        hi = _synthesis_step(hl, hh, h, -2)
        approx = _synthesis_step(lo, hi, h, -1)
        side *= 2
    return approx


def analyze(signal, basis: BasisSpec) -> CoefficientVector:
    """Orthonormal analysis of one sampled signal."""
    x = np.asarray(signal, dtype=float)
    if x.shape != basis.shape:
        raise ValueError(f"signal shape {x.shape} does not match basis grid {basis.shape}")
    return CoefficientVector(_forward(x, basis), basis)


def analyze_batch(signals, basis: BasisSpec) -> np.ndarray:
    """Analysis of a stack of signals, shape ``(..., *basis.shape)`` to ``(..., size)``."""
    x = np.asarray(signals, dtype=float)
    if x.shape[x.ndim - basis.dim:] != basis.shape:
        raise ValueError(f"trailing signal shape must be {basis.shape}")
    return _forward(x, basis)


def synthesize(coeffs: CoefficientVector) -> np.ndarray:
    return _inverse(coeffs.values, coeffs.basis)


def synthesize_batch(coeffs, basis: BasisSpec) -> np.ndarray:
    """Synthesis of a stack of coefficient vectors, zero-padded up to ``basis.size``."""
    c = np.asarray(coeffs, dtype=float)
    if c.shape[-1] < basis.size:
        pad = np.zeros(c.shape[:-1] + (basis.size - c.shape[-1],))
        c = np.concatenate([c, pad], axis=-1)
    elif c.shape[-1] != basis.size:
        raise ValueError(f"at most {basis.size} coefficients per vector")
    return _inverse(c, basis)


def atoms(basis: BasisSpec, N: int = None) -> np.ndarray:
    """The first ``N`` basis functions sampled on the grid."""
    N = basis.size if N is None else N
    return synthesize_batch(np.eye(N, basis.size), basis)


def truncate(coeffs: CoefficientVector, N: int) -> CoefficientVector:
    """Keep the first ``N`` coefficients (coarse to fine) and zero the rest."""
    size = coeffs.basis.size
    if not 0 <= N <= size:
        raise ValueError(f"N must lie in [0, {size}]")
    v = coeffs.values.copy()
    v[N:] = 0.0
    return CoefficientVector(v, coeffs.basis)


def subband_layout(basis: BasisSpec) -> list:
    """``(scale, start, stop)`` per subband; scale 0 is the scaling block."""
    if basis.kind == "canonical":
        return [(0, 0, basis.size)]
    side = basis.signal_length >> basis.levels
    bands = [(0, 0, side ** basis.dim)]
    pos = side ** basis.dim
    for j in range(1, basis.levels + 1):
        for _ in range(1 if basis.dim == 1 else 3):
            n = side ** basis.dim
            bands.append((j, pos, pos + n))
            pos += n
        side *= 2
    return bands


def _growth_constant(w, r, d):
    k = np.arange(len(w), dtype=float)
    return float(np.min(w / (1.0 + k ** 2) ** (r / d)))


def subband_weights(basis: BasisSpec, r: float) -> WeightSequence:
    """Weights that are constant on each subband.

    The scaling block gets weight 1 and a detail subband at scale ``j`` gets
    ``2 ** (2 r j)``. For the canonical basis every channel gets its own
    weight ``(1 + k**2) ** (r / d)``.
    """
    d = basis.dim
    if r <= d / 2:
        raise ValueError(f"smoothness r must exceed d/2 = {d / 2}")
    if basis.kind == "canonical":
        k = np.arange(basis.size, dtype=float)
        w = (1.0 + k ** 2) ** (r / d)
        groups = tuple((float(v), i, i + 1) for i, v in enumerate(w))
    else:
        w = np.empty(basis.size)
        groups = []
        for j, a, b in subband_layout(basis):
            value = 1.0 if j == 0 else 2.0 ** (2 * r * j)
            w[a:b] = value
            groups.append((value, a, b))
        groups = tuple(groups)
    return WeightSequence(w, float(r), groups, _growth_constant(w, r, d), d)
