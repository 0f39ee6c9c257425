"""PFM (float) and PGM (8-bit display) image files."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pfm(path, image) -> None:
    """Grayscale PFM, little-endian float32, rows stored bottom to top."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim != 2:
        raise ValueError("only grayscale images are supported")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = []
    pos = 0
    while len(parts) < 4:
        end = min(i for i in (data.find(b"\n", pos), data.find(b" ", pos)) if i >= 0)
        token = data[pos:end]
        if token:
            parts.append(token.decode("ascii"))
        pos = end + 1
    kind, w, h, scale = parts[0], int(parts[1]), int(parts[2]), float(parts[3])
    if kind != "Pf":
        raise ValueError("only grayscale PFM ('Pf') is supported")
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(data[pos:pos + 4 * w * h], dtype=dtype).reshape(h, w)
    return img[::-1].astype(np.float64)


def write_pgm(path, image, lo=None, hi=None) -> None:
    """8-bit binary PGM; values are clipped to ``[lo, hi]`` then scaled."""
    img = np.asarray(image, dtype=float)
    lo = img.min() if lo is None else lo
    hi = img.max() if hi is None else hi
    scaled = np.clip((img - lo) / (hi - lo if hi > lo else 1.0), 0, 1)
    out = np.round(255 * scaled).astype(np.uint8)
    h, w = out.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(out.tobytes())
