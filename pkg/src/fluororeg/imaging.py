"""Grayscale image utilities: NCC, Gaussian blur, sampling, blob detection, PGM I/O.

Images are 2D float64 arrays indexed [row, col] with intensities nominally in
[0, 1].  Pixel coordinate (x, y) maps to array element [y, x].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class ImagingError(ValueError):
    pass


class DimensionMismatch(ImagingError):
    pass


class ConstantImage(ImagingError):
    """Zero-variance image; degenerate for correlation (e.g. empty render)."""


def as_image(a) -> np.ndarray:
    img = np.asarray(a, dtype=np.float64)
    if img.ndim != 2:
        raise ImagingError(f"expected 2D image, got shape {img.shape}")
    return img


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-mean normalized cross-correlation, clamped to [-1, 1]."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    if a.size == 0:
        raise ImagingError("empty image")
    az = a - a.mean()
    bz = b - b.mean()
    sa = math.sqrt(float((az * az).sum()))
    sb = math.sqrt(float((bz * bz).sum()))
    if sa == 0.0 or sb == 0.0:
        raise ConstantImage("zero-variance image")
    return min(1.0, max(-1.0, float((az * bz).sum()) / (sa * sb)))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian, radius ceil(3*sigma)."""
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian convolution with edge clamp; sigma=0 is identity."""
    if sigma < 0:
        raise ImagingError("sigma must be >= 0")
    if sigma == 0.0:
        return img
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def bilinear_sample(img: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at continuous pixel coordinates; 0 outside.

    xy is (..., 2) with (x, y) order; returns matching-shape intensities.
    """
    xy = np.asarray(xy, dtype=np.float64)
    x = xy[..., 0]
    y = xy[..., 1]
    h, w = img.shape
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.clip(np.floor(xc).astype(np.intp), 0, w - 2) if w > 1 else np.zeros_like(xc, dtype=np.intp)
    y0 = np.clip(np.floor(yc).astype(np.intp), 0, h - 2) if h > 1 else np.zeros_like(yc, dtype=np.intp)
    fx = xc - x0
    fy = yc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v = (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )
    return np.where(inside, v, 0.0)


@dataclass
class BlobConfig:
    threshold: float = 0.5
    min_area: float = 4.0
    max_area: float = 1e6
    polarity: str = "bright"  # bright: blobs above threshold; dark: below


def detect_blobs(img: np.ndarray, cfg: BlobConfig) -> list[tuple[np.ndarray, float]]:
    """Threshold -> 8-connected components -> area filter -> weighted centroid.

    Returns [(centroid_xy, area_px2)] sorted by (y, x).  Centroids are
    intensity-weighted within each component (weight = |I - threshold| side).
    """
    if cfg.polarity == "bright":
        mask = img > cfg.threshold
        weight = img - cfg.threshold
    else:
        mask = img < cfg.threshold
        weight = cfg.threshold - img
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return []
    out = []
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    order = np.argsort(lab, kind="stable")
    ys, xs, lab = ys[order], xs[order], lab[order]
    bounds = np.searchsorted(lab, np.arange(1, n + 2))
    for i in range(n):
        sl = slice(bounds[i], bounds[i + 1])
        cy, cx = ys[sl], xs[sl]
        area = float(cy.size)
        if area < cfg.min_area or area > cfg.max_area:
            continue
        w = weight[cy, cx]
        wsum = float(w.sum())
        if wsum <= 0:
            continue
        out.append((np.array([float((cx * w).sum() / wsum), float((cy * w).sum() / wsum)]), area))
    out.sort(key=lambda c: (c[0][1], c[0][0]))
    return out


# --- PGM I/O: P5, maxval 65535, big-endian 16-bit, row-major from top-left ---


def save_pgm(img: np.ndarray, path) -> None:
    """Store mapping [0,1] -> [0,65535] with round-half-up."""
    h, w = img.shape
    q = np.floor(np.clip(img, 0.0, 1.0) * 65535.0 + 0.5).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        # tokenizer skipping whitespace and '#' comments
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ImagingError(f"not a P5 PGM: {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 65535:
        raise ImagingError(f"expected maxval 65535, got {maxval}")
    raw = np.frombuffer(data, dtype=">u2", offset=pos, count=w * h)
    return raw.reshape(h, w).astype(np.float64) / 65535.0
