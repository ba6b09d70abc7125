"""Source-intensifier calibration from the shadow of a circular plate.

The plate is parallel to and concentric with the intensifier, so its shadow
is a circle; magnification of the shadow fixes the source height and the
shadow-center offset fixes the lateral source position in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import bilinear_sample


class SicalError(ValueError):
    pass


class NoShadowFound(SicalError):
    pass


class PartialShadow(SicalError):
    pass


class MagnificationTooSmall(SicalError):
    pass


@dataclass
class PlatePhantomSpec:
    plate_diameter: float = 200.0  # mm
    standoff: float = 500.0  # mm, plate to intensifier

    def __post_init__(self):
        if self.plate_diameter <= 0 or self.standoff <= 0:
            raise SicalError("plate dimensions must be positive")


@dataclass
class ShadowFit:
    center: np.ndarray  # px
    radius: float  # px
    rms: float  # px
    axis_ratio_warning: bool = False


@dataclass
class SicalResult:
    source_mm: np.ndarray  # (Sx, Sy, H) in the detector frame
    shadow: ShadowFit
    magnification: float


def _boundary_points(mask: np.ndarray) -> np.ndarray:
    """Pixel-resolution boundary of the mask, as (n, 2) x/y coordinates."""
    er = ndimage.binary_erosion(mask)
    ys, xs = np.nonzero(mask & ~er)
    return np.stack([xs.astype(float), ys.astype(float)], axis=1)


def _kasa_circle(pts: np.ndarray):
    """Algebraic (Kasa) circle fit."""
    x, y = pts[:, 0], pts[:, 1]
    a = np.stack([x, y, np.ones_like(x)], axis=1)
    b = x * x + y * y
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    cx, cy = sol[0] / 2.0, sol[1] / 2.0
    r = math.sqrt(max(sol[2] + cx * cx + cy * cy, 0.0))
    return np.array([cx, cy]), r


def _geometric_refine(pts: np.ndarray, center, r, iters: int = 20):
    """Gauss-Newton on the geometric circle distance."""
    c = np.asarray(center, dtype=float)
    for _ in range(iters):
        d = pts - c
        rho = np.linalg.norm(d, axis=1)
        rho = np.maximum(rho, 1e-12)
        res = rho - r
        j = np.column_stack([-d[:, 0] / rho, -d[:, 1] / rho, -np.ones_like(rho)])
        step, *_ = np.linalg.lstsq(j, -res, rcond=None)
        c = c + step[:2]
        r = r + step[2]
        if np.abs(step).max() < 1e-12:
            break
    d = pts - c
    res = np.linalg.norm(d, axis=1) - r
    return c, float(r), float(np.sqrt((res * res).mean()))


def _axis_ratio(pts: np.ndarray, center) -> float:
    d = pts - center
    cov = d.T @ d / len(d)
    w = np.linalg.eigvalsh(cov)
    return math.sqrt(w[1] / max(w[0], 1e-12))


def fit_circle(pts: np.ndarray) -> ShadowFit:
    """Kasa fit refined by geometric Gauss-Newton on explicit edge points."""
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 3:
        raise SicalError("circle fit needs at least 3 points")
    center0, r0 = _kasa_circle(pts)
    center, radius, rms = _geometric_refine(pts, center0, r0)
    if radius <= 0:
        raise SicalError("degenerate circle fit")
    ratio = _axis_ratio(pts, center)
    return ShadowFit(
        center=center,
        radius=radius,
        rms=rms,
        axis_ratio_warning=abs(ratio - 1.0) > 0.005,
    )


def _subpixel_boundary(img, center, radius, threshold):
    """Refine the shadow edge along radial rays: locate where the bilinear
    intensity profile crosses the threshold going outward."""
    thetas = np.linspace(0.0, 2.0 * math.pi, 720, endpoint=False)
    dirs = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    step = 0.25
    rs = radius + np.arange(-3.0, 3.0 + step, step)
    pts = center[None, None, :] + dirs[:, None, :] * rs[None, :, None]
    vals = bilinear_sample(img, pts)  # (n_theta, n_r)
    inside = vals >= threshold
    cross = inside[:, :-1] & ~inside[:, 1:]
    out = []
    for i in range(len(thetas)):
        idx = np.nonzero(cross[i])[0]
        if idx.size == 0:
            continue
        k = int(idx[0])
        dv = vals[i, k] - vals[i, k + 1]
        frac = (vals[i, k] - threshold) / dv if dv > 0 else 0.5
        out.append(center + dirs[i] * (rs[k] + frac * step))
    return np.array(out).reshape(-1, 2)


@dataclass
class ShadowFitConfig:
    edge_threshold: float = 0.5
    min_area: float = 100.0  # px^2


def fit_plate_shadow(img: np.ndarray, cfg: ShadowFitConfig | None = None) -> ShadowFit:
    """Threshold -> largest dark component -> boundary -> circle fit,
    with radial subpixel edge refinement before the final fit."""
    cfg = cfg or ShadowFitConfig()
    mask = img > cfg.edge_threshold  # shadow rendered bright (attenuation image)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        raise NoShadowFound("no component above threshold")
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    best = int(np.argmax(sizes)) + 1
    if sizes[best - 1] < cfg.min_area:
        raise NoShadowFound(f"largest component only {sizes[best - 1]:.0f} px^2")
    comp = labels == best
    ys, xs = np.nonzero(comp)
    h, w = img.shape
    if xs.min() == 0 or ys.min() == 0 or xs.max() == w - 1 or ys.max() == h - 1:
        raise PartialShadow("shadow touches the frame edge")
    pts = _boundary_points(comp)
    coarse = fit_circle(pts)
    refined = _subpixel_boundary(img, coarse.center, coarse.radius, cfg.edge_threshold)
    if len(refined) >= 50:
        return fit_circle(refined)
    return coarse


def solve_source(
    fit: ShadowFit,
    spec: PlatePhantomSpec,
    pitch: float,
    principal: np.ndarray,
) -> SicalResult:
    """Closed-form source position from shadow magnification and offset.

    With plate radius R at height d and source at (Sx, Sy, H):
      shadow radius r = R * H / (H - d)        => H = m d / (m - 1)
      shadow center c = -S_xy * d / (H - d)    => S_xy = -c (H - d) / d
    where c is the shadow center in mm relative to `principal`, the pixel of
    the detector center (the plate is concentric with the intensifier, so the
    plate center sits on the detector-center axis).
    """
    plate_r = spec.plate_diameter / 2.0
    d = spec.standoff
    m = fit.radius * pitch / plate_r
    if m <= 1.0:
        raise MagnificationTooSmall(f"magnification {m:.6f} <= 1")
    h = m * d / (m - 1.0)
    c_mm = (fit.center - np.asarray(principal, dtype=float)) * pitch
    s_xy = -c_mm * (h - d) / d
    return SicalResult(
        source_mm=np.array([s_xy[0], s_xy[1], h]),
        shadow=fit,
        magnification=m,
    )
