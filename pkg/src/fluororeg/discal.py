"""Distortion calibration from a bead-grid phantom.

Pipeline: ideal grid model -> rigid coherent point drift for correspondence
-> third-order bivariate polynomial warp (distorted -> ideal) fitted with
Powell from a least-squares start -> point/image correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import bilinear_sample
from .optim import OptimConfig, powell_minimize


class DiscalError(ValueError):
    pass


class DegenerateConfiguration(DiscalError):
    pass


class InsufficientCorrespondences(DiscalError):
    pass


class InversionDivergence(DiscalError):
    pass


@dataclass
class BeadGridSpec:
    rows: int = 45
    cols: int = 45
    spacing: float = 7.0  # mm
    center: tuple[float, float] = (832.0, 800.0)  # px
    pitch: float = 360.0 / 1664.0  # mm/px

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise DiscalError("grid needs at least 2x2 beads")
        if self.spacing <= 0 or self.pitch <= 0:
            raise DiscalError("spacing and pitch must be positive")


def ideal_grid(spec: BeadGridSpec) -> np.ndarray:
    """Row-major (rows*cols, 2) pixel points centered on spec.center."""
    step = spec.spacing / spec.pitch
    xs = (np.arange(spec.cols) - (spec.cols - 1) / 2.0) * step + spec.center[0]
    ys = (np.arange(spec.rows) - (spec.rows - 1) / 2.0) * step + spec.center[1]
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


# --- coherent point drift (rigid) ---


@dataclass
class CpdConfig:
    w_outlier: float = 0.05
    max_em_iters: int = 500
    tol: float = 1e-10


@dataclass
class Correspondences:
    detected: np.ndarray  # (k, 2) px
    ideal: np.ndarray  # (k, 2) px
    outlier_count: int
    mean_residual: float  # px, after the rigid alignment
    converged: bool = True
    rotation: np.ndarray = field(default_factory=lambda: np.eye(2))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(2))


def _sqdist(x, y, out=None):
    """(m, n) squared distances between y (m, 2) and x (n, 2)."""
    d2 = np.matmul(y, x.T, out=out)
    d2 *= -2.0
    d2 += (x**2).sum(axis=1)[None, :]
    d2 += (y**2).sum(axis=1)[:, None]
    np.maximum(d2, 0.0, out=d2)
    return d2


def _check_nondegenerate(pts):
    c = pts - pts.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    if s[1] < 1e-9 * max(s[0], 1.0):
        raise DegenerateConfiguration("point set is collinear")


def cpd_align(detected: np.ndarray, ideal: np.ndarray, cfg: CpdConfig | None = None) -> Correspondences:
    """Rigid CPD: EM over a Gaussian mixture (ideal points as centroids moved
    onto the detected set) with a uniform outlier component, then unique
    maximum-responsibility assignment."""
    cfg = cfg or CpdConfig()
    x = np.asarray(detected, dtype=float)  # fixed
    y = np.asarray(ideal, dtype=float)  # moving
    if len(x) < 4 or len(y) < 4:
        raise DiscalError("need at least 4 points per set")
    _check_nondegenerate(x)
    _check_nondegenerate(y)
    n, m = len(x), len(y)
    dim = 2

    rot = np.eye(2)
    trans = np.zeros(2)
    ty = y
    d2 = _sqdist(x, ty)  # (m, n)
    sigma2 = float(d2.sum() / (dim * m * n))
    converged = False
    w = cfg.w_outlier
    p = np.full((m, n), 1.0 / m)

    g = np.empty_like(d2)
    for _ in range(cfg.max_em_iters):
        # E-step (in place: the m*n passes dominate the run time)
        np.multiply(d2, -1.0 / (2.0 * sigma2), out=g)
        np.exp(g, out=g)
        c = (2.0 * math.pi * sigma2) ** (dim / 2.0) * (w / max(1.0 - w, 1e-12)) * m / n
        denom = g.sum(axis=0)
        denom += c
        np.divide(g, denom[None, :], out=g)
        p = g
        # M-step (rigid, no scale)
        np_total = p.sum()
        if np_total < 1e-12:
            break
        px = p.sum(axis=1)  # (m,)
        pn = p.sum(axis=0)  # (n,)
        mu_x = (pn @ x) / np_total
        mu_y = (px @ y) / np_total
        a = (x - mu_x).T @ (p.T @ (y - mu_y))
        u, _, vt = np.linalg.svd(a)
        cdiag = np.eye(2)
        cdiag[1, 1] = np.sign(np.linalg.det(u @ vt))
        rot = u @ cdiag @ vt
        trans = mu_x - rot @ mu_y
        ty = y @ rot.T + trans
        d2 = _sqdist(x, ty, out=d2)
        sigma2_new = float(np.einsum("ij,ij->", p, d2) / (np_total * dim))
        sigma2_new = max(sigma2_new, 1e-12)
        if np_total < 0.5 * n:
            # while the uniform outlier component still holds most of the
            # mass, sigma is far above the data scale and the EM update
            # shrinks it only a few percent per iteration; anneal faster
            sigma2_new = min(sigma2_new, 0.4 * sigma2)
        if abs(sigma2 - sigma2_new) < cfg.tol * sigma2:
            sigma2 = sigma2_new
            converged = True
            break
        sigma2 = sigma2_new

    # assignment: per ideal point, its max-responsibility detected point,
    # outliers below 0.5, then greedy uniqueness by descending responsibility
    best_n = p.argmax(axis=1)
    best_r = p[np.arange(m), best_n]
    order = np.argsort(-best_r)
    used = np.zeros(n, dtype=bool)
    pairs_d = []
    pairs_i = []
    resid = []
    outliers = 0
    for mi in order:
        ni = best_n[mi]
        if best_r[mi] < 0.5 or used[ni]:
            outliers += 1
            continue
        used[ni] = True
        pairs_d.append(x[ni])
        pairs_i.append(y[mi])
        resid.append(math.sqrt(float(((x[ni] - ty[mi]) ** 2).sum())))
    return Correspondences(
        detected=np.array(pairs_d).reshape(-1, 2),
        ideal=np.array(pairs_i).reshape(-1, 2),
        outlier_count=outliers,
        mean_residual=float(np.mean(resid)) if resid else float("nan"),
        converged=converged,
        rotation=rot,
        translation=trans,
    )


# --- 3rd-order polynomial distortion map ---

# exponent table for the full bivariate cubic basis {x^i y^j : i + j <= 3}
POLY3_EXPONENTS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)]


def _basis(nx: np.ndarray, ny: np.ndarray) -> np.ndarray:
    cols = [nx**i * ny**j for i, j in POLY3_EXPONENTS]
    return np.stack(cols, axis=-1)


@dataclass
class DistortionMap:
    """Two cubic polynomials over normalized pixel coordinates, mapping
    distorted -> ideal."""

    coeffs_x: np.ndarray  # (10,)
    coeffs_y: np.ndarray  # (10,)
    width: int
    height: int
    rms_px: float = 0.0

    def __post_init__(self):
        self.coeffs_x = np.asarray(self.coeffs_x, dtype=float)
        self.coeffs_y = np.asarray(self.coeffs_y, dtype=float)
        if self.coeffs_x.shape != (10,) or self.coeffs_y.shape != (10,):
            raise DiscalError("distortion map needs 10 + 10 coefficients")

    @staticmethod
    def identity(width: int, height: int) -> "DistortionMap":
        cx = np.zeros(10)
        cy = np.zeros(10)
        cx[1] = 1.0  # x term
        cy[2] = 1.0  # y term
        return DistortionMap(cx, cy, width, height)

    def _norm(self, pts):
        return (pts[..., 0] - self.width / 2.0) / (self.width / 2.0), (
            pts[..., 1] - self.height / 2.0
        ) / (self.height / 2.0)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        nx, ny = self._norm(pts)
        b = _basis(nx, ny)
        ox = b @ self.coeffs_x
        oy = b @ self.coeffs_y
        return np.stack(
            [ox * (self.width / 2.0) + self.width / 2.0, oy * (self.height / 2.0) + self.height / 2.0],
            axis=-1,
        )


def fit_distortion(corr: Correspondences, image_size: tuple[int, int]) -> DistortionMap:
    """Fit the distorted->ideal cubic map: least-squares start, then Powell on
    the mean squared pixel error over all 20 coefficients."""
    w, h = image_size
    if len(corr.detected) < 10:
        raise InsufficientCorrespondences(f"need >= 10 pairs, got {len(corr.detected)}")
    hx, hy = w / 2.0, h / 2.0
    nx = (corr.detected[:, 0] - hx) / hx
    ny = (corr.detected[:, 1] - hy) / hy
    tx = (corr.ideal[:, 0] - hx) / hx
    ty = (corr.ideal[:, 1] - hy) / hy
    b = _basis(nx, ny)
    cx0, *_ = np.linalg.lstsq(b, tx, rcond=None)
    cy0, *_ = np.linalg.lstsq(b, ty, rcond=None)

    scale = np.array([hx, hy])

    def objective(c):
        rx = (b @ c[:10] - tx) * hx
        ry = (b @ c[10:] - ty) * hy
        return float((rx @ rx + ry @ ry) / len(rx))

    x0 = np.concatenate([cx0, cy0])
    cfg = OptimConfig(max_iters=20, step_init=1e-4, tol_f=1e-14, tol_x=1e-14)
    xstar, _ = powell_minimize(objective, x0, cfg)
    rms = math.sqrt(objective(xstar) / 2.0)  # per-coordinate RMS in px
    return DistortionMap(xstar[:10], xstar[10:], w, h, rms_px=rms)


def undistort_points(pts: np.ndarray, dmap: DistortionMap) -> np.ndarray:
    return dmap(pts)


def distort_points(pts: np.ndarray, dmap: DistortionMap, iters: int = 10, max_disp: float = 50.0):
    """Numerically invert the distorted->ideal map by fixed-point iteration."""
    pts = np.asarray(pts, dtype=float)
    d = pts.copy()
    for _ in range(iters):
        d = d + (pts - dmap(d))
    disp = np.linalg.norm(d - pts, axis=-1)
    if np.any(disp > max_disp):
        raise InversionDivergence(f"fixed-point displacement reached {disp.max():.1f} px")
    return d


def undistort_image(img: np.ndarray, dmap: DistortionMap) -> np.ndarray:
    """Inverse warp: each ideal output pixel samples its distorted source."""
    h, w = img.shape
    gx, gy = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    pts = np.stack([gx, gy], axis=-1)
    src = distort_points(pts, dmap)
    return bilinear_sample(img, src)


# --- calibration file (text, one per plane) ---


def _fmt_floats(a):
    # shortest round-trip-exact decimal form
    return " ".join(repr(float(v)) for v in np.asarray(a).ravel())


def write_calibration(path, plane: str, dmap: DistortionMap, sical_source=None) -> None:
    lines = [
        f"plane: {plane}",
        "basis: poly3-normalized",
        f"coeffs_x: {_fmt_floats(dmap.coeffs_x)}",
        f"coeffs_y: {_fmt_floats(dmap.coeffs_y)}",
        f"rms_px: {dmap.rms_px!r}",
    ]
    if sical_source is not None:
        lines.append(f"sical_source_mm: {_fmt_floats(sical_source)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def append_sical(path, source_mm) -> None:
    with open(path, "a") as fh:
        fh.write(f"sical_source_mm: {_fmt_floats(source_mm)}\n")


def read_calibration(path, image_size: tuple[int, int] = (1664, 1600)):
    """Returns (plane, DistortionMap, sical_source or None)."""
    fields = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, val = line.partition(":")
            fields[key.strip()] = val.strip()
    for req in ("plane", "basis", "coeffs_x", "coeffs_y", "rms_px"):
        if req not in fields:
            raise DiscalError(f"calibration file missing field {req!r}")
    if fields["basis"] != "poly3-normalized":
        raise DiscalError(f"unknown basis {fields['basis']!r}")
    dmap = DistortionMap(
        np.array([float(v) for v in fields["coeffs_x"].split()]),
        np.array([float(v) for v in fields["coeffs_y"].split()]),
        image_size[0],
        image_size[1],
        rms_px=float(fields["rms_px"]),
    )
    source = None
    if "sical_source_mm" in fields:
        source = np.array([float(v) for v in fields["sical_source_mm"].split()])
    return fields["plane"], dmap, source
