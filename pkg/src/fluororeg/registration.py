"""Automatic dual-plane 2D/3D pose registration.

ADAM over a 6-DOF local pose parameterization (axis-angle perturbation of
the initial rotation + additive translation), with mean NCC over both
planes' silhouette renders as the similarity, gradients by central finite
differences through the renderer.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import DualPlaneRig, RigidPose, geodesic_angle, inplane_l1, quat_from_axis_angle, _quat_mul
from .imaging import DimensionMismatch
from .optim import OptimConfig, adam_minimize, finite_diff_grad
from .render import RenderConfig, render_ex


OUT_OF_FRAME_PENALTY = 1.0


@dataclass
class RegistrationConfig:
    steps: int = 200
    lr: float = 0.25
    rot_scale: float = 0.02  # radians per unit parameter
    trans_scale: float = 1.0  # mm per unit parameter
    fd_step: float = 0.5  # finite-difference step, parameter units
    render: RenderConfig = field(
        default_factory=lambda: RenderConfig(mode="silhouette", blur_sigma=1.0, downscale=4)
    )
    similarity: str = "ncc"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.rot_scale <= 0 or self.trans_scale <= 0 or self.fd_step <= 0:
            raise ValueError("scales must be positive")
        if self.similarity != "ncc":
            raise ValueError(f"unknown similarity {self.similarity!r}")


@dataclass
class RegistrationResult:
    pose: RigidPose
    loss_trace: list
    final_ncc: dict  # plane -> NCC at the returned pose
    converged: bool
    improved: bool
    wall_time: float


@dataclass
class PoseErrors:
    inplane_l1: float  # mm
    geodesic: float  # degrees


class _TargetStats:
    """Precomputed moments of a target image for sparse-region NCC."""

    def __init__(self, img: np.ndarray):
        self.img = img
        self.n = img.size
        self.mean = float(img.mean())
        zm = img - self.mean
        self.sigma = math.sqrt(float((zm * zm).sum()))

    def ncc_against(self, rendered: np.ndarray, bbox) -> float | None:
        """NCC with a render known to be zero outside bbox; None if the
        render is (near-)constant."""
        x0, y0, x1, y1 = bbox
        a = rendered[y0:y1, x0:x1]
        sa = float(a.sum())
        saa = float((a * a).sum())
        mean_a = sa / self.n
        var = saa - self.n * mean_a * mean_a
        if var <= 1e-20 or self.sigma == 0.0:
            return None
        sab = float((a * self.img[y0:y1, x0:x1]).sum())
        cov = sab - self.n * mean_a * self.mean
        return min(1.0, max(-1.0, cov / (math.sqrt(var) * self.sigma)))


def decode_params(params: np.ndarray, init: RigidPose, cfg: RegistrationConfig) -> RigidPose:
    """init ∘ exp(rot_scale * p[:3]) on rotation, additive scaled translation."""
    dq = quat_from_axis_angle(cfg.rot_scale * np.asarray(params[:3], dtype=float))
    return RigidPose(_quat_mul(init.q, dq), init.t + cfg.trans_scale * np.asarray(params[3:6], dtype=float))


def registration_loss(
    pose_params: np.ndarray,
    mesh,
    rig: DualPlaneRig,
    targets: dict,
    cfg: RegistrationConfig,
    init_pose: RigidPose,
    _stats: dict | None = None,
) -> float:
    """-(NCC_a + NCC_b)/2; a constant (out-of-frame) render contributes the
    +1 penalty instead of failing, so optimization can walk back in."""
    if _stats is None:
        _stats = {p: _TargetStats(img) for p, img in targets.items()}
    pose = decode_params(pose_params, init_pose, cfg)
    total = 0.0
    for plane, cam in rig.cameras().items():
        stats = _stats[plane]
        if (stats.img.shape[1], stats.img.shape[0]) != (
            cam.width // cfg.render.downscale,
            cam.height // cfg.render.downscale,
        ):
            raise DimensionMismatch(
                f"target for plane {plane} is {stats.img.shape}, render output differs"
            )
        img, bbox = render_ex(mesh, pose, cam, cfg.render)
        score = stats.ncc_against(img, bbox)
        total += -1.0 if score is None else score
    return -total / 2.0


def register(
    targets: dict,
    mesh,
    init_pose: RigidPose,
    rig: DualPlaneRig,
    cfg: RegistrationConfig | None = None,
) -> RegistrationResult:
    """Refine init_pose against the target image pair; returns the best-loss
    pose seen along the ADAM trajectory."""
    cfg = cfg or RegistrationConfig()
    stats = {p: _TargetStats(np.asarray(img, dtype=np.float64)) for p, img in targets.items()}

    def loss(params):
        return registration_loss(params, mesh, rig, targets, cfg, init_pose, _stats=stats)

    def grad(params):
        return finite_diff_grad(loss, params, cfg.fd_step)

    t0 = time.perf_counter()
    opt_cfg = OptimConfig(max_iters=cfg.steps, lr=cfg.lr)
    _, trace = adam_minimize(grad, np.zeros(6), opt_cfg, f=loss)
    wall = time.perf_counter() - t0

    initial_loss = trace.objective[0] if trace.objective else None
    best_pose = decode_params(trace.best_x, init_pose, cfg)

    final_ncc = {}
    for plane, cam in rig.cameras().items():
        img, bbox = render_ex(mesh, best_pose, cam, cfg.render)
        score = stats[plane].ncc_against(img, bbox)
        final_ncc[plane] = float("nan") if score is None else score

    improved = trace.best_f <= (initial_loss if initial_loss is not None else trace.best_f)
    return RegistrationResult(
        pose=best_pose,
        loss_trace=list(trace.objective),
        final_ncc=final_ncc,
        converged=trace.converged,
        improved=improved,
        wall_time=wall,
    )


def evaluate_errors(estimate: RigidPose, truth: RigidPose, rig: DualPlaneRig) -> PoseErrors:
    return PoseErrors(
        inplane_l1=inplane_l1(estimate, truth, rig),
        geodesic=geodesic_angle(estimate, truth),
    )
