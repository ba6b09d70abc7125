"""Dual-plane fluoroscope calibration and 2D/3D pose registration toolkit."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    CameraModel,
    DualPlaneRig,
    RigidPose,
    build_rig,
    geodesic_angle,
    inplane_l1,
    pose_apply,
    pose_compose,
    pose_invert,
    project,
)
