"""HTTP service for the manual-registration client.

Read endpoints are lock-free over an immutable in-memory snapshot; manual
pose commits are serialized by a single writer lock and persisted through
the atomic manifest writer.  The earlier committed manual pose survives a
concurrent double commit; the later request gets 409.
"""

from __future__ import annotations

import io
import math
import os
import threading

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from PIL import Image
from pydantic import BaseModel

from .geometry import RigidPose
from .imaging import load_pgm
from .manifest import read_manifest, rig_from_params, write_manifest
from .mesh import load_mesh
from .registration import _TargetStats
from .render import RenderConfig, render, render_ex


def _parse_pose(vals) -> RigidPose:
    if not isinstance(vals, (list, tuple)) or len(vals) != 7:
        raise HTTPException(status_code=400, detail="pose must be 7 floats")
    try:
        arr = [float(v) for v in vals]
    except (TypeError, ValueError):
        raise HTTPException(status_code=400, detail="pose must be numeric")
    if not all(math.isfinite(v) for v in arr):
        raise HTTPException(status_code=400, detail="pose must be finite")
    q = np.array(arr[:4])
    if float(q @ q) < 1e-12:
        raise HTTPException(status_code=400, detail="zero quaternion")
    return RigidPose(q, np.array(arr[4:]))


def _pose_list(p: RigidPose | None):
    if p is None:
        return None
    return [float(v) for v in list(p.q) + list(p.t)]


def _png_bytes(img: np.ndarray) -> bytes:
    arr = np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


class RenderRequest(BaseModel):
    trial: str
    plane: str
    pose: list
    downscale: int = 4


class NccRequest(BaseModel):
    trial: str
    plane: str
    pose: list


class ManualPoseRequest(BaseModel):
    pose: list
    ncc_a: float
    ncc_b: float


def create_app(manifest_path) -> FastAPI:
    manifest = read_manifest(manifest_path)
    rig = rig_from_params(manifest.rig_params)
    mesh_path = manifest.image_path(manifest.mesh)
    mesh = load_mesh(mesh_path.read_bytes(), "stl-binary", name=mesh_path.name)
    write_lock = threading.Lock()
    n_workers = int(os.environ.get("FLUOROREG_THREADS", "2"))
    render_slots = threading.Semaphore(max(1, n_workers))
    target_cache: dict[tuple[str, str], np.ndarray] = {}

    app = FastAPI(title="fluororeg manual registration service")

    def _record(trial_id: str):
        try:
            return manifest.record_by_id(trial_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown trial {trial_id!r}")

    def _camera(plane: str):
        if plane not in ("a", "b"):
            raise HTTPException(status_code=404, detail=f"unknown plane {plane!r}")
        return rig.cameras()[plane]

    def _target(rec, plane: str) -> np.ndarray:
        key = (rec.trial_id, plane)
        if key not in target_cache:
            name = rec.image_a if plane == "a" else rec.image_b
            target_cache[key] = load_pgm(manifest.image_path(name))
        return target_cache[key]

    @app.get("/api/trials")
    def trials():
        return [
            {"trial_id": r.trial_id, "activity": r.activity, "has_manual": r.manual_pose is not None}
            for r in manifest.records
        ]

    @app.get("/api/image/{trial}/{plane}")
    def image(trial: str, plane: str):
        rec = _record(trial)
        _camera(plane)
        return Response(content=_png_bytes(_target(rec, plane)), media_type="image/png")

    @app.post("/api/render")
    def render_endpoint(req: RenderRequest):
        _record(req.trial)
        cam = _camera(req.plane)
        pose = _parse_pose(req.pose)
        if req.downscale < 1:
            raise HTTPException(status_code=400, detail="downscale must be >= 1")
        cfg = RenderConfig(mode="silhouette", blur_sigma=1.0, downscale=req.downscale)
        with render_slots:
            img = render(mesh, pose, cam, cfg)
        return Response(content=_png_bytes(img), media_type="image/png")

    @app.post("/api/ncc")
    def ncc_endpoint(req: NccRequest):
        rec = _record(req.trial)
        cam = _camera(req.plane)
        pose = _parse_pose(req.pose)
        target = _target(rec, req.plane)
        cfg = RenderConfig(mode="silhouette", blur_sigma=1.0, downscale=manifest.downscale)
        with render_slots:
            img, bbox = render_ex(mesh, pose, cam, cfg)
        score = _TargetStats(target).ncc_against(img, bbox)
        return {"ncc": None if score is None else float(score)}

    @app.get("/api/pose/{trial}")
    def pose(trial: str):
        rec = _record(trial)
        return {
            "target": _pose_list(rec.target_pose),
            "auto": _pose_list(rec.auto_pose),
            "manual": _pose_list(rec.manual_pose),
        }

    @app.post("/api/pose/{trial}/manual")
    def commit_manual(trial: str, req: ManualPoseRequest):
        rec = _record(trial)
        new_pose = _parse_pose(req.pose)
        with write_lock:
            if rec.manual_pose is not None:
                raise HTTPException(status_code=409, detail="manual pose already committed")
            rec.manual_pose = new_pose
            rec.manual_ncc = {"a": req.ncc_a, "b": req.ncc_b}
            try:
                write_manifest(manifest, manifest_path)
            except BaseException:
                rec.manual_pose = None
                rec.manual_ncc = None
                raise
        return {"status": "ok", "trial_id": trial}

    return app
