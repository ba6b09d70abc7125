"""Dataset manifest: one JSON header line + one JSON record per line.

Poses are embedded as the 7-field text record (`qw qx qy qz tx ty tz`, 15
significant digits) so round trips are bit-stable.  Writes are atomic
(temp file + rename in the target directory).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import format_pose_line, parse_pose_line
from .synthgen import TrialRecord

FORMAT_VERSION = "fluororeg-manifest-1"


class ManifestError(ValueError):
    pass


class ParseError(ManifestError):
    def __init__(self, msg, line_number):
        super().__init__(f"line {line_number}: {msg}")
        self.line_number = line_number


class DuplicateId(ManifestError):
    pass


@dataclass
class Manifest:
    rig_params: dict  # angle_deg, sid_a, sid_b, detector_mm, width, height
    mesh: str
    seed: int
    records: list[TrialRecord] = field(default_factory=list)
    downscale: int = 1
    base_dir: str = "."  # directory image paths are relative to; not serialized

    def image_path(self, name: str) -> Path:
        return Path(self.base_dir) / name

    def record_by_id(self, trial_id: str) -> TrialRecord:
        for r in self.records:
            if r.trial_id == trial_id:
                return r
        raise KeyError(trial_id)


def _record_to_json(r: TrialRecord) -> dict:
    d = {
        "trial_id": r.trial_id,
        "activity": r.activity,
        "frame_index": r.frame_index,
        "true_pose": format_pose_line(r.true_pose),
        "target_pose": format_pose_line(r.target_pose),
        "image_a": r.image_a,
        "image_b": r.image_b,
    }
    if r.auto_pose is not None:
        d["auto_pose"] = format_pose_line(r.auto_pose)
    if r.manual_pose is not None:
        d["manual_pose"] = format_pose_line(r.manual_pose)
    if r.manual_ncc is not None:
        d["manual_ncc"] = r.manual_ncc
    return d


def _record_from_json(d: dict) -> TrialRecord:
    return TrialRecord(
        trial_id=d["trial_id"],
        activity=d["activity"],
        frame_index=d["frame_index"],
        true_pose=parse_pose_line(d["true_pose"]),
        target_pose=parse_pose_line(d["target_pose"]),
        image_a=d["image_a"],
        image_b=d["image_b"],
        auto_pose=parse_pose_line(d["auto_pose"]) if "auto_pose" in d else None,
        manual_pose=parse_pose_line(d["manual_pose"]) if "manual_pose" in d else None,
        manual_ncc=d.get("manual_ncc"),
    )


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    ids = [r.trial_id for r in manifest.records]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise DuplicateId(f"duplicate trial id {dup!r}")
    header = {
        "format_version": FORMAT_VERSION,
        "rig": manifest.rig_params,
        "mesh": manifest.mesh,
        "seed": manifest.seed,
        "downscale": manifest.downscale,
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(_record_to_json(r), sort_keys=True) for r in manifest.records]
    data = "\n".join(lines) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=".manifest-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_manifest(path) -> Manifest:
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty manifest", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"bad header: {e}", 1) from e
    if header.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"unknown format version {header.get('format_version')!r}", 1)
    records = []
    seen = set()
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = _record_from_json(json.loads(line))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise ParseError(f"bad record: {e}", i) from e
        if rec.trial_id in seen:
            raise DuplicateId(f"duplicate trial id {rec.trial_id!r} at line {i}")
        seen.add(rec.trial_id)
        records.append(rec)
    return Manifest(
        rig_params=header["rig"],
        mesh=header["mesh"],
        seed=header["seed"],
        records=records,
        downscale=header.get("downscale", 1),
        base_dir=str(path.parent),
    )


def rig_from_params(params: dict):
    from .geometry import build_rig

    return build_rig(
        params["angle_deg"],
        params["sid_a"],
        params["sid_b"],
        params["detector_mm"],
        params["width"],
        params["height"],
    )
