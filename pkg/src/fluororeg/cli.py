"""Command-line interface: synth, discal, sical, register, evaluate, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import discal as D
from . import evalharness as E
from . import sical as SI
from . import synthgen as S
from .geometry import GeometryError, build_rig
from .imaging import BlobConfig, ImagingError, detect_blobs, load_pgm
from .manifest import Manifest, ManifestError, read_manifest, rig_from_params, write_manifest
from .mesh import MeshError, load_mesh, make_phantom, save_stl_binary
from .registration import RegistrationConfig, register
from .render import RenderConfig, RenderError

DEFAULT_RIG = {
    "angle_deg": 110.0,
    "sid_a": 1850.0,
    "sid_b": 1855.0,
    "detector_mm": 360.0,
    "width": 1664,
    "height": 1600,
}

DOMAIN_ERRORS = (
    GeometryError,
    ImagingError,
    ManifestError,
    MeshError,
    RenderError,
    D.DiscalError,
    SI.SicalError,
    S.SynthError,
    E.EvalError,
    FileNotFoundError,
    KeyError,
)


def common_options(f):
    f = click.option("--seed", type=int, default=0, show_default=True)(f)
    f = click.option("--out-dir", type=click.Path(), default=".", show_default=True)(f)
    f = click.option("--downscale", type=int, default=4, show_default=True)(f)
    return f


@click.group()
def cli():
    """Dual-plane fluoroscope calibration and 2D/3D registration toolkit."""


def _load_manifest(path: str) -> Manifest:
    return read_manifest(path)


def _mesh_from_manifest(man: Manifest):
    mesh_path = man.image_path(man.mesh)
    return load_mesh(mesh_path.read_bytes(), "stl-binary", name=mesh_path.name)


@cli.command()
@common_options
@click.option("--activity", type=click.Choice(sorted(S.activity_catalogue())), default="level_walk",
              show_default=True)
@click.option("--frames", type=int, default=10, show_default=True)
@click.option("--noise-preset", type=click.Choice(sorted(S.NOISE_PRESETS)), default="robot",
              show_default=True)
@click.option("--distort", is_flag=True, help="apply a synthetic intensifier distortion")
@click.option("--phantom", type=click.Choice(["condyle_pair", "tray_with_wings", "sphere", "box"]),
              default="condyle_pair", show_default=True)
def synth(seed, out_dir, downscale, activity, frames, noise_preset, distort, phantom):
    """Generate a synthetic trial set (images + manifest)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rig = build_rig(**DEFAULT_RIG)
    mesh = make_phantom(phantom)
    (out / "mesh.stl").write_bytes(save_stl_binary(mesh))
    template = S.activity_catalogue()[activity]
    poses = S.gen_trajectory(template, frames, seed=seed)
    noise = S.NOISE_PRESETS[noise_preset]
    noise = S.NoiseModel(noise.trans_sigma, noise.rot_sigma, seed=seed)
    dmap = _synthetic_distortion() if distort else None
    options = S.AcquireOptions(
        noise=noise,
        distortion=dmap,
        render=RenderConfig(blur_sigma=1.0, downscale=downscale),
        activity=activity,
        id_prefix=activity,
    )
    records = S.acquire_trial(mesh, poses, rig, out, options)
    man = Manifest(rig_params=DEFAULT_RIG, mesh="mesh.stl", seed=seed, records=records,
                   downscale=downscale, base_dir=str(out))
    write_manifest(man, out / "manifest.jsonl")
    click.echo(f"wrote {len(records)} trials to {out / 'manifest.jsonl'}")


def _synthetic_distortion() -> D.DistortionMap:
    # mild fixed cubic warp (<= ~4 px displacement at the frame corners)
    dmap = D.DistortionMap.identity(DEFAULT_RIG["width"], DEFAULT_RIG["height"])
    cx = dmap.coeffs_x.copy()
    cy = dmap.coeffs_y.copy()
    cx[6] = 0.003  # x^3
    cx[4] = -0.002  # x*y
    cy[9] = 0.003  # y^3
    cy[5] = 0.002  # y^2
    return D.DistortionMap(cx, cy, dmap.width, dmap.height)


@cli.command("discal")
@common_options
@click.option("--grid-image", type=click.Path(), required=True)
@click.option("--plane", type=click.Choice(["A", "B"]), default="A", show_default=True)
@click.option("--threshold", type=float, default=0.5, show_default=True)
def discal_cmd(seed, out_dir, downscale, grid_image, plane, threshold):
    """Fit a distortion map from a bead-grid image."""
    img = load_pgm(grid_image)
    h, w = img.shape
    blobs = detect_blobs(img, BlobConfig(threshold=threshold, min_area=4, max_area=5000))
    if len(blobs) < 10:
        raise D.DiscalError(f"only {len(blobs)} beads detected")
    detected = np.array([b[0] for b in blobs])
    spec = D.BeadGridSpec(center=(w / 2.0, h / 2.0), pitch=360.0 / w)
    corr = D.cpd_align(detected, D.ideal_grid(spec))
    dmap = D.fit_distortion(corr, (w, h))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"calibration_{plane}.txt"
    D.write_calibration(path, plane, dmap)
    click.echo(f"plane {plane}: {len(corr.detected)} correspondences, "
               f"rms {dmap.rms_px:.4f} px -> {path}")


@cli.command("sical")
@common_options
@click.option("--plate-image", type=click.Path(), required=True)
@click.option("--plane", type=click.Choice(["A", "B"]), default="A", show_default=True)
@click.option("--plate-diameter", type=float, default=200.0, show_default=True)
@click.option("--standoff", type=float, default=500.0, show_default=True)
def sical_cmd(seed, out_dir, downscale, plate_image, plane, plate_diameter, standoff):
    """Solve the source position from a plate-shadow image."""
    img = load_pgm(plate_image)
    h, w = img.shape
    fit = SI.fit_plate_shadow(img)
    spec = SI.PlatePhantomSpec(plate_diameter=plate_diameter, standoff=standoff)
    pitch = DEFAULT_RIG["detector_mm"] / w
    result = SI.solve_source(fit, spec, pitch, np.array([w / 2.0, h / 2.0]))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"calibration_{plane}.txt"
    if path.exists():
        D.append_sical(path, result.source_mm)
    else:
        D.write_calibration(path, plane, D.DistortionMap.identity(w, h), sical_source=result.source_mm)
    sx, sy, hh = result.source_mm
    click.echo(f"plane {plane}: source ({sx:.3f}, {sy:.3f}) mm lateral, H {hh:.3f} mm -> {path}")


@cli.command("register")
@common_options
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--steps", type=int, default=200, show_default=True)
@click.option("--lr", type=float, default=0.25, show_default=True)
def register_cmd(seed, out_dir, downscale, manifest_path, steps, lr):
    """Batch auto-registration over a manifest; writes auto poses back."""
    man = _load_manifest(manifest_path)
    rig = rig_from_params(man.rig_params)
    mesh = _mesh_from_manifest(man)
    cfg = RegistrationConfig(
        steps=steps, lr=lr, render=RenderConfig(blur_sigma=1.0, downscale=man.downscale)
    )
    for rec in man.records:
        targets = {
            "a": load_pgm(man.image_path(rec.image_a)),
            "b": load_pgm(man.image_path(rec.image_b)),
        }
        result = register(targets, mesh, rec.target_pose, rig, cfg)
        rec.auto_pose = result.pose
        click.echo(f"{rec.trial_id}: ncc a={result.final_ncc['a']:.4f} "
                   f"b={result.final_ncc['b']:.4f} ({result.wall_time:.1f}s)")
    write_manifest(man, manifest_path)


@cli.command("evaluate")
@common_options
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--probes", type=int, default=5, show_default=True,
              help="repeatability probe count")
def evaluate_cmd(seed, out_dir, downscale, manifest_path, probes):
    """Percentile, MAE and repeatability reports (CSV/JSON)."""
    man = _load_manifest(manifest_path)
    rig = rig_from_params(man.rig_params)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = E.error_percentiles(man.records, rig)
    (out / "percentiles.csv").write_text(E.percentiles_csv(tables))
    mae = E.mae_summary(man.records, rig)
    (out / "mae.json").write_text(json.dumps(mae, indent=2, sort_keys=True) + "\n")
    mesh = _mesh_from_manifest(man)
    jitter = S.NOISE_PRESETS["robot-repeatability"]
    images = S.repeatability_probe(
        mesh, man.records[0].true_pose, rig, probes,
        S.NoiseModel(jitter.trans_sigma, jitter.rot_sigma, seed=seed),
        render_cfg=RenderConfig(blur_sigma=1.0, downscale=man.downscale),
    )
    rep = E.repeatability_report(images)
    lines = ["i,j,ncc"]
    n = len(images)
    for i in range(n):
        for j in range(n):
            lines.append(f"{i},{j},{rep['ncc_matrix'][i, j]:.15g}")
    lines.append(f"min,,{rep['min_ncc']:.15g}")
    lines.append(f"pass,,{int(rep['passed'])}")
    (out / "repeatability.csv").write_text("\n".join(lines) + "\n")
    click.echo(json.dumps(mae, sort_keys=True))
    click.echo(f"repeatability min NCC {rep['min_ncc']:.4f} "
               f"({'pass' if rep['passed'] else 'fail'})")


@cli.command("serve")
@common_options
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--port", type=int, default=8701, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve_cmd(seed, out_dir, downscale, manifest_path, port, host):
    """Start the manual-registration HTTP service."""
    import uvicorn

    from .server import create_app

    app = create_app(manifest_path)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.UsageError as e:
        click.echo(f"usage error: {e.format_message()}", err=True)
        return 2
    except click.exceptions.Abort:
        return 2
    except click.exceptions.ClickException as e:
        e.show()
        return 1
    except DOMAIN_ERRORS as e:
        click.echo(f"error: {e}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
