#!/usr/bin/env python3
"""Benchmark the ray-cast renderer: compiled kernel vs numpy fallback.

The kernel is chosen at import time, so the comparison runs this script
twice in subprocesses — once normally and once with
FLUOROREG_FORCE_FALLBACK=1 — and reports both timings and the speedup.

Usage: python benchmarks/bench_render.py [--frames N] [--downscale D]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def measure(frames: int, downscale: int) -> dict:
    import numpy as np

    from fluororeg import render as R
    from fluororeg.geometry import RigidPose, build_rig
    from fluororeg.mesh import make_phantom
    from fluororeg.render import RenderConfig, render
    from fluororeg.synthgen import DEFAULT_MEAN_T

    rig = build_rig(110, 1850, 1855, 360, 1664, 1600)
    mesh = make_phantom("condyle_pair")
    rng = np.random.default_rng(0)
    poses = [
        RigidPose(rng.normal(size=4), np.array(DEFAULT_MEAN_T) + rng.normal(scale=3.0, size=3))
        for _ in range(frames)
    ]
    results = {}
    for mode in ("silhouette", "thickness"):
        cfg = RenderConfig(mode=mode, mu=0.05, blur_sigma=1.0, downscale=downscale)
        render(mesh, poses[0], rig.camera_a, cfg)  # warm up (BVH build, caches)
        t0 = time.perf_counter()
        px = 0
        for pose in poses:
            for cam in rig.cameras().values():
                img = render(mesh, pose, cam, cfg)
                px += img.size
        dt = time.perf_counter() - t0
        results[mode] = {"seconds": dt, "renders": frames * 2, "pixels_per_s": px / dt}
    results["kernel"] = "compiled" if R.USING_COMPILED_KERNEL else "fallback"
    return results


def run_child(frames: int, downscale: int, force_fallback: bool) -> dict:
    env = dict(os.environ)
    if force_fallback:
        env["FLUOROREG_FORCE_FALLBACK"] = "1"
    else:
        env.pop("FLUOROREG_FORCE_FALLBACK", None)
    out = subprocess.run(
        [sys.executable, __file__, "--single", "--frames", str(frames),
         "--downscale", str(downscale)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=10, help="poses to render per kernel")
    ap.add_argument("--downscale", type=int, default=4)
    ap.add_argument("--single", action="store_true",
                    help="measure with the currently selected kernel and print JSON")
    args = ap.parse_args()

    if args.single:
        print(json.dumps(measure(args.frames, args.downscale)))
        return

    compiled = run_child(args.frames, args.downscale, force_fallback=False)
    fallback = run_child(args.frames, args.downscale, force_fallback=True)

    print(f"renders per kernel: {args.frames} poses x 2 planes, downscale {args.downscale}")
    print(f"{'mode':<12} {'compiled s':>11} {'fallback s':>11} {'speedup':>8}")
    for mode in ("silhouette", "thickness"):
        c = compiled[mode]["seconds"]
        f = fallback[mode]["seconds"]
        print(f"{mode:<12} {c:>11.3f} {f:>11.3f} {f / c:>7.1f}x")
    if compiled["kernel"] != "compiled":
        print("note: compiled extension not available; both runs used the numpy fallback")


if __name__ == "__main__":
    main()
