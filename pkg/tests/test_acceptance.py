"""End-to-end acceptance gates for the whole toolkit.

Each test covers one release criterion and prints a single PASS/FAIL line
with the measured values, so the suite output doubles as the acceptance
report.  Tolerances are part of the contract; do not loosen them to make a
failing build green.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from fluororeg.discal import (
    BeadGridSpec,
    Correspondences,
    DistortionMap,
    cpd_align,
    distort_points,
    fit_distortion,
    ideal_grid,
    undistort_points,
    write_calibration,
)
from fluororeg.evalharness import (
    error_percentiles,
    percentiles_csv,
    repeatability_report,
)
from fluororeg.geometry import (
    RigidPose,
    build_rig,
    format_pose_line,
    geodesic_angle,
    inplane_l1,
    parse_pose_line,
    quat_from_axis_angle,
)
from fluororeg.imaging import load_pgm, ncc, save_pgm
from fluororeg.manifest import Manifest, read_manifest, write_manifest
from fluororeg.mesh import make_phantom
from fluororeg.optim import OptimConfig, adam_minimize, finite_diff_grad, powell_minimize
from fluororeg.registration import (
    RegistrationConfig,
    evaluate_errors,
    register,
    registration_loss,
)
from fluororeg.render import RenderConfig, count_hits, render
from fluororeg.sical import PlatePhantomSpec, fit_circle, solve_source
from fluororeg.synthgen import (
    DEFAULT_MEAN_T,
    NOISE_PRESETS,
    NoiseModel,
    TrialRecord,
    activity_catalogue,
    gen_trajectory,
    perturb_pose,
    repeatability_probe,
)

GOLDEN_DIR = Path(__file__).parent / "golden"
RIG_ARGS = (110, 1850, 1855, 360, 1664, 1600)


def _report(name, passed, detail):
    verdict = "PASS" if passed else "FAIL"
    print(f"[ACCEPTANCE] {name}: {verdict} ({detail})")
    assert passed, f"{name}: {detail}"


@pytest.fixture(scope="module")
def rig():
    return build_rig(*RIG_ARGS)


# --- criterion 1: end-to-end dual-plane registration ---


class TestEndToEndRegistration:
    def test_noise_model_calibration(self, rig):
        # the robot-noise preset must place the 65th percentile of the
        # target-pose in-plane L1 error at 2.5 +/- 0.2 mm
        rng = np.random.default_rng(1234)
        base = RigidPose(np.array([1.0, 0, 0, 0]), np.array(DEFAULT_MEAN_T))
        noise = NOISE_PRESETS["robot"]
        l1 = [inplane_l1(perturb_pose(base, noise, rng), base, rig) for _ in range(20_000)]
        p65 = float(np.percentile(l1, 65))
        _report("registration noise calibration", abs(p65 - 2.5) <= 0.2,
                f"65th percentile in-plane L1 {p65:.3f} mm, gate 2.5 +/- 0.2")

    def test_fifty_trial_recovery(self, rig):
        mesh = make_phantom("condyle_pair")
        cfg = RegistrationConfig(steps=200, lr=0.25)
        noise = NOISE_PRESETS["robot"]
        rng = np.random.default_rng(2024)
        poses = gen_trajectory(activity_catalogue()["level_walk"], 50, seed=11)
        t0 = time.perf_counter()
        mm, deg = [], []
        for true in poses:
            targets = {p: render(mesh, true, cam, cfg.render) for p, cam in rig.cameras().items()}
            init = perturb_pose(true, noise, rng)
            res = register(targets, mesh, init, rig, cfg)
            err = evaluate_errors(res.pose, true, rig)
            mm.append(err.inplane_l1)
            deg.append(err.geodesic)
        elapsed = time.perf_counter() - t0
        mm = np.array(mm)
        deg = np.array(deg)
        hit_rate = float(((mm < 1.0) & (deg < 1.0)).mean())
        mae_mm = float(mm.mean())
        mae_deg = float(deg.mean())
        ok = hit_rate >= 0.80 and mae_mm <= 1.0 and mae_deg <= 1.0 and elapsed <= 900.0
        _report("end-to-end registration", ok,
                f"hit rate {hit_rate:.0%} (gate 80%), MAE {mae_mm:.3f} mm / "
                f"{mae_deg:.3f} deg (gate 1.0/1.0), {elapsed:.0f} s (gate 900)")


# --- criterion 2: distortion-calibration round trip ---


class TestDistortionCalibration:
    def test_twenty_warp_round_trip(self):
        spec = BeadGridSpec()
        grid = ideal_grid(spec)
        base = DistortionMap.identity(1664, 1600)
        rng = np.random.default_rng(42)
        scale = 5.0 / 832.0 / 10.0  # ~5 px max displacement across the field
        t0 = time.perf_counter()
        rms_exact, rms_noisy = [], []
        last_warped = None
        for _ in range(20):
            dmap = DistortionMap(base.coeffs_x + rng.uniform(-scale, scale, 10),
                                 base.coeffs_y + rng.uniform(-scale, scale, 10),
                                 1664, 1600)
            warped = distort_points(grid, dmap)
            last_warped = warped
            corr = cpd_align(warped, grid)
            fit = fit_distortion(corr, (1664, 1600))
            err = undistort_points(warped, fit) - grid
            rms_exact.append(math.sqrt(float((err**2).sum(axis=1).mean())))
            noisy = Correspondences(
                corr.detected + rng.normal(0.0, 0.05, corr.detected.shape),
                corr.ideal, corr.outlier_count, corr.mean_residual)
            fitn = fit_distortion(noisy, (1664, 1600))
            errn = undistort_points(warped, fitn) - grid
            rms_noisy.append(math.sqrt(float((errn**2).sum(axis=1).mean())))

        # correspondence quality with 2% of the beads removed
        keep = np.ones(len(grid), dtype=bool)
        keep[rng.choice(len(grid), size=int(0.02 * len(grid)), replace=False)] = False
        corr = cpd_align(last_warped[keep], grid)
        origin = {tuple(p): i for i, p in enumerate(np.round(last_warped, 9))}
        good = sum(bool(np.allclose(grid[origin[tuple(d)]], i))
                   for d, i in zip(np.round(corr.detected, 9), corr.ideal))
        match_frac = good / len(corr.detected)
        elapsed = time.perf_counter() - t0

        ok = (max(rms_exact) < 0.05 and max(rms_noisy) < 0.15
              and match_frac >= 0.97 and elapsed <= 60.0)
        _report("distortion calibration round trip", ok,
                f"exact RMS max {max(rms_exact):.2g} px (gate 0.05), noisy RMS max "
                f"{max(rms_noisy):.3f} px (gate 0.15), matches {match_frac:.1%} "
                f"(gate 97%), {elapsed:.0f} s (gate 60)")


# --- criterion 3: source-calibration round trip ---


class TestSourceCalibration:
    PITCH = 360.0 / 1664.0
    PRINCIPAL = np.array([832.0, 800.0])

    def rim_points(self, source, noise_px=0.0, rng=None):
        sx, sy, h = source
        spec = PlatePhantomSpec()  # 200 mm plate, 500 mm standoff
        t = h / (h - spec.standoff)
        th = np.linspace(0.0, 2.0 * math.pi, 360, endpoint=False)
        rim = np.stack([100.0 * np.cos(th), 100.0 * np.sin(th)], axis=1)
        xy_mm = (1.0 - t) * np.array([sx, sy]) + t * rim
        pts = xy_mm / self.PITCH + self.PRINCIPAL
        if noise_px:
            center = xy_mm.mean(axis=0) / self.PITCH + self.PRINCIPAL
            d = pts - center
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            pts = pts + d * rng.normal(scale=noise_px, size=(len(pts), 1))
        return pts

    def solve(self, pts):
        res = solve_source(fit_circle(pts), PlatePhantomSpec(), self.PITCH, self.PRINCIPAL)
        return res.source_mm

    def test_fifty_source_round_trip(self):
        rng = np.random.default_rng(7)
        t0 = time.perf_counter()
        err_h, err_xy, nerr_h, nerr_xy = [], [], [], []
        for _ in range(50):
            r = 20.0 * math.sqrt(rng.uniform())
            a = rng.uniform(0.0, 2.0 * math.pi)
            source = np.array([r * math.cos(a), r * math.sin(a), rng.uniform(1700.0, 2000.0)])
            got = self.solve(self.rim_points(source))
            err_h.append(abs(got[2] - source[2]))
            err_xy.append(float(np.abs(got[:2] - source[:2]).max()))
            noisy = self.solve(self.rim_points(source, noise_px=0.2, rng=rng))
            nerr_h.append(abs(noisy[2] - source[2]))
            nerr_xy.append(float(np.abs(noisy[:2] - source[:2]).max()))
        elapsed = time.perf_counter() - t0
        ok = (max(err_h) < 1.0 and max(err_xy) < 0.2
              and float(np.median(nerr_h)) < 5.0 and float(np.median(nerr_xy)) < 1.0
              and elapsed <= 60.0)
        _report("source calibration round trip", ok,
                f"noiseless max {max(err_h):.3f} mm H / {max(err_xy):.3f} mm lateral "
                f"(gates 1.0/0.2), noisy median {np.median(nerr_h):.2f} mm H / "
                f"{np.median(nerr_xy):.3f} mm lateral (gates 5.0/1.0), "
                f"{elapsed:.1f} s (gate 60)")


# --- criterion 4: repeatability gate ---


class TestRepeatabilityGate:
    def test_gate_separates_jitter_levels(self, rig):
        mesh = make_phantom("sphere", radius=15.0, subdivisions=2)
        pose = RigidPose(np.array([1.0, 0, 0, 0]), np.array(DEFAULT_MEAN_T))
        tight = repeatability_report(
            repeatability_probe(mesh, pose, rig, 4, NOISE_PRESETS["robot-repeatability"]))
        loose = repeatability_report(
            repeatability_probe(mesh, pose, rig, 4, NoiseModel(trans_sigma=5.0, seed=1)))
        ok = tight["passed"] and tight["min_ncc"] >= 0.985 and not loose["passed"]
        _report("repeatability gate", ok,
                f"0.05 mm jitter min NCC {tight['min_ncc']:.4f} (gate >= 0.985), "
                f"5 mm jitter min NCC {loose['min_ncc']:.4f} (must fail)")


# --- criterion 5: property suites ---


class TestPropertySuites:
    def test_geodesic_metric_and_oracle(self):
        rng = np.random.default_rng(3)
        def rand_pose():
            return RigidPose(rng.normal(size=4), np.zeros(3))
        worst = 0.0
        for _ in range(200):
            a, b, c = rand_pose(), rand_pose(), rand_pose()
            assert geodesic_angle(a, a) < 1e-12
            assert abs(geodesic_angle(a, b) - geodesic_angle(b, a)) < 1e-9
            assert geodesic_angle(a, c) <= geodesic_angle(a, b) + geodesic_angle(b, c) + 1e-9
            # independent oracle: angle of the relative quaternion
            qa, qb = a.q, b.q
            conj = np.array([qa[0], -qa[1], -qa[2], -qa[3]])
            w = conj[0] * qb[0] - conj[1] * qb[1] - conj[2] * qb[2] - conj[3] * qb[3]
            v = np.array([
                conj[0] * qb[1] + conj[1] * qb[0] + conj[2] * qb[3] - conj[3] * qb[2],
                conj[0] * qb[2] - conj[1] * qb[3] + conj[2] * qb[0] + conj[3] * qb[1],
                conj[0] * qb[3] + conj[1] * qb[2] - conj[2] * qb[1] + conj[3] * qb[0],
            ])
            oracle = math.degrees(2.0 * math.atan2(float(np.linalg.norm(v)), abs(float(w))))
            worst = max(worst, abs(geodesic_angle(a, b) - oracle))
        _report("geodesic metric properties", worst < 1e-9,
                f"200 random pairs, worst oracle gap {worst:.2g} deg (gate 1e-9)")

    def test_ncc_affine_invariance_and_symmetry(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(50):
            a = rng.uniform(size=(24, 24))
            b = rng.uniform(size=(24, 24))
            worst = max(worst, abs(ncc(a, b) - ncc(b, a)))
            worst = max(worst, abs(ncc(2.5 * a + 3.0, b) - ncc(a, b)))
        _report("NCC affine invariance and symmetry", worst < 1e-9,
                f"50 random pairs, worst deviation {worst:.2g} (gate 1e-9)")

    def test_renderer_parity_and_bvh_equivalence(self, rig):
        mesh = make_phantom("sphere", radius=15.0, subdivisions=2)
        cam = rig.camera_a
        rng = np.random.default_rng(5)
        cfg = RenderConfig(blur_sigma=0.0, downscale=8)
        identical = 0
        for _ in range(5):
            pose = RigidPose(
                rng.normal(size=4),
                np.array(DEFAULT_MEAN_T) + rng.normal(scale=5.0, size=3))
            a = render(mesh, pose, cam, cfg, use_bvh=True)
            b = render(mesh, pose, cam, cfg, use_bvh=False)
            identical += int(np.array_equal(a, b))
        # hit-count parity: every ray from outside a watertight mesh crosses
        # the surface an even number of times
        origin = np.array([0.0, 0.0, 200.0])
        dirs = rng.normal(size=(500, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        hits = count_hits(mesh, origin, dirs)
        parity_ok = bool((hits % 2 == 0).all())
        ok = identical == 5 and parity_ok
        _report("renderer BVH equivalence and parity", ok,
                f"{identical}/5 scenes bit-identical BVH vs linear sweep, "
                f"even hit parity {parity_ok}")

    def test_fd_step_halving(self, rig):
        mesh = make_phantom("condyle_pair")
        cfg = RegistrationConfig(
            render=RenderConfig(mode="thickness", mu=0.05, blur_sigma=1.0,
                                downscale=4, supersample=2))
        init = RigidPose(np.array([1.0, 0, 0, 0]), np.array(DEFAULT_MEAN_T))
        targets = {p: render(mesh, init, cam, cfg.render) for p, cam in rig.cameras().items()}
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(10):
            p = rng.normal(scale=1.5, size=6)
            f = lambda x: registration_loss(x, mesh, rig, targets, cfg, init)
            g1 = finite_diff_grad(f, p, cfg.fd_step)
            g2 = finite_diff_grad(f, p, cfg.fd_step / 2.0)
            floor = 0.05 * np.abs(g2).max()
            rel = np.abs(g1 - g2) / np.maximum(np.maximum(np.abs(g1), np.abs(g2)), floor)
            worst = max(worst, float(rel.max()))
        _report("finite-difference step-halving", worst <= 0.05,
                f"10 random poses, worst relative gap {worst:.3f} (gate 0.05)")

    def test_powell_at_least_ls_quality(self):
        grid = ideal_grid(BeadGridSpec(rows=10, cols=10))
        rng = np.random.default_rng(6)
        base = DistortionMap.identity(1664, 1600)
        scale = 5.0 / 832.0 / 10.0
        dmap = DistortionMap(base.coeffs_x + rng.uniform(-scale, scale, 10),
                             base.coeffs_y + rng.uniform(-scale, scale, 10), 1664, 1600)
        warped = distort_points(grid, dmap) + rng.normal(0.0, 0.05, (len(grid), 2))
        corr = Correspondences(warped, grid, 0, 0.0)
        fit = fit_distortion(corr, (1664, 1600))
        # linear least-squares residual on the same basis
        hx, hy = 832.0, 800.0
        nx, ny = (warped[:, 0] - hx) / hx, (warped[:, 1] - hy) / hy
        from fluororeg.discal import _basis
        b = _basis(nx, ny)
        cx, *_ = np.linalg.lstsq(b, (grid[:, 0] - hx) / hx, rcond=None)
        cy, *_ = np.linalg.lstsq(b, (grid[:, 1] - hy) / hy, rcond=None)
        rx = (b @ cx - (grid[:, 0] - hx) / hx) * hx
        ry = (b @ cy - (grid[:, 1] - hy) / hy) * hy
        ls_mse = float((rx @ rx + ry @ ry) / len(rx))
        gap = 2.0 * fit.rms_px**2 - ls_mse
        _report("Powell refinement vs least squares", gap <= 1e-6,
                f"Powell MSE - LS MSE = {gap:.2g} (gate 1e-6)")

    def test_optimizer_determinism(self):
        def f(x):
            return float((x - 2.0) @ (x - 2.0))

        def g(x):
            return finite_diff_grad(f, x, 1e-5)

        cfg = OptimConfig(max_iters=40, lr=0.1)
        xa, ta = adam_minimize(g, np.zeros(3), cfg, f=f)
        xb, tb = adam_minimize(g, np.zeros(3), cfg, f=f)
        pa, _ = powell_minimize(f, np.zeros(3), OptimConfig(max_iters=10))
        pb, _ = powell_minimize(f, np.zeros(3), OptimConfig(max_iters=10))
        ok = (np.array_equal(xa, xb) and ta.objective == tb.objective
              and np.array_equal(pa, pb))
        _report("optimizer determinism", ok,
                "identical traces for repeated ADAM and Powell runs")

    def test_io_determinism_and_atomicity(self, tmp_path):
        rng = np.random.default_rng(8)
        img = rng.uniform(size=(20, 24))
        save_pgm(img, tmp_path / "a.pgm")
        save_pgm(load_pgm(tmp_path / "a.pgm"), tmp_path / "b.pgm")
        pgm_ok = (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

        man = _golden_manifest()
        write_manifest(man, tmp_path / "m1.jsonl")
        write_manifest(read_manifest(tmp_path / "m1.jsonl"), tmp_path / "m2.jsonl")
        man_ok = (tmp_path / "m1.jsonl").read_bytes() == (tmp_path / "m2.jsonl").read_bytes()

        # fault injection: a failed replace must leave the original intact
        original = (tmp_path / "m1.jsonl").read_bytes()
        real_replace = os.replace

        def boom(*a, **kw):
            raise OSError("injected")

        os.replace = boom
        try:
            with pytest.raises(OSError):
                write_manifest(man, tmp_path / "m1.jsonl")
        finally:
            os.replace = real_replace
        atomic_ok = (tmp_path / "m1.jsonl").read_bytes() == original

        ok = pgm_ok and man_ok and atomic_ok
        _report("I/O determinism and atomicity", ok,
                f"PGM rewrite {pgm_ok}, manifest rewrite {man_ok}, "
                f"fault injection {atomic_ok}")


# --- criterion 6: byte-exact format goldens ---


def _golden_pose() -> RigidPose:
    return RigidPose(np.array([2.0, 1.0, -2.0, 0.0]) / 3.0,
                     np.array([98.3, -12.25, 68.9]))


def _golden_pose_line() -> bytes:
    return (format_pose_line(_golden_pose()) + "\n").encode()


def _golden_calibration(path) -> None:
    cx = np.zeros(10)
    cy = np.zeros(10)
    cx[1] = 1.0009765625
    cx[4] = -0.00048828125
    cy[2] = 0.999755859375
    cy[7] = 0.0001220703125
    dmap = DistortionMap(cx, cy, 1664, 1600, rms_px=0.0123456789)
    write_calibration(path, "A", dmap, sical_source=np.array([1.5, -2.25, 1850.0]))


def _golden_records():
    lines = [
        ("t_0000", "level_walk", 0,
         "1 0 0 0 98.3 0 68.9", "0.999 0.01 0.02 -0.03 98.5 0.25 68.75", None, None),
        ("t_0001", "level_walk", 1,
         "0.92 0.2 -0.3 0.1 97 -1.5 70.25", "0.93 0.18 -0.31 0.09 96.5 -1 70",
         "0.925 0.19 -0.3 0.1 96.75 -1.25 70.125", None),
        ("t_0002", "stair_descent", 2,
         "0.8 -0.4 0.4 -0.2 100 2.5 67", "0.81 -0.39 0.41 -0.19 100.5 2 67.5",
         None, "0.805 -0.4 0.4 -0.2 100.25 2.25 67.25"),
    ]
    records = []
    for tid, act, idx, true, target, auto, manual in lines:
        records.append(TrialRecord(
            trial_id=tid, activity=act, frame_index=idx,
            true_pose=parse_pose_line(true), target_pose=parse_pose_line(target),
            image_a=f"{tid}_a.pgm", image_b=f"{tid}_b.pgm",
            auto_pose=parse_pose_line(auto) if auto else None,
            manual_pose=parse_pose_line(manual) if manual else None,
            manual_ncc={"a": 0.987, "b": 0.9765} if manual else None,
        ))
    return records


def _golden_manifest() -> Manifest:
    return Manifest(
        rig_params={"angle_deg": 110.0, "sid_a": 1850.0, "sid_b": 1855.0,
                    "detector_mm": 360.0, "width": 1664, "height": 1600},
        mesh="mesh.stl",
        seed=17,
        records=_golden_records(),
        downscale=4,
    )


def _golden_percentiles_csv(rig) -> bytes:
    return percentiles_csv(error_percentiles(_golden_records(), rig)).encode()


def _golden_pgm_image() -> np.ndarray:
    # 8x6 ramp exercising the full 16-bit range including both endpoints
    return (np.arange(48, dtype=float).reshape(6, 8) / 47.0)


class TestFormatGoldens:
    def _check(self, name, produced: bytes):
        golden = (GOLDEN_DIR / name).read_bytes()
        return produced == golden

    def test_all_formats_byte_exact(self, rig, tmp_path):
        results = {}
        results["pose_line.txt"] = self._check("pose_line.txt", _golden_pose_line())

        _golden_calibration(tmp_path / "cal.txt")
        results["calibration_A.txt"] = self._check(
            "calibration_A.txt", (tmp_path / "cal.txt").read_bytes())

        write_manifest(_golden_manifest(), tmp_path / "manifest.jsonl")
        results["manifest.jsonl"] = self._check(
            "manifest.jsonl", (tmp_path / "manifest.jsonl").read_bytes())

        results["percentiles.csv"] = self._check(
            "percentiles.csv", _golden_percentiles_csv(rig))

        save_pgm(_golden_pgm_image(), tmp_path / "ramp.pgm")
        results["ramp.pgm"] = self._check("ramp.pgm", (tmp_path / "ramp.pgm").read_bytes())
        # and the PGM must decode back to the identical 16-bit quantization
        back = load_pgm(tmp_path / "ramp.pgm")
        save_pgm(back, tmp_path / "ramp2.pgm")
        results["pgm-roundtrip"] = (
            (tmp_path / "ramp.pgm").read_bytes() == (tmp_path / "ramp2.pgm").read_bytes())

        failed = [k for k, v in results.items() if not v]
        _report("format goldens", not failed,
                f"{len(results) - len(failed)}/{len(results)} byte-exact"
                + (f", failed: {failed}" if failed else ""))
