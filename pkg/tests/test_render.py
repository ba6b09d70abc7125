import math

import numpy as np
import pytest

from fluororeg.geometry import RigidPose, build_rig
from fluororeg.imaging import gaussian_blur
from fluororeg.mesh import TriMesh, make_phantom
from fluororeg.render import (
    MODE_ANYHIT,
    MODE_CHORD,
    MODE_COUNT,
    NotWatertight,
    RenderConfig,
    RenderError,
    cast_rays,
    count_hits,
    pose_verts,
    render,
    render_ex,
)


@pytest.fixture(scope="module")
def rig():
    return build_rig(110, 1850, 1855, 360, 1664, 1600)


@pytest.fixture(scope="module")
def small_cam():
    # 128x128 detector, 0.5 mm/px: cheap enough for brute-force comparisons
    return build_rig(90, 400, 400, 64, 128, 128).camera_a


@pytest.fixture(scope="module")
def sphere20():
    return make_phantom("sphere", radius=20.0, subdivisions=3)


def pose_at(t):
    return RigidPose(np.array([1.0, 0, 0, 0]), np.asarray(t, dtype=np.float64))


class TestRenderExamples:
    def test_outside_frustum_all_zero(self, small_cam, sphere20):
        img = render(sphere20, pose_at([5000.0, 0, 200]), small_cam,
                     RenderConfig(blur_sigma=0.0))
        assert img.shape == (128, 128)
        assert not img.any()

    def test_sphere_disc_area(self, rig, sphere20):
        # sphere center 500 mm above the detector on the principal ray:
        # magnified disc radius 20 * 1850 / 1350 mm on the detector
        img = render(sphere20, pose_at([0, 0, 500.0]), rig.camera_a,
                     RenderConfig(blur_sigma=0.0))
        r_px = 20.0 * 1850.0 / 1350.0 / rig.camera_a.pixel_pitch
        assert abs(r_px - 126.7) < 0.1
        want = math.pi * r_px**2
        assert abs(img.sum() - want) / want < 0.01

    def test_thickness_center_chord(self, rig, sphere20):
        mu = 0.05
        img = render(sphere20, pose_at([0, 0, 500.0]), rig.camera_a,
                     RenderConfig(mode="thickness", mu=mu, blur_sigma=0.0))
        want = 1.0 - math.exp(-mu * 40.0)
        assert abs(img[800, 832] - want) < 1e-3

    def test_thickness_open_mesh_rejected(self, small_cam, sphere20):
        open_mesh = TriMesh(sphere20.vertices, sphere20.faces[:-1])
        with pytest.raises(NotWatertight):
            render(open_mesh, pose_at([0, 0, 200.0]), small_cam,
                   RenderConfig(mode="thickness"))

    def test_output_size_downscale(self, rig, sphere20):
        img = render(sphere20, pose_at([0, 0, 500.0]), rig.camera_a,
                     RenderConfig(downscale=4))
        assert img.shape == (400, 416)


class TestParity:
    @pytest.mark.parametrize("kind,params", [("sphere", {"radius": 15.0, "subdivisions": 2}),
                                             ("box", {"sx": 20, "sy": 30, "sz": 10})])
    def test_even_hit_counts(self, kind, params):
        mesh = make_phantom(kind, **params)
        rng = np.random.default_rng(0)
        origin = np.array([0.0, 0.0, 300.0])
        targets = rng.uniform(-25.0, 25.0, size=(10_000, 3))
        dirs = targets - origin
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        counts = count_hits(mesh, origin, dirs)
        odd = counts % 2 != 0
        assert not odd.any(), f"{int(odd.sum())} rays with odd intersection parity"


class TestInvariants:
    def test_rigid_equivariance(self, small_cam):
        mesh = make_phantom("condyle_pair")
        rng = np.random.default_rng(1)
        for _ in range(5):
            pose = RigidPose(rng.normal(size=4),
                             np.array([rng.uniform(-10, 10), rng.uniform(-10, 10),
                                       rng.uniform(150, 250)]))
            moved = TriMesh(pose_verts(mesh, pose), mesh.faces,
                            watertight=mesh.watertight)
            a = render(mesh, pose, small_cam, RenderConfig(blur_sigma=0.0))
            b = render(moved, RigidPose.identity(), small_cam, RenderConfig(blur_sigma=0.0))
            assert np.abs(a - b).max() <= 1e-6

    def test_downscale_block_average(self, small_cam, sphere20):
        pose = pose_at([3.0, -2.0, 200.0])
        full = render(sphere20, pose, small_cam, RenderConfig(blur_sigma=0.0))
        half = render(sphere20, pose, small_cam,
                      RenderConfig(blur_sigma=0.0, downscale=2, supersample=2))
        block = full.reshape(64, 2, 64, 2).mean(axis=(1, 3))
        assert np.abs(half - block).max() <= 1e-6

    def test_bvh_matches_linear_bit_identical(self, small_cam):
        rng = np.random.default_rng(2)
        for i in range(20):
            mesh = make_phantom("sphere", radius=rng.uniform(5, 20), subdivisions=1)
            pose = RigidPose(rng.normal(size=4),
                             np.array([rng.uniform(-20, 20), rng.uniform(-20, 20),
                                       rng.uniform(120, 280)]))
            mode = "thickness" if i % 2 else "silhouette"
            a = render(mesh, pose, small_cam, RenderConfig(mode=mode, blur_sigma=0.0),
                       use_bvh=True)
            b = render(mesh, pose, small_cam, RenderConfig(mode=mode, blur_sigma=0.0),
                       use_bvh=False)
            assert np.array_equal(a, b)

    def test_blur_equals_full_image_blur(self, small_cam, sphere20):
        pose = pose_at([0.0, 0.0, 200.0])
        sharp = render(sphere20, pose, small_cam, RenderConfig(blur_sigma=0.0))
        blurred = render(sphere20, pose, small_cam, RenderConfig(blur_sigma=1.5))
        assert np.abs(blurred - gaussian_blur(sharp, 1.5)).max() < 1e-12

    def test_bbox_covers_nonzero(self, small_cam, sphere20):
        img, (x0, y0, x1, y1) = render_ex(sphere20, pose_at([10.0, -5.0, 200.0]),
                                          small_cam, RenderConfig(blur_sigma=1.0))
        ys, xs = np.nonzero(img)
        assert ys.size > 0
        assert x0 <= xs.min() and xs.max() < x1
        assert y0 <= ys.min() and ys.max() < y1


class TestKernels:
    def ray_bundle(self, n=2000, seed=3):
        rng = np.random.default_rng(seed)
        origin = np.array([5.0, -3.0, 250.0])
        targets = rng.uniform(-25.0, 25.0, size=(n, 3))
        dirs = targets - origin
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return origin, dirs

    def test_fallback_matches_compiled(self):
        compiled = pytest.importorskip("fluororeg._raycast")
        from fluororeg import _raycast_py as fallback
        from fluororeg.render import build_bvh

        mesh = make_phantom("condyle_pair")
        bvh = build_bvh(mesh)
        origin, dirs = self.ray_bundle()
        for mode in (MODE_ANYHIT, MODE_CHORD, MODE_COUNT):
            a = compiled.cast(origin, dirs, bvh.v0, bvh.e1, bvh.e2,
                              bvh.bounds, bvh.meta, mode)
            b = fallback.cast(origin, dirs, bvh.v0, bvh.e1, bvh.e2,
                              bvh.bounds, bvh.meta, mode)
            if mode == MODE_CHORD:
                assert np.abs(np.asarray(a) - np.asarray(b)).max() < 1e-9
            else:
                assert np.array_equal(a, b)

    def test_chord_nonnegative_and_bounded(self, sphere20):
        origin, dirs = self.ray_bundle(seed=4)
        chord = cast_rays(sphere20, origin, dirs, MODE_CHORD)
        assert (chord >= 0).all()
        assert chord.max() <= 40.0 + 1e-9


class TestConfig:
    def test_invalid(self):
        with pytest.raises(RenderError):
            RenderConfig(mode="wireframe")
        with pytest.raises(RenderError):
            RenderConfig(mode="thickness", mu=0.0)
        with pytest.raises(RenderError):
            RenderConfig(supersample=3)
        with pytest.raises(RenderError):
            RenderConfig(downscale=0)
