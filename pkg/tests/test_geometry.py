import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from leap3d.errors import GeometryError, ParameterError
from leap3d.geometry import (CameraIntrinsics, PointCloud, RigidTransform, compose,
                             intrinsics_from_projection_matrix, project)


def random_rigid(rng) -> RigidTransform:
    rot = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(rot, rng.normal(size=3))


class TestRigidTransform:
    def test_identity_compose(self):
        rng = np.random.default_rng(0)
        t = random_rigid(rng)
        out = compose(RigidTransform.identity(), t)
        np.testing.assert_array_equal(out.rotation, t.rotation)
        np.testing.assert_array_equal(out.translation, t.translation)

    def test_inverse(self):
        rng = np.random.default_rng(1)
        t = random_rigid(rng)
        ident = compose(t, t.inverse())
        assert np.max(np.abs(ident.rotation - np.eye(3))) < 1e-9
        assert np.max(np.abs(ident.translation)) < 1e-9

    def test_translations_add(self):
        t1 = RigidTransform(np.eye(3), [1.0, 2.0, 3.0])
        t2 = RigidTransform(np.eye(3), [0.5, -1.0, 4.0])
        np.testing.assert_array_equal(compose(t1, t2).translation, [1.5, 1.0, 7.0])

    def test_associative(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b, c = (random_rigid(rng) for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.max(np.abs(left.rotation - right.rotation)) < 1e-9
            assert np.max(np.abs(left.translation - right.translation)) < 1e-9

    def test_apply_matches_compose(self):
        rng = np.random.default_rng(3)
        a, b = random_rigid(rng), random_rigid(rng)
        x = rng.normal(size=(10, 3))
        np.testing.assert_allclose(compose(a, b).apply(x), a.apply(b.apply(x)), atol=1e-12)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(GeometryError):
            RigidTransform(np.eye(3) * 1.01, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(GeometryError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_immutable(self):
        t = RigidTransform.identity()
        with pytest.raises(AttributeError):
            t.translation = np.ones(3)
        with pytest.raises(ValueError):
            t.rotation[0, 0] = 2.0


class TestIntrinsics:
    def test_validation(self):
        with pytest.raises(ParameterError):
            CameraIntrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0, width=10, height=10)
        with pytest.raises(ParameterError):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=20.0, cy=0.0, width=10, height=10)

    def test_from_projection_matrix(self):
        p = np.array([[100.0, 0.0, 50.0, 1.0], [0.0, 90.0, 40.0, 2.0], [0.0, 0.0, 1.0, 3.0]])
        k = intrinsics_from_projection_matrix(p, 128, 96)
        assert (k.fx, k.fy, k.cx, k.cy) == (100.0, 90.0, 50.0, 40.0)


class TestProject:
    def intrinsics(self, width=200, height=200):
        return CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=width, height=height)

    def test_optical_axis(self):
        cloud = PointCloud(points=np.array([[0.0, 0.0, 5.0]]))
        proj = project(cloud, RigidTransform.identity(), self.intrinsics())
        assert len(proj) == 1
        assert (proj.u[0], proj.v[0]) == (50, 50)
        assert proj.depth[0] == pytest.approx(5.0)

    def test_behind_camera_excluded(self):
        cloud = PointCloud(points=np.array([[0.0, 0.0, -1.0]]))
        assert len(project(cloud, RigidTransform.identity(), self.intrinsics())) == 0

    def test_pinhole_arithmetic_and_bounds(self):
        cloud = PointCloud(points=np.array([[1.0, 0.0, 2.0]]))
        # u = round(100 * 0.5 + 50) = 100: excluded iff width <= 100
        narrow = project(cloud, RigidTransform.identity(), self.intrinsics(width=100))
        assert len(narrow) == 0
        wide = project(cloud, RigidTransform.identity(), self.intrinsics(width=101))
        assert len(wide) == 1 and wide.u[0] == 100

    def test_scale_consistency(self):
        rng = np.random.default_rng(4)
        k = self.intrinsics()
        pts = rng.uniform(-1, 1, size=(50, 3))
        pts[:, 2] = rng.uniform(1.0, 5.0, size=50)
        for lam in (2.0, 0.5, 7.3):
            p1 = project(PointCloud(points=pts), RigidTransform.identity(), k)
            p2 = project(PointCloud(points=pts * lam), RigidTransform.identity(), k)
            common = np.intersect1d(p1.point_index, p2.point_index)
            i1 = np.isin(p1.point_index, common)
            i2 = np.isin(p2.point_index, common)
            # f32 storage makes scaling not bit-exact; allow one ulp of pixel slip
            assert np.array_equal(p1.u[i1], p2.u[i2])
            assert np.array_equal(p1.v[i1], p2.v[i2])
            np.testing.assert_allclose(p2.depth[i2], lam * p1.depth[i1], rtol=1e-5)

    def test_rounding_half_away_from_zero(self):
        # fx * x / z = 64/128 = 0.5 exactly -> u = 50.5 -> 51, not round-half-even's 50
        k = CameraIntrinsics(fx=64.0, fy=64.0, cx=50.0, cy=50.0, width=200, height=200)
        cloud = PointCloud(points=np.array([[1.0, 0.0, 128.0]]))
        proj = project(cloud, RigidTransform.identity(), k)
        assert proj.u[0] == 51 and proj.v[0] == 50

    def test_extrinsics_applied(self):
        cam_from_lidar = RigidTransform(np.eye(3), [0.0, 0.0, 10.0])
        cloud = PointCloud(points=np.array([[0.0, 0.0, -5.0]]))  # 5 m in front after shift
        proj = project(cloud, cam_from_lidar, self.intrinsics())
        assert len(proj) == 1 and proj.depth[0] == pytest.approx(5.0)


class TestPointCloud:
    def test_rejects_non_finite(self):
        with pytest.raises(GeometryError):
            PointCloud(points=np.array([[np.nan, 0.0, 0.0]]))

    def test_intensity_length(self):
        from leap3d.errors import DimensionError
        with pytest.raises(DimensionError):
            PointCloud(points=np.zeros((2, 3)), intensity=np.zeros(3))
