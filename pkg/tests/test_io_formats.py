import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from leap3d.errors import FormatError, GeometryError, ParameterError
from leap3d.geometry import PointCloud, RigidTransform
from leap3d.io_formats import (DatasetLayout, export_ply, read_calibration, read_labels,
                               read_painted_cloud, read_pixel_prob_map, read_point_cloud,
                               read_poses, write_calibration, write_labels,
                               write_painted_cloud, write_pixel_prob_map, write_point_cloud,
                               write_poses)
from leap3d.label2d import PixelProbMap
from leap3d.painting import PaintedCloud


def random_cloud(rng, n):
    return PointCloud(points=rng.normal(size=(n, 3)).astype(np.float32),
                      intensity=rng.random(n).astype(np.float32))


class TestPointCloudFile:
    def test_empty(self, tmp_path):
        path = tmp_path / "c.bin"
        write_point_cloud(path, PointCloud(points=np.zeros((0, 3))))
        assert len(read_point_cloud(path)) == 0

    def test_single_point_bit_exact(self, tmp_path):
        path = tmp_path / "c.bin"
        cloud = PointCloud(points=np.array([[1.5, -2.25, 0.125]], dtype=np.float32),
                           intensity=np.array([0.75], dtype=np.float32))
        write_point_cloud(path, cloud)
        got = read_point_cloud(path)
        np.testing.assert_array_equal(got.points, cloud.points)
        np.testing.assert_array_equal(got.intensity, cloud.intensity)

    def test_random_round_trip(self, tmp_path):
        rng = np.random.default_rng(60)
        cloud = random_cloud(rng, 10000)
        path = tmp_path / "c.bin"
        write_point_cloud(path, cloud)
        got = read_point_cloud(path)
        np.testing.assert_array_equal(got.points, cloud.points)
        np.testing.assert_array_equal(got.intensity, cloud.intensity)

    def test_bad_length(self, tmp_path):
        path = tmp_path / "c.bin"
        path.write_bytes(bytes(15))
        with pytest.raises(FormatError):
            read_point_cloud(path)


class TestPoseFile:
    def test_identity_line(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
        poses = read_poses(path)
        np.testing.assert_array_equal(poses[0].rotation, np.eye(3))
        np.testing.assert_array_equal(poses[0].translation, np.zeros(3))

    def test_translation_only(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("1 0 0 1.5 0 1 0 -2 0 0 1 3\n")
        np.testing.assert_array_equal(read_poses(path)[0].translation, [1.5, -2.0, 3.0])

    def test_random_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(61)
        poses = [RigidTransform(Rotation.random(random_state=rng).as_matrix(),
                                rng.normal(size=3)) for _ in range(25)]
        path = tmp_path / "p.txt"
        write_poses(path, poses)
        got = read_poses(path)
        for a, b in zip(poses, got):
            np.testing.assert_array_equal(a.rotation, b.rotation)
            np.testing.assert_array_equal(a.translation, b.translation)

    def test_mildly_non_orthonormal_repaired(self, tmp_path):
        rot = Rotation.random(random_state=np.random.default_rng(62)).as_matrix()
        noisy = rot + 1e-5
        path = tmp_path / "p.txt"
        vals = np.hstack([noisy, np.zeros((3, 1))]).reshape(-1)
        path.write_text(" ".join(f"{x:.17g}" for x in vals) + "\n")
        got = read_poses(path)[0]
        err = np.max(np.abs(got.rotation @ got.rotation.T - np.eye(3)))
        assert err < 1e-9
        assert np.max(np.abs(got.rotation - rot)) < 1e-4

    def test_badly_non_rigid_rejected(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("2 0 0 0 0 2 0 0 0 0 2 0\n")
        with pytest.raises(GeometryError):
            read_poses(path)

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("1 0 0\n")
        with pytest.raises(FormatError):
            read_poses(path)

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("1 0 0 nan 0 1 0 0 0 0 1 0\n")
        with pytest.raises(FormatError):
            read_poses(path)


class TestCalibration:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(63)
        p2 = np.array([[100.0, 0.0, 64.0, 0.2], [0.0, 90.0, 48.0, -0.1], [0.0, 0.0, 1.0, 0.05]])
        tr = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))
        path = tmp_path / "calib.txt"
        write_calibration(path, p2, tr)
        got_p2, got_tr = read_calibration(path)
        np.testing.assert_array_equal(got_p2, p2)
        np.testing.assert_array_equal(got_tr.rotation, tr.rotation)
        np.testing.assert_array_equal(got_tr.translation, tr.translation)

    def test_missing_line(self, tmp_path):
        path = tmp_path / "calib.txt"
        path.write_text("P2: " + " ".join(["1"] * 12) + "\n")
        with pytest.raises(FormatError):
            read_calibration(path)


def random_ppm(rng, h=None, w=None, c=None):
    h = h or int(rng.integers(1, 12))
    w = w or int(rng.integers(1, 12))
    c = c or int(rng.integers(1, 6))
    cov = rng.random((h, w)) < rng.random()
    n = int(cov.sum())
    probs = (rng.random((n, c)) + 1e-3).astype(np.float32)
    probs /= probs.sum(axis=1, keepdims=True)
    return PixelProbMap(width=w, height=h, coverage=cov, probs=probs.astype(np.float32))


class TestPixelProbMapFile:
    def test_zero_coverage(self, tmp_path):
        ppm = PixelProbMap(width=3, height=2, coverage=np.zeros((2, 3), dtype=bool),
                           probs=np.zeros((0, 4), dtype=np.float32))
        path = tmp_path / "m.lppm"
        write_pixel_prob_map(path, ppm)
        got = read_pixel_prob_map(path)
        assert got.num_classes == 4 and not got.coverage.any()

    def test_full_uniform(self, tmp_path):
        probs = np.full((6, 2), 0.5, dtype=np.float32)
        ppm = PixelProbMap(width=3, height=2, coverage=np.ones((2, 3), dtype=bool), probs=probs)
        path = tmp_path / "m.lppm"
        write_pixel_prob_map(path, ppm)
        got = read_pixel_prob_map(path)
        np.testing.assert_array_equal(got.probs, probs)

    def test_random_round_trip(self, tmp_path):
        rng = np.random.default_rng(64)
        for i in range(20):
            ppm = random_ppm(rng)
            path = tmp_path / f"{i}.lppm"
            write_pixel_prob_map(path, ppm)
            got = read_pixel_prob_map(path)
            assert (got.width, got.height) == (ppm.width, ppm.height)
            np.testing.assert_array_equal(got.coverage, ppm.coverage)
            np.testing.assert_array_equal(got.probs, ppm.probs)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.lppm"
        path.write_bytes(b"XXXX" + bytes(16))
        with pytest.raises(FormatError):
            read_pixel_prob_map(path)

    def test_length_mismatch(self, tmp_path):
        ppm = random_ppm(np.random.default_rng(65))
        path = tmp_path / "m.lppm"
        write_pixel_prob_map(path, ppm)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FormatError):
            read_pixel_prob_map(path)


class TestLabelFile:
    def test_all_ignore(self, tmp_path):
        path = tmp_path / "l.label"
        write_labels(path, np.full(10, 0xFFFF))
        np.testing.assert_array_equal(read_labels(path), np.full(10, 0xFFFF))

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(66)
        labels = rng.integers(0, 20, size=1000)
        path = tmp_path / "l.label"
        write_labels(path, labels)
        np.testing.assert_array_equal(read_labels(path, expected_count=1000), labels)

    def test_upper_bits_rejected(self, tmp_path):
        path = tmp_path / "l.label"
        np.array([1 << 16], dtype="<u4").tofile(path)
        with pytest.raises(FormatError):
            read_labels(path)

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "l.label"
        write_labels(path, np.zeros(5, dtype=int))
        with pytest.raises(FormatError):
            read_labels(path, expected_count=6)


class TestPaintedCloudFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(67)
        for i in range(10):
            n = int(rng.integers(0, 200))
            cloud = random_cloud(rng, n)
            labeled = rng.random(n) < 0.6
            probs = np.zeros((n, 3), dtype=np.float32)
            probs[labeled] = (rng.random((int(labeled.sum()), 3)) + 1e-3).astype(np.float32)
            pc = PaintedCloud(points=cloud.points, probs=probs, labeled=labeled)
            path = tmp_path / f"{i}.lppc"
            write_painted_cloud(path, pc)
            got = read_painted_cloud(path, cloud)
            np.testing.assert_array_equal(got.labeled, pc.labeled)
            np.testing.assert_array_equal(got.probs, pc.probs)

    def test_point_count_mismatch(self, tmp_path):
        rng = np.random.default_rng(68)
        cloud = random_cloud(rng, 5)
        pc = PaintedCloud(points=cloud.points, probs=np.zeros((5, 2), dtype=np.float32),
                          labeled=np.zeros(5, dtype=bool))
        path = tmp_path / "p.lppc"
        write_painted_cloud(path, pc)
        with pytest.raises(FormatError):
            read_painted_cloud(path, random_cloud(rng, 6))


class TestPly:
    def palette(self):
        return {0: (255, 0, 0), 1: (0, 255, 0), 0xFFFF: (0, 0, 0)}

    def test_empty(self, tmp_path):
        path = tmp_path / "c.ply"
        export_ply(path, PointCloud(points=np.zeros((0, 3))), np.zeros(0, dtype=int),
                   self.palette())
        text = path.read_bytes()
        assert text.startswith(b"ply\nformat binary_little_endian 1.0\nelement vertex 0\n")

    def test_vertex_payload(self, tmp_path):
        path = tmp_path / "c.ply"
        cloud = PointCloud(points=np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
        export_ply(path, cloud, np.array([1]), self.palette())
        raw = path.read_bytes()
        header, payload = raw.split(b"end_header\n", 1)
        assert b"element vertex 1" in header
        assert len(payload) == 15  # 3 f32 + 3 u8
        xyz = np.frombuffer(payload[:12], dtype="<f4")
        np.testing.assert_array_equal(xyz, [1.0, 2.0, 3.0])
        assert payload[12:] == bytes((0, 255, 0))

    def test_palette_must_cover(self, tmp_path):
        cloud = PointCloud(points=np.zeros((1, 3)))
        with pytest.raises(ParameterError):
            export_ply(tmp_path / "c.ply", cloud, np.array([7]), self.palette())

    def test_random_lookup(self, tmp_path):
        rng = np.random.default_rng(69)
        n = 50
        cloud = random_cloud(rng, n)
        labels = rng.choice([0, 1, 0xFFFF], size=n)
        path = tmp_path / "c.ply"
        export_ply(path, cloud, labels, self.palette())
        payload = path.read_bytes().split(b"end_header\n", 1)[1]
        assert len(payload) == 15 * n
        for i in range(n):
            rgb = tuple(payload[i * 15 + 12: i * 15 + 15])
            assert rgb == self.palette()[int(labels[i])]


class TestDatasetLayout:
    def test_contiguous_frames(self, tmp_path):
        (tmp_path / "velodyne").mkdir()
        for i in range(3):
            write_point_cloud(tmp_path / "velodyne" / f"{i:06d}.bin",
                              PointCloud(points=np.zeros((1, 3))))
        assert DatasetLayout(tmp_path).frames() == [0, 1, 2]

    def test_gap_rejected(self, tmp_path):
        (tmp_path / "velodyne").mkdir()
        for i in (0, 2):
            write_point_cloud(tmp_path / "velodyne" / f"{i:06d}.bin",
                              PointCloud(points=np.zeros((1, 3))))
        with pytest.raises(FormatError):
            DatasetLayout(tmp_path).frames()

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FormatError):
            DatasetLayout(tmp_path).frames()
