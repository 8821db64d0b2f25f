import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gmmfield.eskf import ImuSample
from gmmfield.pointcloud import (
    DataFormatError,
    TrajectorySample,
    file_digest,
    load_cloud,
    load_imu,
    load_scan,
    load_trajectory,
    scan_files,
    voxel_downsample,
    write_cloud,
    write_imu,
    write_scan,
    write_trajectory,
)
from gmmfield.synthetic import Scan

from .oracles import brute_bins


class TestDownsample:
    def test_close_points_merge(self):
        out = voxel_downsample([[0.1, 0.1, 0.1], [0.11, 0.1, 0.1]], 0.5)
        np.testing.assert_allclose(out, [[0.105, 0.1, 0.1]])

    def test_spread_points_kept(self, rng):
        pts = np.array([[i, j, k] for i in range(3) for j in range(3) for k in range(3)], float) + 0.25
        assert len(voxel_downsample(pts, 0.5)) == 27

    def test_binning_oracle(self, rng):
        pts = rng.uniform(-3, 3, (100_000, 3))
        assert len(voxel_downsample(pts, 0.4)) == len(brute_bins(pts, 0.4))

    def test_order_and_determinism(self, rng):
        pts = rng.uniform(-2, 2, (5000, 3))
        a = voxel_downsample(pts, 0.3)
        b = voxel_downsample(pts[::-1], 0.3)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
        keys = np.floor(a / 0.3).astype(int)
        assert [tuple(k) for k in keys] == sorted(tuple(k) for k in keys)

    def test_bad_resolution(self):
        with pytest.raises(ValueError):
            voxel_downsample([[0, 0, 0]], 0.0)

    @given(hnp.arrays(float, st.tuples(st.integers(1, 40), st.just(3)), elements=st.floats(-10, 10)))
    def test_centroids_stay_in_their_voxel(self, pts):
        out = voxel_downsample(pts, 0.7)
        assert len(out) == len(brute_bins(pts, 0.7))
        lo = np.floor(pts / 0.7).min(0) * 0.7
        hi = (np.floor(pts / 0.7).max(0) + 1) * 0.7
        assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)


class TestFiles:
    def test_xyz_three_points(self, tmp_path):
        p = tmp_path / "c.xyz"
        p.write_text("# comment\n1 2 3\n4.5 5.5 6.5\n\n-1e-3 0 7\n")
        np.testing.assert_array_equal(load_cloud(p), [[1, 2, 3], [4.5, 5.5, 6.5], [-1e-3, 0, 7]])

    def test_xyz_bad_line_reports_number(self, tmp_path):
        p = tmp_path / "c.xyz"
        p.write_text("1 2 3\n1 2\n")
        with pytest.raises(DataFormatError, match=r":2:"):
            load_cloud(p)

    @pytest.mark.parametrize("suffix", [".ply", ".xyz"])
    def test_cloud_round_trip(self, tmp_path, rng, suffix):
        pts = rng.normal(size=(50, 3))
        p = tmp_path / f"c{suffix}"
        write_cloud(p, pts)
        np.testing.assert_array_equal(load_cloud(p), pts)

    def test_ply_with_extra_properties(self, tmp_path):
        p = tmp_path / "c.ply"
        p.write_text(
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float intensity\nproperty float x\n"
            "property float y\nproperty float z\nend_header\n9 1 2 3\n8 4 5 6\n"
        )
        np.testing.assert_array_equal(load_cloud(p), [[1, 2, 3], [4, 5, 6]])

    def test_binary_ply_rejected(self, tmp_path):
        p = tmp_path / "c.ply"
        p.write_text("ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n")
        with pytest.raises(DataFormatError):
            load_cloud(p)

    def test_trajectory_norm_rejected_with_line(self, tmp_path):
        p = tmp_path / "t.tum"
        p.write_text("0.0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1.01\n")
        with pytest.raises(DataFormatError, match=r":2:"):
            load_trajectory(p)

    def test_trajectory_round_trip(self, tmp_path, rng):
        samples = []
        for t in np.sort(rng.uniform(0, 10, 20)):
            q = rng.normal(size=4)
            samples.append(TrajectorySample(float(t), rng.normal(size=3), q / np.linalg.norm(q)))
        p = tmp_path / "t.tum"
        write_trajectory(p, samples)
        back = load_trajectory(p)
        for a, b in zip(samples, back):
            assert b.stamp == pytest.approx(a.stamp, abs=5e-10)
            np.testing.assert_allclose(b.position, a.position, atol=5e-10)
            np.testing.assert_allclose(b.orientation, a.orientation, atol=2e-9)

    def test_tum_column_order(self, tmp_path):
        p = tmp_path / "t.tum"
        p.write_text("1.5 1 2 3 0 0 0.7071067811865476 0.7071067811865476\n")
        s = load_trajectory(p)[0]
        np.testing.assert_allclose(s.orientation, [0.7071067811865476, 0, 0, 0.7071067811865476])

    def test_imu_round_trip_and_order(self, tmp_path, rng):
        imu = [ImuSample(0.005 * i, rng.normal(size=3), rng.normal(size=3)) for i in range(10)]
        p = tmp_path / "imu.txt"
        write_imu(p, imu)
        back = load_imu(p)
        for a, b in zip(imu, back):
            np.testing.assert_allclose(b.accel, a.accel, rtol=1e-11)
        p.write_text("0.1 0 0 9.81 0 0 0\n0.1 0 0 9.81 0 0 0\n")
        with pytest.raises(DataFormatError, match=r":2:"):
            load_imu(p)

    def test_scan_round_trip(self, tmp_path, rng):
        s = Scan(rng.normal(size=(30, 3)), np.linspace(0, 1, 30), 12.25, 0.1)
        write_scan(tmp_path / "a.scan", s)
        (tmp_path / "notes.txt").write_text("x")
        back = load_scan(tmp_path / "a.scan")
        np.testing.assert_array_equal(back.points, s.points)
        np.testing.assert_array_equal(back.rel_times, s.rel_times)
        assert back.stamp == 12.25 and back.period == 0.1
        assert scan_files(tmp_path) == [tmp_path / "a.scan"]

    def test_digest(self, tmp_path):
        p = tmp_path / "d"
        p.write_bytes(b"abc")
        assert file_digest(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
