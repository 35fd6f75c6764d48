import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from submap_align.exports import (
    export_ply,
    export_trajectory,
    parse_tum_row,
    read_ply,
    read_trajectory,
    submap_color,
    tum_row,
)
from submap_align.geometry import Pose

from helpers import random_pose


def test_identity_row():
    assert tum_row(0.0, Pose.identity()) == "0.000000 0 0 0 0 0 0 1"


def test_frame_rate_timestamp(tmp_path):
    export_trajectory([Pose.identity()] * 4, tmp_path / "t.txt", frame_rate=2.0)
    stamps, _ = read_trajectory(tmp_path / "t.txt")
    assert stamps[3] == 1.5
    assert (tmp_path / "t.txt").read_text().splitlines()[3].startswith("1.500000 ")


def test_tum_roundtrip(rng, tmp_path):
    traj = [random_pose(rng) for _ in range(20)]
    export_trajectory(traj, tmp_path / "t.txt", frame_rate=10.0, timestamps=range(5, 25))
    stamps, back = read_trajectory(tmp_path / "t.txt")
    np.testing.assert_allclose(stamps, np.arange(5, 25) / 10.0)
    for a, b in zip(traj, back):
        np.testing.assert_array_equal(a.translation, b.translation)
        np.testing.assert_allclose(a.rotation, b.rotation, atol=1e-14)


def test_quaternion_w_non_negative(rng):
    for _ in range(50):
        q = [float(x) for x in tum_row(0, random_pose(rng)).split()[4:]]
        assert q[3] >= 0 and abs(np.linalg.norm(q) - 1) < 1e-12


def test_tum_bad_row():
    with pytest.raises(ValueError):
        parse_tum_row("1 2 3")


def test_ply_roundtrip_bit_exact(rng, tmp_path):
    pts = rng.normal(size=(500, 3)).astype(np.float32)
    cols = rng.integers(0, 256, (500, 3)).astype(np.uint8)
    export_ply(pts, cols, tmp_path / "c.ply")
    xyz, rgb = read_ply(tmp_path / "c.ply")
    assert np.array_equal(xyz, pts) and np.array_equal(rgb, cols)
    head = (tmp_path / "c.ply").read_bytes()[:200]
    assert b"format binary_little_endian 1.0" in head
    assert b"property uchar red" in head


@settings(max_examples=30, deadline=None)
@given(pts=st.lists(st.tuples(*[st.floats(-1e6, 1e6, width=32)] * 3), min_size=1, max_size=40))
def test_ply_roundtrip_property(tmp_path_factory, pts):
    path = tmp_path_factory.mktemp("ply") / "p.ply"
    arr = np.asarray(pts, dtype=np.float32)
    export_ply(arr, np.zeros_like(arr, dtype=np.uint8), path)
    assert np.array_equal(read_ply(path)[0], arr)


def test_ply_errors(tmp_path):
    with pytest.raises(ValueError):
        export_ply(np.zeros((0, 3)), np.zeros((0, 3)), tmp_path / "e.ply")
    with pytest.raises(ValueError):
        export_ply(np.zeros((2, 3)), np.zeros((3, 3)), tmp_path / "e.ply")


def test_submap_colors_distinct():
    cols = {tuple(submap_color(k)) for k in range(10)}
    assert len(cols) == 10
