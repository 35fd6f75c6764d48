"""PLY point clouds and TUM-format trajectories."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Pose

PLY_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
)


def _num(x: float) -> str:
    # + 0.0 folds negative zero so identity rows print as plain zeros
    return format(float(x) + 0.0, ".17g")


def pose_quaternion(pose: Pose) -> np.ndarray:
    """Unit Hamilton quaternion (x, y, z, w) with w >= 0."""
    q = Rotation.from_matrix(pose.rotation).as_quat()
    q = q / np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    return q


def tum_row(timestamp: float, pose: Pose) -> str:
    """``t tx ty tz qx qy qz qw`` with a fixed six-decimal timestamp."""
    vals = list(pose.translation) + list(pose_quaternion(pose))
    return f"{timestamp:.6f} " + " ".join(_num(v) for v in vals)


def parse_tum_row(row: str) -> tuple[float, Pose]:
    parts = row.split()
    if len(parts) != 8:
        raise ValueError(f"TUM row needs 8 fields, got {len(parts)}: {row!r}")
    vals = [float(p) for p in parts]
    q = np.asarray(vals[4:8])
    q = q / np.linalg.norm(q)
    return vals[0], Pose(Rotation.from_quat(q).as_matrix(), vals[1:4])


def export_trajectory(traj, path, frame_rate: float = 2.0, timestamps=None) -> None:
    """Write one pose per line; timestamp ``t / frame_rate`` for frame index t."""
    if not traj:
        raise ValueError("cannot export an empty trajectory")
    ts = range(len(traj)) if timestamps is None else timestamps
    lines = [tum_row(t / frame_rate, p) for t, p in zip(ts, traj)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path) -> tuple[np.ndarray, list[Pose]]:
    stamps, poses = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        t, p = parse_tum_row(line)
        stamps.append(t)
        poses.append(p)
    return np.asarray(stamps), poses


def export_ply(points, colors, path) -> None:
    """Binary little-endian PLY with float32 xyz and uchar rgb."""
    pts = np.asarray(points).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("cannot export an empty point cloud")
    cols = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    if cols.shape[0] != pts.shape[0]:
        raise ValueError("points and colors differ in length")
    data = np.empty(pts.shape[0], dtype=PLY_DTYPE)
    for i, name in enumerate("xyz"):
        data[name] = pts[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        data[name] = cols[:, i]
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {pts.shape[0]}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a PLY written by :func:`export_ply`; returns float32 xyz and uint8 rgb."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise ValueError(f"{path}: only binary_little_endian 1.0 is supported")
    n = next(int(h.split()[2]) for h in header if h.startswith("element vertex"))
    body = raw[end + len(b"end_header\n") :]
    if len(body) != n * PLY_DTYPE.itemsize:
        raise ValueError(f"{path}: expected {n} vertices, body holds {len(body)} bytes")
    data = np.frombuffer(body, dtype=PLY_DTYPE)
    xyz = np.stack([data["x"], data["y"], data["z"]], axis=1)
    rgb = np.stack([data["red"], data["green"], data["blue"]], axis=1)
    return xyz, rgb


def submap_color(k: int) -> np.ndarray:
    """Distinct, deterministic colour per submap index (golden-angle hue walk)."""
    h = (k * 0.61803398875) % 1.0
    i = int(h * 6)
    f = h * 6 - i
    v, s = 1.0, 0.75
    p, q, tt = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    rgb = [(v, tt, p), (q, v, p), (p, v, tt), (p, q, v), (tt, p, v), (v, p, q)][i % 6]
    return np.round(np.array(rgb) * 255).astype(np.uint8)
