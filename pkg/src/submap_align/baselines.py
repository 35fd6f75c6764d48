"""Competitor aligners: point-cloud Sim(3) and SL(4) registration of
consecutive submaps from pixel-bridged correspondences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfigurationError, InsufficientDataError
from .geometry import Pose, Sim3, orthonormalize, umeyama_align
from .prediction import SubmapPrediction

W_EPS = 1e-9
RANK_GAP = 1e-10


@dataclass(frozen=True)
class Sl4Transform:
    """4x4 projective map of R^3 with unit determinant."""

    H: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=np.float64)
        if H.shape != (4, 4) or not np.all(np.isfinite(H)):
            raise ValueError("SL(4) matrix must be a finite 4x4 array")
        if abs(np.linalg.det(H) - 1.0) > 1e-9:
            raise ValueError(f"SL(4) determinant {np.linalg.det(H)} is not 1")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @classmethod
    def identity(cls) -> Sl4Transform:
        return cls(np.eye(4))

    @classmethod
    def normalized(cls, H) -> Sl4Transform:
        """Rescale an arbitrary matrix with positive determinant to det 1."""
        H = np.asarray(H, dtype=np.float64)
        d = np.linalg.det(H)
        if not d > 0:
            raise DegenerateConfigurationError(f"projective map has determinant {d:.3g} <= 0")
        Hn = H / d**0.25
        # one polishing pass keeps |det - 1| well under 1e-9 for large entries
        Hn = Hn / np.linalg.det(Hn) ** 0.25
        return cls(Hn)

    def __matmul__(self, other: Sl4Transform) -> Sl4Transform:
        return Sl4Transform.normalized(self.H @ other.H)

    def inverse(self) -> Sl4Transform:
        return Sl4Transform.normalized(np.linalg.inv(self.H))


def sim3_point_align(src, dst, with_scale: bool = True) -> Sim3:
    """Least-squares Sim(3) (or SE(3)) from ``src`` onto ``dst``."""
    return umeyama_align(src, dst, with_scale=with_scale)


def _hartley(points: np.ndarray) -> np.ndarray:
    mu = points.mean(axis=0)
    mean_dist = np.linalg.norm(points - mu, axis=1).mean()
    if mean_dist == 0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(3.0) / mean_dist
    T = np.eye(4)
    T[:3, :3] *= s
    T[:3, 3] = -s * mu
    return T


def sl4_point_align(src, dst) -> Sl4Transform:
    """Direct linear transform estimate of ``H`` with ``dst ~ H src``.

    Both point sets are normalized (centroid to origin, mean distance
    sqrt(3)). Each correspondence contributes the three rows
    ``h_i . x - X_i (h_4 . x) = 0``; the solution is the right singular
    vector of the smallest singular value.

    Raises:
        DegenerateConfigurationError: the two smallest singular values are
            not separated by at least 1e-10 of the largest (e.g. coplanar
            input), or the estimate reverses orientation.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"expected matching (N, 3) arrays, got {src.shape}, {dst.shape}")
    n = src.shape[0]
    if n < 6:
        raise InsufficientDataError(f"SL(4) estimation needs >= 6 correspondences, got {n}")

    Ts, Td = _hartley(src), _hartley(dst)
    xs = np.hstack([src, np.ones((n, 1))]) @ Ts.T
    xd = (np.hstack([dst, np.ones((n, 1))]) @ Td.T)[:, :3]

    A = np.zeros((3 * n, 16))
    for i in range(3):
        rows = A[i::3]
        rows[:, 4 * i : 4 * i + 4] = xs
        rows[:, 12:16] = -xd[:, i : i + 1] * xs
    _, S, Vt = np.linalg.svd(A, full_matrices=False)
    if (S[-2] - S[-1]) < RANK_GAP * S[0]:
        raise DegenerateConfigurationError(
            f"DLT null space is not one-dimensional (trailing singular values {S[-2]:.3g}, "
            f"{S[-1]:.3g})"
        )
    Hn = Vt[-1].reshape(4, 4)
    H = np.linalg.inv(Td) @ Hn @ Ts
    # fix the projective sign so the source centroid maps with w > 0
    if (H @ np.append(src.mean(axis=0), 1.0))[3] < 0:
        H = -H
    return Sl4Transform.normalized(H)


def apply_sl4(H: Sl4Transform, points) -> tuple[np.ndarray, np.ndarray]:
    """Homogeneous multiply and perspective divide.

    Returns the mapped points and a validity flag; points whose fourth
    coordinate has magnitude below 1e-9 are flagged and left as NaN.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    Hm = H.H if isinstance(H, Sl4Transform) else np.asarray(H, dtype=np.float64)
    y = pts @ Hm[:3, :3].T + Hm[:3, 3]
    w = pts @ Hm[3, :3] + Hm[3, 3]
    valid = np.abs(w) >= W_EPS
    out = np.full_like(y, np.nan)
    out[valid] = y[valid] / w[valid, None]
    return out, valid


def transfer_residual(H: Sl4Transform, src, dst) -> float:
    """RMS distance between mapped ``src`` and ``dst`` (inf if any point is lost)."""
    mapped, valid = apply_sl4(H, src)
    if not valid.all():
        return float("inf")
    return float(np.sqrt(np.mean(np.sum((mapped - np.asarray(dst)) ** 2, axis=1))))


def sim3_residual(S: Sim3, src, dst) -> float:
    diff = S.apply(src) - np.asarray(dst, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))


def warp_pose_sl4(H: Sl4Transform, pose: Pose) -> Pose:
    """Approximate action of a projective map on a camera pose.

    The centre is mapped through ``H``; the orientation is the nearest
    rotation to the map's Jacobian at the centre applied to the camera axes.
    """
    c = pose.center
    Hm = H.H
    a = Hm[:3, :3] @ c + Hm[:3, 3]
    w = Hm[3, :3] @ c + Hm[3, 3]
    if abs(w) < W_EPS:
        raise DegenerateConfigurationError("camera centre maps to the plane at infinity")
    J = (Hm[:3, :3] * w - np.outer(a, Hm[3, :3])) / w**2
    M = J @ pose.rotation
    if np.linalg.det(M) <= 0:
        raise DegenerateConfigurationError("projective map flips the camera orientation")
    return Pose(orthonormalize(M), a / w)


def pixel_correspondences(prev: SubmapPrediction, curr: SubmapPrediction):
    """Point pairs bridged by shared overlap pixels valid in both submaps.

    Returns ``(src, dst)`` with ``src`` from ``curr`` and ``dst`` from
    ``prev``, each in its own submap frame.
    """
    src, dst = [], []
    for t in curr.overlap_timestamps():
        for c in curr.cameras:
            if not (prev.has_frame(t, c) and curr.has_frame(t, c)):
                continue
            fp, fc = prev.frame(t, c), curr.frame(t, c)
            both = fp.valid_mask & fc.valid_mask
            src.append(fc.pointmap[both])
            dst.append(fp.pointmap[both])
    if not src:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return (
        np.concatenate(src).astype(np.float64),
        np.concatenate(dst).astype(np.float64),
    )
