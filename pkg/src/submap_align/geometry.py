"""Rigid and similarity transforms, pinhole projection, rotation averaging
and Umeyama alignment.

Poses are stored as a rotation matrix plus translation and map points from
the camera frame into the submap/world frame (camera-to-world).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateConfigurationError, InsufficientDataError, InvalidDepthError

BEHIND_CAMERA_DEPTH = 1e-9
_ORTHO_TOL = 1e-6


def _frozen(a, shape, name):
    arr = np.array(a, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (Frobenius) to ``R``."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``x -> R x + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3), "rotation")
        t = _frozen(self.translation, (3,), "translation")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL or np.linalg.det(R) < 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=np.float64).reshape(4, 4)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @property
    def center(self) -> np.ndarray:
        """Camera position in the target frame."""
        return self.translation

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: Pose) -> Pose:
        if not isinstance(other, Pose):
            return NotImplemented
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def scaled(self, s: float) -> Pose:
        """Same orientation, translation multiplied by ``s``."""
        return Pose(self.rotation, s * self.translation)

    def orthonormalized(self) -> Pose:
        return Pose(orthonormalize(self.rotation), self.translation)


@dataclass(frozen=True)
class Sim3:
    """Similarity transform ``x -> s R x + t``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        s = float(self.scale)
        if not np.isfinite(s) or s <= 0:
            raise ValueError(f"similarity scale must be positive, got {s}")
        R = _frozen(self.rotation, (3, 3), "rotation")
        if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL or np.linalg.det(R) < 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _frozen(self.translation, (3,), "translation"))

    @classmethod
    def identity(cls) -> Sim3:
        return cls(1.0, np.eye(3), np.zeros(3))

    @classmethod
    def from_pose(cls, pose: Pose, scale: float = 1.0) -> Sim3:
        return cls(scale, pose.rotation, pose.translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.scale * self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * (pts @ self.rotation.T) + self.translation

    def inverse(self) -> Sim3:
        Rt = self.rotation.T
        return Sim3(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)

    def __matmul__(self, other: Sim3) -> Sim3:
        if not isinstance(other, Sim3):
            return NotImplemented
        return Sim3(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * (self.rotation @ other.translation) + self.translation,
        )

    def transform_pose(self, pose: Pose) -> Pose:
        """Move a camera-to-frame pose into the frame this similarity maps to."""
        return Pose(
            self.rotation @ pose.rotation,
            self.scale * (self.rotation @ pose.translation) + self.translation,
        )


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame rays with unit z for every pixel, shape (H, W, 3)."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        return np.stack(
            [(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1
        )


class Projection(NamedTuple):
    pixel: np.ndarray
    depth: np.ndarray
    in_front: np.ndarray


def project(points, pose: Pose, intr: Intrinsics) -> Projection:
    """Pinhole projection of world points into a camera.

    Works on a single 3-vector or an (N, 3) array. Points with camera-frame
    depth <= 1e-9 are flagged through ``in_front`` and get NaN pixels; no
    image-bounds clipping is done.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    cam = (pts - pose.translation) @ pose.rotation
    depth = cam[:, 2]
    in_front = depth > BEHIND_CAMERA_DEPTH
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(in_front, depth, np.nan)
        u = intr.fx * cam[:, 0] / safe + intr.cx
        v = intr.fy * cam[:, 1] / safe + intr.cy
    pixel = np.stack([u, v], axis=-1)
    if single:
        return Projection(pixel[0], depth[0], in_front[0])
    return Projection(pixel, depth, in_front)


def unproject(pixel, depth, pose: Pose, intr: Intrinsics) -> np.ndarray:
    """World point seen at ``pixel`` with camera-frame depth ``depth``."""
    px = np.asarray(pixel, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise InvalidDepthError("depth must be positive")
    cam = np.stack(
        [(px[..., 0] - intr.cx) / intr.fx * d, (px[..., 1] - intr.cy) / intr.fy * d, d],
        axis=-1,
    )
    return pose.apply(cam)


def chordal_rotation_average(rotations) -> np.ndarray:
    """Rotation minimizing the summed squared Frobenius distance to the inputs.

    Closed form: project the arithmetic mean matrix onto SO(3).
    """
    Rs = np.asarray(rotations, dtype=np.float64)
    if Rs.ndim != 3 or Rs.shape[0] == 0:
        raise InsufficientDataError("need at least one rotation to average")
    M = Rs.mean(axis=0)
    U, S, Vt = np.linalg.svd(M)
    tol = 1e-12 * max(1.0, S[0])
    flip = np.linalg.det(U @ Vt) < 0
    # uniqueness of the projection needs the two trailing singular values
    # separated whenever the determinant correction is active
    if S[1] <= tol or (flip and S[1] - S[2] <= tol):
        raise DegenerateConfigurationError(
            f"mean rotation matrix is rank deficient (singular values {S})"
        )
    D = np.eye(3)
    if flip:
        D[2, 2] = -1.0
    return U @ D @ Vt


def chordal_cost(R, rotations) -> float:
    Rs = np.asarray(rotations, dtype=np.float64)
    return float(np.sum((Rs - np.asarray(R)[None]) ** 2))


def umeyama_align(src, dst, with_scale: bool = True) -> Sim3:
    """Least-squares similarity (or rigid) transform taking ``src`` onto ``dst``.

    Args:
        src: (N, 3) source points.
        dst: (N, 3) destination points, in correspondence with ``src``.
        with_scale: estimate the scale; otherwise it is fixed to 1.

    Raises:
        InsufficientDataError: fewer than three correspondences.
        DegenerateConfigurationError: ``src`` is collinear or coincident.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"expected matching (N, 3) arrays, got {src.shape} and {dst.shape}")
    n = src.shape[0]
    if n < 3:
        raise InsufficientDataError(f"Umeyama alignment needs >= 3 points, got {n}")

    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d

    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-12 * sv[0]:
        raise DegenerateConfigurationError("source points are collinear or coincident")

    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_s = np.sum(xs**2) / n
        s = float(np.sum(D * np.diag(S)) / var_s)
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    return Sim3(s, R, t)


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle_deg(R) -> float:
    """Geodesic angle of a rotation matrix, in degrees."""
    R = np.asarray(R, dtype=np.float64)
    # atan2 form stays accurate for angles near 0 and 180 degrees
    s = np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.degrees(np.arctan2(s, c)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (QR of a Gaussian matrix)."""
    Q, Rr = np.linalg.qr(rng.standard_normal((3, 3)))
    Q = Q * np.sign(np.diag(Rr))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def axis_angle_rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues formula."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    Kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * Kx + (1.0 - np.cos(angle)) * (Kx @ Kx)
