"""Submap prediction data model, stream segmentation, bundle I/O and
confidence filtering."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    BundleFormatError,
    ConfigError,
    MissingTensorError,
    PoseFormatError,
    TensorLengthError,
    TensorShapeError,
)
from .geometry import Intrinsics, Pose

MANIFEST = "manifest.json"


@dataclass(frozen=True)
class StreamConfig:
    T: int
    C: int
    L: int
    O: int

    def __post_init__(self):
        if not (1 <= self.O <= self.L <= self.T):
            raise ConfigError(f"need 1 <= O <= L <= T, got O={self.O}, L={self.L}, T={self.T}")
        if self.C < 1:
            raise ConfigError(f"need at least one camera, got C={self.C}")

    @property
    def n_submaps(self) -> int:
        return math.ceil(self.T / self.L)


def segment_stream(cfg: StreamConfig) -> list[list[int]]:
    """Timestamps covered by each submap.

    Submap 0 holds ``[0, L-1]``; submap k > 0 holds its ``O`` overlap frames
    ``[kL-O, kL-1]`` followed by the new frames ``[kL, (k+1)L-1]``. A short
    tail is kept in full when ``T`` is not a multiple of ``L``.
    """
    out = []
    for k in range(cfg.n_submaps):
        start = 0 if k == 0 else k * cfg.L - cfg.O
        stop = min((k + 1) * cfg.L, cfg.T)
        out.append(list(range(start, stop)))
    return out


@dataclass
class FramePrediction:
    """One image's prediction: camera, pose (camera-to-submap) and pointmap."""

    t: int
    c: int
    intrinsics: Intrinsics
    pose: Pose
    pointmap: np.ndarray
    confidence: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        self.pointmap = np.asarray(self.pointmap)
        self.confidence = np.asarray(self.confidence)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        h, w = self.shape
        if self.pointmap.shape != (h, w, 3) or self.confidence.shape != (h, w):
            raise ValueError(
                f"frame (t={self.t}, c={self.c}): pointmap {self.pointmap.shape}, "
                f"confidence {self.confidence.shape} and mask {self.valid_mask.shape} disagree"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid_mask.shape

    @property
    def key(self) -> tuple[int, int]:
        return (self.t, self.c)

    def valid_points(self) -> np.ndarray:
        return self.pointmap[self.valid_mask]


@dataclass
class SubmapPrediction:
    k: int
    frames: list[FramePrediction]
    overlap_count: int = 0
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.frames = sorted(self.frames, key=lambda f: f.key)
        self._index = {f.key: f for f in self.frames}

    @property
    def timestamps(self) -> list[int]:
        return sorted({f.t for f in self.frames})

    @property
    def cameras(self) -> list[int]:
        return sorted({f.c for f in self.frames})

    def frame(self, t: int, c: int) -> FramePrediction:
        return self._index[(t, c)]

    def has_frame(self, t: int, c: int) -> bool:
        return (t, c) in self._index

    def overlap_timestamps(self) -> list[int]:
        """Timestamps shared with the previous submap (empty for k = 0)."""
        if self.k == 0:
            return []
        return self.timestamps[: self.overlap_count]

    def reference_poses(self, timestamps) -> list[Pose]:
        return [self.frame(t, 0).pose for t in timestamps]

    def valid_points(self) -> np.ndarray:
        pts = [f.valid_points() for f in self.frames]
        return np.concatenate(pts, axis=0) if pts else np.zeros((0, 3))

    def with_frames(self, frames) -> SubmapPrediction:
        return SubmapPrediction(self.k, list(frames), self.overlap_count)


def confidence_filter(fp: FramePrediction, percentile: float) -> np.ndarray:
    """Mask keeping pixels whose confidence is strictly above the per-image
    percentile of the currently valid confidences.

    A percentile of 0 leaves the mask unchanged.
    """
    if not 0 <= percentile <= 100:
        raise ValueError(f"percentile must lie in [0, 100], got {percentile}")
    mask = fp.valid_mask.copy()
    if percentile == 0 or not mask.any():
        return mask
    thresh = np.percentile(fp.confidence[mask], percentile)
    return mask & (fp.confidence > thresh)


# --- bundle I/O -----------------------------------------------------------


def _tensor_names(t: int, c: int) -> tuple[str, str, str]:
    stem = f"t{t:06d}_c{c:02d}"
    return f"{stem}_points.f32", f"{stem}_conf.f32", f"{stem}_mask.u8"


def save_bundle(sp: SubmapPrediction, path) -> None:
    """Write one submap as ``manifest.json`` plus headerless tensor files.

    Pointmaps and confidences are stored as little-endian float32, masks as
    one byte per pixel.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    frames = []
    for f in sp.frames:
        h, w = f.shape
        pname, cname, mname = _tensor_names(f.t, f.c)
        np.ascontiguousarray(f.pointmap, dtype="<f4").tofile(path / pname)
        np.ascontiguousarray(f.confidence, dtype="<f4").tofile(path / cname)
        np.ascontiguousarray(f.valid_mask, dtype=np.uint8).tofile(path / mname)
        intr = f.intrinsics
        frames.append(
            {
                "t": int(f.t),
                "c": int(f.c),
                "width": int(w),
                "height": int(h),
                "fx": intr.fx,
                "fy": intr.fy,
                "cx": intr.cx,
                "cy": intr.cy,
                "pose": [float(x) for x in f.pose.matrix().ravel()],
                "pointmap_file": pname,
                "confidence_file": cname,
                "mask_file": mname,
            }
        )
    manifest = {"submap_index": int(sp.k), "O": int(sp.overlap_count), "frames": frames}
    tmp = path / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=1))
    os.replace(tmp, path / MANIFEST)


def _read_tensor(path: Path, dtype, count: int, frame) -> np.ndarray:
    if not path.is_file():
        raise MissingTensorError("missing tensor file", path=path, frame=frame)
    nbytes = path.stat().st_size
    itemsize = np.dtype(dtype).itemsize
    if nbytes % itemsize:
        raise TensorLengthError(
            f"read length {nbytes} bytes is not a multiple of {itemsize}", path=path, frame=frame
        )
    data = np.fromfile(path, dtype=dtype)
    if data.size != count:
        raise TensorShapeError(
            f"expected {count} elements from manifest, found {data.size}", path=path, frame=frame
        )
    return data


def load_bundle(path) -> SubmapPrediction:
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise MissingTensorError("missing manifest", path=mpath)
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"manifest is not valid JSON: {exc}", path=mpath) from exc

    frames = []
    for entry in manifest["frames"]:
        t, c = int(entry["t"]), int(entry["c"])
        frame = (t, c)
        h, w = int(entry["height"]), int(entry["width"])
        pose_vals = np.asarray(entry["pose"], dtype=np.float64)
        if pose_vals.size != 16 or not np.all(np.isfinite(pose_vals)):
            raise PoseFormatError("pose must be 16 finite numbers", path=mpath, frame=frame)
        T = pose_vals.reshape(4, 4)
        if not np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]):
            raise PoseFormatError("pose bottom row must be 0 0 0 1", path=mpath, frame=frame)
        try:
            pose = Pose.from_matrix(T)
            intr = Intrinsics(entry["fx"], entry["fy"], entry["cx"], entry["cy"], w, h)
        except ValueError as exc:
            raise BundleFormatError(str(exc), path=mpath, frame=frame) from exc

        pts = _read_tensor(path / entry["pointmap_file"], "<f4", h * w * 3, frame)
        conf = _read_tensor(path / entry["confidence_file"], "<f4", h * w, frame)
        mask = _read_tensor(path / entry["mask_file"], np.uint8, h * w, frame)
        if np.any(mask > 1):
            raise BundleFormatError(
                "mask bytes must be 0 or 1", path=path / entry["mask_file"], frame=frame
            )
        pts = pts.reshape(h, w, 3)
        mask = mask.reshape(h, w).astype(bool)
        if not np.all(np.isfinite(pts[mask])):
            raise BundleFormatError(
                "non-finite pointmap entry under a valid mask pixel",
                path=path / entry["pointmap_file"],
                frame=frame,
            )
        frames.append(FramePrediction(t, c, intr, pose, pts, conf.reshape(h, w), mask))
    return SubmapPrediction(int(manifest["submap_index"]), frames, int(manifest["O"]))


def submap_dir(root, k: int) -> Path:
    return Path(root) / f"submap_{k:04d}"


def save_stream(submaps, root) -> None:
    for sp in submaps:
        save_bundle(sp, submap_dir(root, sp.k))


class BundleDirectory:
    """Lazy, index-addressed view over ``root/submap_XXXX`` bundles."""

    def __init__(self, root):
        self.root = Path(root)
        self._dirs = sorted(p for p in self.root.glob("submap_*") if p.is_dir())
        if not self._dirs:
            raise BundleFormatError("no submap_* bundles found", path=self.root)

    def __len__(self) -> int:
        return len(self._dirs)

    def __getitem__(self, k: int) -> SubmapPrediction:
        sp = load_bundle(self._dirs[k])
        if sp.k != k:
            raise BundleFormatError(
                f"bundle declares submap_index {sp.k}, expected {k}", path=self._dirs[k]
            )
        return sp


def with_mask(fp: FramePrediction, mask) -> FramePrediction:
    return replace(fp, valid_mask=np.asarray(mask, dtype=bool))
