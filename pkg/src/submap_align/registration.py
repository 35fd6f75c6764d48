"""Point-agnostic registration of consecutive submaps from their shared
reference-camera poses, plus inter-submap scale pre-alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfigurationError, InsufficientDataError
from .geometry import Pose, chordal_rotation_average
from .prediction import FramePrediction, SubmapPrediction

_REORTHO_EVERY = 100


@dataclass(frozen=True)
class SubmapTransform:
    """Scale correction followed by a rigid map into the global frame."""

    k: int
    scale_correction: float
    to_global: Pose

    def __post_init__(self):
        if not self.scale_correction > 0:
            raise ValueError("scale_correction must be positive")

    def apply_points(self, points) -> np.ndarray:
        return self.to_global.apply(self.scale_correction * np.asarray(points, dtype=np.float64))

    def apply_pose(self, pose: Pose) -> Pose:
        return self.to_global @ pose.scaled(self.scale_correction)


def estimate_inter_submap_scale(prev_overlap_poses, curr_overlap_poses) -> float:
    """Median ratio of camera-center baselines, previous over current.

    Multiplying the current submap's geometry by the returned factor matches
    its overlap baselines to the previous submap.
    """
    if len(prev_overlap_poses) != len(curr_overlap_poses):
        raise ValueError("overlap pose lists differ in length")
    n = len(curr_overlap_poses)
    if n < 2:
        raise InsufficientDataError(f"scale estimation needs >= 2 overlap frames, got {n}")
    cp = np.array([p.center for p in prev_overlap_poses])
    cc = np.array([p.center for p in curr_overlap_poses])
    i, j = np.triu_indices(n, k=1)
    base_prev = np.linalg.norm(cp[i] - cp[j], axis=1)
    base_curr = np.linalg.norm(cc[i] - cc[j], axis=1)
    if np.any(base_curr < 1e-12):
        raise DegenerateConfigurationError("overlap camera baseline below 1e-12 m")
    return float(np.median(base_prev / base_curr))


def pairwise_registration(prev_overlap_poses, curr_overlap_poses) -> Pose:
    """Transform mapping the current submap frame into the previous one.

    Each shared camera gives ``H_i = T_prev_i (T_curr_i)^-1``; rotations are
    chordally averaged and translations arithmetically averaged.
    """
    if len(prev_overlap_poses) != len(curr_overlap_poses):
        raise ValueError("overlap pose lists differ in length")
    if not curr_overlap_poses:
        raise InsufficientDataError("no overlapping frames to register")
    Hs = [p @ c.inverse() for p, c in zip(prev_overlap_poses, curr_overlap_poses)]
    if len(Hs) == 1:
        return Hs[0]
    R = chordal_rotation_average([H.rotation for H in Hs])
    t = np.mean([H.translation for H in Hs], axis=0)
    return Pose(R, t)


def extend_chain(prev: SubmapTransform, H: Pose, ratio: float) -> SubmapTransform:
    """One step of the chain: submap ``prev.k + 1`` from its pairwise transform."""
    k = prev.k + 1
    G = prev.to_global @ H
    if k % _REORTHO_EVERY == 0:
        G = G.orthonormalized()
    return SubmapTransform(k, prev.scale_correction * float(ratio), G)


def chain_to_global(pair_transforms, scales) -> list[SubmapTransform]:
    """Left fold of pairwise transforms into submap-to-global transforms.

    ``pair_transforms[k-1]`` maps submap k (already multiplied by its own
    scale correction) into submap k-1; ``scales[k-1]`` is the ratio that
    scales submap k to match submap k-1. Corrections accumulate
    multiplicatively, anchored at submap 0.
    """
    if len(pair_transforms) != len(scales):
        raise ValueError("pair_transforms and scales differ in length")
    out = [SubmapTransform(0, 1.0, Pose.identity())]
    for H, s in zip(pair_transforms, scales):
        out.append(extend_chain(out[-1], H, s))
    return out


def register_pair(prev: SubmapPrediction, curr: SubmapPrediction, prev_scale: float,
                  estimate_scale: bool) -> tuple[Pose, float]:
    """Register ``curr`` onto ``prev`` using their shared reference cameras.

    Returns the pairwise transform and the scale ratio for ``curr``. Both are
    expressed with each submap multiplied by its cumulative scale correction.
    """
    shared = curr.overlap_timestamps()
    prev_poses = prev.reference_poses(shared)
    curr_poses = curr.reference_poses(shared)
    ratio = estimate_inter_submap_scale(prev_poses, curr_poses) if estimate_scale else 1.0
    curr_scale = prev_scale * ratio
    H = pairwise_registration(
        [p.scaled(prev_scale) for p in prev_poses],
        [p.scaled(curr_scale) for p in curr_poses],
    )
    return H, ratio


def apply_to_submap(sp: SubmapPrediction, st: SubmapTransform) -> SubmapPrediction:
    """Express every pose and pointmap of ``sp`` in the global frame."""
    if sp.k != st.k:
        raise ValueError(f"submap index {sp.k} does not match transform index {st.k}")
    frames = []
    for f in sp.frames:
        pts = st.apply_points(f.pointmap.reshape(-1, 3)).reshape(f.pointmap.shape)
        frames.append(
            FramePrediction(
                f.t, f.c, f.intrinsics, st.apply_pose(f.pose), pts, f.confidence, f.valid_mask
            )
        )
    return sp.with_frames(frames)
