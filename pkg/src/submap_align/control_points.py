"""Control points: voxel-based generation in overlap regions, pixel-bridged
correspondence between consecutive submaps, and forward propagation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .geometry import project
from .prediction import SubmapPrediction


class Anchor(NamedTuple):
    t: int
    c: int
    u: int
    v: int


class Observation(NamedTuple):
    point: np.ndarray
    anchor: Anchor


@dataclass
class ControlPoint:
    id: int
    observations: dict[int, Observation] = field(default_factory=dict)
    alive: bool = True

    @property
    def submaps(self) -> list[int]:
        return sorted(self.observations)

    @property
    def last_submap(self) -> int:
        return max(self.observations)

    def points(self) -> np.ndarray:
        return np.array([self.observations[k].point for k in self.submaps])


@dataclass(frozen=True)
class VoxelGrid:
    origin: np.ndarray
    size: float

    @classmethod
    def fit(cls, points, size: float) -> VoxelGrid:
        if not size > 0:
            raise ValueError("voxel size must be positive")
        return cls(np.asarray(points, dtype=np.float64).min(axis=0), float(size))

    def index_of(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.floor((pts - self.origin) / self.size).astype(np.int64)

    def center_of(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=np.float64) + 0.5) * self.size


def voxel_generate(points, voxel_size: float, blocked=None) -> np.ndarray:
    """Indices of one representative point per occupied voxel.

    The representative is the point closest to the voxel centre (ties go to
    the lowest input index). Voxels listed in ``blocked`` (index triples in
    the grid anchored at the componentwise minimum of ``points``) are
    skipped. Output is ordered by voxel index.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    grid = VoxelGrid.fit(pts, voxel_size)
    vox = grid.index_of(pts)
    d2 = np.sum((pts - grid.center_of(vox)) ** 2, axis=1)
    order = np.lexsort((np.arange(len(pts)), d2, vox[:, 2], vox[:, 1], vox[:, 0]))
    sv = vox[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(sv[1:] != sv[:-1], axis=1)
    chosen = order[first]
    if blocked:
        keep = np.array([tuple(v) not in blocked for v in vox[chosen]], dtype=bool)
        chosen = chosen[keep]
    return chosen


def submap_radius(sp: SubmapPrediction) -> float:
    """Largest distance of a valid point to the valid-point centroid."""
    pts = sp.valid_points()
    if pts.shape[0] == 0:
        return 0.0
    return float(np.max(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))


def _overlap_keys(a: SubmapPrediction, b: SubmapPrediction, timestamps):
    return [
        (t, c)
        for t in timestamps
        for c in a.cameras
        if a.has_frame(t, c) and b.has_frame(t, c)
    ]


class PropagationHit(NamedTuple):
    found: np.ndarray
    anchors: np.ndarray  # (N, 4) int: t, c, u, v
    error: np.ndarray
    points: np.ndarray  # observation in the next submap


def propagate_points(points, curr: SubmapPrediction, nxt: SubmapPrediction,
                     tau: float, subpixel: bool = True) -> PropagationHit:
    """Carry observations in ``curr`` over to ``nxt`` through their shared images.

    Each point is projected into every image of the overlap using ``curr``'s
    cameras. A projection counts when the rounded pixel is inside the image,
    in front of the camera, valid in both submaps, and ``curr``'s pointmap at
    that pixel lies within ``tau`` (3D distance) of the point. The lowest
    error wins; ties keep the earliest (t, c).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    best_err = np.full(n, np.inf)
    anchors = np.full((n, 4), -1, dtype=np.int64)
    out = np.full((n, 3), np.nan)
    for t, c in _overlap_keys(curr, nxt, nxt.overlap_timestamps()):
        fa = curr.frame(t, c)
        fb = nxt.frame(t, c)
        intr = fa.intrinsics
        proj = project(pts, fa.pose, intr)
        ok = proj.in_front
        px = np.where(ok[:, None], proj.pixel, -1.0)
        u = np.floor(px[:, 0] + 0.5).astype(np.int64)
        v = np.floor(px[:, 1] + 0.5).astype(np.int64)
        h, w = fa.shape
        ok &= (u >= 0) & (u < w) & (v >= 0) & (v < h)
        ui, vi = np.where(ok, u, 0), np.where(ok, v, 0)
        ok &= fa.valid_mask[vi, ui] & fb.valid_mask[vi, ui]
        err = np.linalg.norm(fa.pointmap[vi, ui] - pts, axis=1)
        better = ok & (err < tau) & (err < best_err)
        best_err[better] = err[better]
        anchors[better] = np.stack([np.full(n, t), np.full(n, c), u, v], axis=1)[better]
        nb = fb.pointmap[vi[better], ui[better]].astype(np.float64)
        if subpixel:
            nb = pts[better] + (nb - fa.pointmap[vi[better], ui[better]])
        out[better] = nb
    return PropagationHit(np.isfinite(best_err), anchors, best_err, out)


def propagate(cp: ControlPoint, curr: SubmapPrediction, nxt: SubmapPrediction,
              tau: float, subpixel: bool = True) -> ControlPoint:
    """Extend one control point from ``curr`` into ``nxt`` or terminate it."""
    if not cp.alive or curr.k not in cp.observations:
        return cp
    hit = propagate_points(cp.observations[curr.k].point, curr, nxt, tau, subpixel)
    if hit.found[0]:
        cp.observations[nxt.k] = Observation(hit.points[0], Anchor(*map(int, hit.anchors[0])))
    else:
        cp.alive = False
    return cp


@dataclass
class ControlPool:
    """Global pool of control points and their per-submap observations."""

    points: list[ControlPoint] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    def new(self, observations: dict[int, Observation]) -> ControlPoint:
        cp = ControlPoint(len(self.points), dict(observations))
        self.points.append(cp)
        return cp

    def alive_at(self, k: int) -> list[ControlPoint]:
        return [cp for cp in self.points if cp.alive and k in cp.observations]

    def observed_in(self, k: int) -> list[ControlPoint]:
        return [cp for cp in self.points if k in cp.observations]

    def propagate_all(self, curr: SubmapPrediction, nxt: SubmapPrediction,
                      tau: float, subpixel: bool = True) -> list[ControlPoint]:
        """Forward-propagate every live track ending at ``curr``; returns the survivors."""
        live = self.alive_at(curr.k)
        if not live:
            return []
        pts = np.array([cp.observations[curr.k].point for cp in live])
        hit = propagate_points(pts, curr, nxt, tau, subpixel)
        survivors = []
        for i, cp in enumerate(live):
            if hit.found[i]:
                cp.observations[nxt.k] = Observation(
                    hit.points[i], Anchor(*map(int, hit.anchors[i]))
                )
                survivors.append(cp)
            else:
                cp.alive = False
        return survivors

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["id", "k", "x", "y", "z", "t", "c", "u", "v"])
            for cp in self.points:
                for k in cp.submaps:
                    p, a = cp.observations[k]
                    wr.writerow([cp.id, k, *(repr(float(x)) for x in p), a.t, a.c, a.u, a.v])


def overlap_candidates(prev: SubmapPrediction, curr: SubmapPrediction):
    """Valid points of ``prev``'s images shared with ``curr``, with anchors."""
    pts, anchors = [], []
    for t, c in _overlap_keys(prev, curr, curr.overlap_timestamps()):
        f = prev.frame(t, c)
        v, u = np.nonzero(f.valid_mask)
        pts.append(f.pointmap[v, u])
        anchors.append(np.stack([np.full(len(u), t), np.full(len(u), c), u, v], axis=1))
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 4), dtype=np.int64)
    return np.concatenate(pts).astype(np.float64), np.concatenate(anchors).astype(np.int64)


def seed_overlap_controls(prev: SubmapPrediction, curr: SubmapPrediction, pool: ControlPool,
                          voxel_size: float, propagated=()) -> list[ControlPoint]:
    """Create control points in voxels of the overlap not already covered.

    Candidates are ``prev``'s valid overlap pixels; voxels holding the
    ``prev`` observation of any control point in ``propagated`` are blocked.
    Each new point is observed in ``prev`` and, through the same pixel, in
    ``curr``; pixels masked out in ``curr`` are skipped.
    """
    cand, anchors = overlap_candidates(prev, curr)
    if cand.shape[0] == 0:
        return []
    grid = VoxelGrid.fit(cand, voxel_size)
    blocked = set()
    if propagated:
        held = np.array([cp.observations[prev.k].point for cp in propagated])
        blocked = {tuple(v) for v in grid.index_of(held)}
    created = []
    for i in voxel_generate(cand, voxel_size, blocked):
        t, c, u, v = (int(x) for x in anchors[i])
        fc = curr.frame(t, c)
        if not fc.valid_mask[v, u]:
            continue
        a = Anchor(t, c, u, v)
        created.append(
            pool.new(
                {
                    prev.k: Observation(cand[i].copy(), a),
                    curr.k: Observation(np.asarray(fc.pointmap[v, u], dtype=np.float64), a),
                }
            )
        )
    return created
