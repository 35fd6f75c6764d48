"""Canonical aggregation, Gaussian displacement smoothing and the 3D
thin-plate-spline warp (kernel phi(r) = r)."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import DegenerateConfigurationError, InsufficientDataError
from .geometry import umeyama_align

MAD_TO_SIGMA = 1.4826
MAD_GATE = 3.0
COND_WARN = 1e12


class IllConditionedWarning(RuntimeWarning):
    pass


def aggregate_canonical(observations) -> np.ndarray:
    """MAD-filtered mean of a control point's observations.

    An observation is dropped when any coordinate lies further than
    ``3 * 1.4826 * MAD`` from that coordinate's median (with MAD = 0 only
    the exact median survives). If nothing survives, the componentwise
    median is returned.
    """
    obs = np.asarray(observations, dtype=np.float64).reshape(-1, 3)
    if obs.shape[0] == 0:
        raise InsufficientDataError("cannot aggregate an empty observation set")
    if obs.shape[0] == 1:
        return obs[0].copy()
    med = np.median(obs, axis=0)
    dev = np.abs(obs - med)
    mad = np.median(dev, axis=0)
    keep = np.all(dev <= MAD_GATE * MAD_TO_SIGMA * mad, axis=1)
    if not keep.any():
        return med
    return obs[keep].mean(axis=0)


@dataclass(frozen=True)
class SmoothingParams:
    Q: int = 32
    sigma: float | None = None

    def __post_init__(self):
        if self.Q < 1:
            raise ValueError("Q must be >= 1")


def smooth_displacements(points, canonical, params: SmoothingParams = SmoothingParams()):
    """Gaussian-weighted average of neighbour displacements.

    Returns ``points + smoothed(canonical - points)``. Each point's
    neighbourhood is its Q nearest neighbours (itself included); the
    bandwidth defaults to the median distance to the Q-th neighbour.
    """
    pts = np.asarray(points, dtype=np.float64)
    can = np.asarray(canonical, dtype=np.float64)
    if pts.shape != can.shape:
        raise ValueError("points and canonical differ in shape")
    n = pts.shape[0]
    if n < 2:
        return can.copy()
    disp = can - pts
    q = min(params.Q, n)
    dist, idx = cKDTree(pts).query(pts, k=q)
    dist = dist.reshape(n, q)
    idx = idx.reshape(n, q)
    sigma = params.sigma if params.sigma is not None else float(np.median(dist[:, -1]))
    if sigma > 0:
        wt = np.exp(-(dist**2) / (2.0 * sigma**2))
    else:
        wt = np.ones_like(dist)
    wt /= wt.sum(axis=1, keepdims=True)
    return pts + np.einsum("nq,nqd->nd", wt, disp[idx])


@dataclass(frozen=True)
class TpsModel:
    """``F(x) = A x + b + sum_i W_i |x - sources_i|``."""

    A: np.ndarray
    b: np.ndarray
    W: np.ndarray
    sources: np.ndarray
    lam: float

    @classmethod
    def identity(cls) -> TpsModel:
        return cls(np.eye(3), np.zeros(3), np.zeros((0, 3)), np.zeros((0, 3)), 0.0)

    @property
    def n_sources(self) -> int:
        return self.sources.shape[0]

    def __call__(self, points) -> np.ndarray:
        return tps_apply(self, points)

    def to_bytes(self) -> bytes:
        """Little-endian binary64: P, lambda, A, b, W, sources (P stored as float)."""
        head = struct.pack("<dd", float(self.n_sources), float(self.lam))
        body = np.concatenate(
            [self.A.ravel(), self.b.ravel(), self.W.ravel(), self.sources.ravel()]
        ).astype("<f8")
        return head + body.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> TpsModel:
        if len(data) < 16:
            raise ValueError("TPS blob too short")
        p, lam = struct.unpack("<dd", data[:16])
        p = int(p)
        vals = np.frombuffer(data[16:], dtype="<f8")
        if vals.size != 12 + 6 * p:
            raise ValueError(f"TPS blob holds {vals.size} values, expected {12 + 6 * p}")
        A = vals[:9].reshape(3, 3).copy()
        b = vals[9:12].copy()
        W = vals[12 : 12 + 3 * p].reshape(p, 3).copy()
        S = vals[12 + 3 * p :].reshape(p, 3).copy()
        return cls(A, b, W, S, lam)


def _affine_rank(sources: np.ndarray) -> int:
    centered = sources - sources.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > 1e-9 * sv[0]))


def _fallback_fit(src: np.ndarray, dst: np.ndarray, lam: float) -> TpsModel:
    """Best-fit affine, then rigid, then pure translation, with no kernel part."""
    empty = np.zeros((0, 3))
    rank = _affine_rank(src) if src.shape[0] > 1 else 0
    if rank == 3 and src.shape[0] >= 4:
        X = np.hstack([src, np.ones((src.shape[0], 1))])
        coef, *_ = np.linalg.lstsq(X, dst, rcond=None)
        return TpsModel(coef[:3].T.copy(), coef[3].copy(), empty, empty, lam)
    if rank >= 2 and src.shape[0] >= 3:
        try:
            sim = umeyama_align(src, dst, with_scale=False)
            return TpsModel(sim.rotation.copy(), sim.translation.copy(), empty, empty, lam)
        except DegenerateConfigurationError:
            pass
    shift = (dst - src).mean(axis=0) if src.shape[0] else np.zeros(3)
    return TpsModel(np.eye(3), shift, empty, empty, lam)


def tps_fit(sources, targets, lam: float = 0.0) -> TpsModel:
    """Regularized thin-plate-spline fit from ``sources`` to ``targets``.

    Solves ``[[K - lam I, P], [P^T, 0]] [W; (A|b)^T] = [targets; 0]`` with
    ``K_ij = |p_i - p_j|`` and ``P`` the homogeneous sources. The kernel r is
    conditionally negative definite, so the bending energy is ``-tr(W^T K W)``
    and the smoothing term enters with a minus sign. ``lam = 0`` interpolates.

    Fewer than five sources, or sources lying on a plane or line, fall back
    to a best-fit affine (or rigid, or translation) map with no kernel part.
    """
    src = np.asarray(sources, dtype=np.float64)
    dst = np.asarray(targets, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"expected matching (P, 3) arrays, got {src.shape}, {dst.shape}")
    if src.shape[0] == 0:
        raise InsufficientDataError("tps_fit needs at least one control point")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst)) and np.isfinite(lam)):
        raise ValueError("tps_fit inputs must be finite")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    lam = float(lam)
    p = src.shape[0]
    if p < 5 or _affine_rank(src) < 3:
        return _fallback_fit(src, dst, lam)

    # solve on a centred unit-extent copy; W is unchanged by the rescaling
    center = src.mean(axis=0)
    extent = float(np.linalg.norm(src.max(axis=0) - src.min(axis=0)))
    sn = (src - center) / extent
    dn = (dst - center) / extent
    K = cdist(sn, sn)
    M = np.zeros((p + 4, p + 4))
    M[:p, :p] = K - (lam / extent) * np.eye(p)
    M[:p, p : p + 3] = sn
    M[:p, p + 3] = 1.0
    M[p : p + 3, :p] = sn.T
    M[p + 3, :p] = 1.0
    rhs = np.zeros((p + 4, 3))
    rhs[:p] = dn

    lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    rcond, _ = scipy.linalg.lapack.dgecon(lu, np.abs(M).sum(axis=0).max(), norm="1")
    if rcond == 0 or 1.0 / rcond > COND_WARN:
        warnings.warn(
            f"TPS system condition number estimate {1.0 / max(rcond, 1e-300):.3g} exceeds 1e12",
            IllConditionedWarning,
            stacklevel=2,
        )
    sol = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    W = sol[:p]
    A = sol[p : p + 3].T.copy()
    b = extent * sol[p + 3] + center - A @ center
    return TpsModel(A, b, W, src.copy(), lam)


def tps_apply(model: TpsModel, points, block: int = 2_000_000) -> np.ndarray:
    """Evaluate the warp exactly at every input point."""
    pts = np.asarray(points, dtype=np.float64)
    flat = pts.reshape(-1, 3)
    out = flat @ model.A.T + model.b
    p = model.n_sources
    if p:
        rows = max(1, block // p)
        for s in range(0, flat.shape[0], rows):
            out[s : s + rows] += cdist(flat[s : s + rows], model.sources) @ model.W
    return out.reshape(pts.shape)


def data_residual(model: TpsModel, sources, targets) -> float:
    """Sum of squared fit errors at the control points."""
    diff = tps_apply(model, sources) - np.asarray(targets, dtype=np.float64)
    return float(np.sum(diff**2))


def default_lambda(sources, rel: float = 1e-2) -> float:
    """``rel`` times the bounding-box diagonal of the sources (kernel units: m)."""
    src = np.asarray(sources, dtype=np.float64)
    if src.shape[0] == 0:
        return 0.0
    return rel * float(np.linalg.norm(src.max(axis=0) - src.min(axis=0)))
