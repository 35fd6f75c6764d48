"""Trajectory and geometry metrics plus the catastrophic-failure rule."""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientDataError
from .geometry import Pose, Sim3, rotation_angle_deg, umeyama_align

CLAMP_M = 10.0
FAILURE_FRACTION = 0.05

REPORT_COLUMNS = (
    "ate_rmse",
    "rte_rmse",
    "rre_rmse",
    "accuracy",
    "completeness",
    "chamfer",
    "gt_length",
    "failed",
)


@dataclass(frozen=True)
class AlignmentReport:
    ate_rmse: float
    rte_rmse: float
    rre_rmse: float
    accuracy: float
    completeness: float
    chamfer: float
    gt_length: float
    failed: bool

    @classmethod
    def failure(cls, gt_length: float) -> AlignmentReport:
        """Report for a run that aborted before producing geometry."""
        inf = float("inf")
        return cls(inf, inf, inf, inf, inf, inf, gt_length, True)

    def csv_header(self) -> str:
        return ",".join(f.name for f in fields(self))

    def csv_row(self) -> str:
        vals = []
        for f in fields(self):
            v = getattr(self, f.name)
            vals.append(str(int(v)) if isinstance(v, bool) else repr(float(v)))
        return ",".join(vals)

    def to_csv(self, label: str | None = None) -> str:
        head, row = self.csv_header(), self.csv_row()
        if label is not None:
            head, row = "strategy," + head, f"{label}," + row
        return head + "\n" + row + "\n"

    def pretty(self, label: str | None = None) -> str:
        units = {
            "ate_rmse": "m", "rte_rmse": "m", "rre_rmse": "deg", "accuracy": "m",
            "completeness": "m", "chamfer": "m", "gt_length": "m", "failed": "",
        }
        buf = io.StringIO()
        if label:
            buf.write(f"strategy      {label}\n")
        for name, val in asdict(self).items():
            shown = ("yes" if val else "no") if isinstance(val, bool) else f"{val:.6g}"
            buf.write(f"{name:<13} {shown} {units[name]}\n".rstrip() + "\n")
        return buf.getvalue()


def _centers(traj) -> np.ndarray:
    return np.array([p.center for p in traj], dtype=np.float64)


def _check_pair(pred, gt, minimum: int):
    if len(pred) != len(gt):
        raise ValueError(f"trajectory lengths differ: {len(pred)} vs {len(gt)}")
    if len(pred) < minimum:
        raise InsufficientDataError(f"need >= {minimum} poses, got {len(pred)}")


def align_and_ate(pred_traj, gt_traj) -> tuple[Sim3, float]:
    """Umeyama-align predicted camera centres onto ground truth, with scale.

    Returns the alignment (reused for point clouds) and the RMS of the
    remaining centre distances.
    """
    _check_pair(pred_traj, gt_traj, 3)
    pc, gc = _centers(pred_traj), _centers(gt_traj)
    S = umeyama_align(pc, gc, with_scale=True)
    err = np.linalg.norm(S.apply(pc) - gc, axis=1)
    return S, float(np.sqrt(np.mean(err**2)))


def rte_rre(pred_traj, gt_traj, gap: int = 1, scale: float = 1.0) -> tuple[float, float]:
    """RMS relative translation (m) and rotation (deg) errors at a frame gap.

    ``scale`` multiplies the predicted translations first (normally the
    Umeyama scale from :func:`align_and_ate`).
    """
    _check_pair(pred_traj, gt_traj, gap + 1)
    t_err, r_err = [], []
    for i in range(len(gt_traj) - gap):
        rel_gt = gt_traj[i].inverse() @ gt_traj[i + gap]
        p0, p1 = pred_traj[i].scaled(scale), pred_traj[i + gap].scaled(scale)
        rel_pred = p0.inverse() @ p1
        E = rel_gt.inverse() @ rel_pred
        t_err.append(np.linalg.norm(E.translation))
        r_err.append(rotation_angle_deg(E.rotation))
    t_err, r_err = np.asarray(t_err), np.asarray(r_err)
    return float(np.sqrt(np.mean(t_err**2))), float(np.sqrt(np.mean(r_err**2)))


def nearest_distances(query, reference) -> np.ndarray:
    """Exact Euclidean distance from each query point to its nearest reference point."""
    q = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    ref = np.asarray(reference, dtype=np.float64).reshape(-1, 3)
    _, idx = cKDTree(ref).query(q, k=1)
    # recomputed so the value matches a brute-force evaluation bit for bit
    return np.sqrt(np.sum((q - ref[idx]) ** 2, axis=1))


def geometry_metrics(pred_cloud, gt_cloud, clamp: float = CLAMP_M) -> tuple[float, float, float]:
    """Accuracy, completeness and Chamfer distance with per-point clamping."""
    pred = np.asarray(pred_cloud, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_cloud, dtype=np.float64).reshape(-1, 3)
    if pred.shape[0] == 0 or gt.shape[0] == 0:
        raise InsufficientDataError("geometry metrics need non-empty clouds")
    acc = float(np.mean(np.minimum(nearest_distances(pred, gt), clamp)))
    comp = float(np.mean(np.minimum(nearest_distances(gt, pred), clamp)))
    return acc, comp, (acc + comp) / 2.0


def trajectory_length(traj) -> float:
    c = _centers(traj)
    return float(np.sum(np.linalg.norm(np.diff(c, axis=0), axis=1)))


def is_failure(ate: float, gt_length: float) -> bool:
    return bool(ate > FAILURE_FRACTION * gt_length)


def evaluate(pred_trajs: dict[int, list[Pose]], gt_trajs: dict[int, list[Pose]],
             pred_cloud, gt_cloud, gap: int = 1, clamp: float = CLAMP_M) -> AlignmentReport:
    """Full report over one or more cameras.

    ``pred_trajs``/``gt_trajs`` map camera index to a per-timestamp pose
    list. ATE uses every camera centre; RTE/RRE pool the per-camera relative
    errors; the trajectory length comes from camera 0.
    """
    cams = sorted(gt_trajs)
    if sorted(pred_trajs) != cams:
        raise ValueError("predicted and ground-truth camera sets differ")
    pred_all = [p for c in cams for p in pred_trajs[c]]
    gt_all = [p for c in cams for p in gt_trajs[c]]
    S, ate = align_and_ate(pred_all, gt_all)

    sq_t, sq_r, n = 0.0, 0.0, 0
    for c in cams:
        m = len(gt_trajs[c]) - gap
        if m <= 0:
            continue
        rte, rre = rte_rre(pred_trajs[c], gt_trajs[c], gap=gap, scale=S.scale)
        sq_t += rte**2 * m
        sq_r += rre**2 * m
        n += m
    rte_all = float(np.sqrt(sq_t / n)) if n else 0.0
    rre_all = float(np.sqrt(sq_r / n)) if n else 0.0

    acc, comp, chamfer = geometry_metrics(S.apply(pred_cloud), gt_cloud, clamp=clamp)
    length = trajectory_length(gt_trajs[cams[0]])
    return AlignmentReport(ate, rte_all, rre_all, acc, comp, chamfer, length, is_failure(ate, length))
