import numpy as np

from submap_align.evaluation import CLAMP_M
from submap_align.geometry import Intrinsics, Pose, chordal_cost, random_rotation, rot_z
from submap_align.prediction import FramePrediction, SubmapPrediction


def random_pose(rng, spread=5.0):
    return Pose(random_rotation(rng), rng.uniform(-spread, spread, 3))


def random_frame(rng, t=0, c=0, h=6, w=8):
    intr = Intrinsics(10.0, 11.0, (w - 1) / 2, (h - 1) / 2, w, h)
    pts = rng.normal(size=(h, w, 3))
    mask = rng.random((h, w)) > 0.2
    pts[~mask] = np.nan
    conf = rng.random((h, w))
    return FramePrediction(t, c, intr, random_pose(rng), pts, conf, mask)


def random_submap(rng, k=1, timestamps=(0, 1, 2), cameras=(0, 1), overlap=2):
    frames = [random_frame(rng, t, c) for t in timestamps for c in cameras]
    return SubmapPrediction(k, frames, overlap)


def voxel_oracle(points, size):
    """Exhaustive scan: group by voxel, keep the point nearest each centre."""
    m = points.min(axis=0)
    best = {}
    for i, p in enumerate(points):
        v = tuple(int(x) for x in np.floor((p - m) / size))
        c = m + (np.array(v) + 0.5) * size
        d = float(np.sum((p - c) ** 2))
        if v not in best or d < best[v][0]:
            best[v] = (d, i)
    return [best[v][1] for v in sorted(best)]


def smoothing_oracle(points, canonical, Q, sigma=None):
    """Literal double loop over the smoothing formulas."""
    n = len(points)
    q = min(Q, n)
    neigh, kth = [], []
    for i in range(n):
        d = [(float(np.sqrt(np.sum((points[i] - points[j]) ** 2))), j) for j in range(n)]
        d.sort()
        neigh.append(d[:q])
        kth.append(d[q - 1][0])
    if sigma is None:
        sigma = float(np.median(kth))
    out = np.empty_like(points)
    for i in range(n):
        num, den = np.zeros(3), 0.0
        for dist, j in neigh[i]:
            # zero bandwidth (Q = 1) degenerates to equal weights
            w = np.exp(-dist * dist / (2 * sigma * sigma)) if sigma > 0 else 1.0
            num += w * (canonical[j] - points[j])
            den += w
        out[i] = points[i] + num / den
    return out


def grid_rotation_oracle(rots):
    # brute force over Rz angles on a 0.01 degree grid
    grid = np.radians(np.arange(-180.0, 180.0, 0.01))
    best = min(grid, key=lambda g: chordal_cost(rot_z(g), rots))
    return np.degrees(best)


def brute_geometry(pred, gt, clamp=CLAMP_M):
    def one_way(q, ref):
        out = []
        for p in q:
            out.append(min(clamp, float(np.min(np.sqrt(np.sum((ref - p) ** 2, axis=1))))))
        return float(np.mean(out))

    acc, comp = one_way(pred, gt), one_way(gt, pred)
    return acc, comp, (acc + comp) / 2
