"""Synthetic stand-in for a feed-forward reconstruction model.

Builds a box-world scene (ground square, boundary walls, random boxes), a
smooth camera-rig trajectory through it, renders exact depth by analytic
ray casting, and corrupts per-submap predictions with one of three
discrepancy regimes:

``case1``  global depth scale per submap (a similarity explains it);
``case2``  per-submap focal-length error plus depth scale (a projective map
           explains it per image);
``case3``  smooth, spatially varying multiplicative depth distortion.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import SceneGenerationError
from .geometry import Intrinsics, Pose, Sim3, axis_angle_rotation, rot_y
from .prediction import FramePrediction, StreamConfig, SubmapPrediction, segment_stream

REGIMES = ("none", "case1", "case2", "case3")
MIN_VISIBLE = 0.2
CAMERA_HEIGHT = 1.6
RIG_RADIUS = 0.2


@dataclass(frozen=True)
class SceneParams:
    seed: int = 0
    n_points: int = 20000
    extent: float = 50.0
    n_frames: int = 20
    n_cameras: int = 3
    width: int = 64
    height: int = 48
    n_boxes: int = 16
    hfov_deg: float = 90.0
    pitch_deg: float = 5.0
    ground_only: bool = False

    def __post_init__(self):
        if self.n_points < 1000:
            raise ValueError("n_points must be >= 1000")
        if self.n_cameras < 1 or self.n_frames < 1:
            raise ValueError("need at least one camera and one frame")
        if self.extent <= 0:
            raise ValueError("extent must be positive")


@dataclass
class SyntheticScene:
    params: SceneParams
    boxes: np.ndarray  # (B, 2, 3): lower and upper corners
    ground_half: float
    surface_points: np.ndarray
    gt_trajectory: list[Pose]
    rig: list[Pose]
    intrinsics: list[Intrinsics]

    @property
    def seed(self) -> int:
        return self.params.seed

    @property
    def n_frames(self) -> int:
        return len(self.gt_trajectory)

    @property
    def n_cameras(self) -> int:
        return len(self.rig)

    def camera_pose(self, t: int, c: int) -> Pose:
        return self.gt_trajectory[t] @ self.rig[c]

    def cast(self, origin, dirs) -> np.ndarray:
        """Ray parameter of the first hit for rays ``origin + s * dirs`` (inf on miss)."""
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(dirs, dtype=np.float64)
        best = np.full(d.shape[0], np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -o[2] / d[:, 2]
            hit = (d[:, 2] < 0) & (s > 0)
            p = o[:2] + s[:, None] * d[:, :2]
            hit &= np.all(np.abs(p) <= self.ground_half, axis=1)
            best = np.where(hit, s, best)
            for lo, hi in self.boxes:
                t1 = (lo - o) / d
                t2 = (hi - o) / d
                tmin = np.nanmax(np.minimum(t1, t2), axis=1)
                tmax = np.nanmin(np.maximum(t1, t2), axis=1)
                hit = (tmin <= tmax) & (tmin > 1e-9)
                best = np.where(hit & (tmin < best), tmin, best)
        return best

    def render_depth(self, t: int, c: int) -> tuple[np.ndarray, np.ndarray]:
        """Exact camera-frame depth and hit mask for image (t, c)."""
        intr = self.intrinsics[c]
        pose = self.camera_pose(t, c)
        rays = intr.pixel_rays().reshape(-1, 3)  # unit z, so ray parameter == depth
        depth = self.cast(pose.translation, rays @ pose.rotation.T)
        hit = np.isfinite(depth)
        shape = (intr.height, intr.width)
        return np.where(hit, depth, 0.0).reshape(shape), hit.reshape(shape)

    def gt_pointmap(self, t: int, c: int) -> tuple[np.ndarray, np.ndarray]:
        depth, hit = self.render_depth(t, c)
        cam = self.intrinsics[c].pixel_rays() * depth[..., None]
        pts = self.camera_pose(t, c).apply(cam.reshape(-1, 3)).reshape(cam.shape)
        pts[~hit] = np.nan
        return pts, hit

    def gt_cloud(self, timestamps=None) -> np.ndarray:
        ts = range(self.n_frames) if timestamps is None else timestamps
        out = []
        for t in ts:
            for c in range(self.n_cameras):
                pts, hit = self.gt_pointmap(t, c)
                out.append(pts[hit])
        return np.concatenate(out)

    def gt_trajectories(self) -> dict[int, list[Pose]]:
        return {c: [self.camera_pose(t, c) for t in range(self.n_frames)] for c in range(self.n_cameras)}

    def on_primitive_distance(self, points) -> np.ndarray:
        """Distance from each point to the nearest primitive surface."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        g = np.abs(pts[:, 2])
        out = np.where(np.all(np.abs(pts[:, :2]) <= self.ground_half + 1e-9, axis=1), g, np.inf)
        for lo, hi in self.boxes:
            q = np.maximum(lo - pts, 0) + np.maximum(pts - hi, 0)
            outside = np.linalg.norm(q, axis=1)
            inside = np.min(np.minimum(pts - lo, hi - pts), axis=1)
            out = np.minimum(out, np.where(outside > 0, outside, np.abs(inside)))
        return out


def _camera_rotation(heading: float, pitch: float) -> np.ndarray:
    """Camera-to-world rotation for x right, y down, z forward in a z-up world."""
    fwd = np.array([math.cos(heading) * math.cos(pitch), math.sin(heading) * math.cos(pitch),
                    -math.sin(pitch)])
    right = np.array([math.sin(heading), -math.cos(heading), 0.0])
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)


def _trajectory(rng, n_frames: int, extent: float, pitch: float):
    step = extent / (2.0 * max(n_frames - 1, 1))
    kmax = 1.5 / extent
    seg = 5
    pos = np.zeros((n_frames, 2))
    heads = np.zeros(n_frames)
    heading = 0.0
    kappa = 0.0
    for i in range(1, n_frames):
        if (i - 1) % seg == 0:
            kappa = rng.uniform(-kmax, kmax)
        dtheta = kappa * step
        chord = step if abs(dtheta) < 1e-12 else 2.0 * math.sin(dtheta / 2.0) / kappa
        mid = heading + dtheta / 2.0
        pos[i] = pos[i - 1] + chord * np.array([math.cos(mid), math.sin(mid)])
        heading += dtheta
        heads[i] = heading
    pos -= (pos.min(axis=0) + pos.max(axis=0)) / 2.0
    traj = []
    for (x, y), h in zip(pos, heads):
        traj.append(Pose(_camera_rotation(h, pitch), np.array([x, y, CAMERA_HEIGHT])))
    return traj, pos


def _rig(n_cameras: int) -> list[Pose]:
    rig = [Pose.identity()]
    for c in range(1, n_cameras):
        yaw = 2.0 * math.pi * c / n_cameras
        center = RIG_RADIUS * np.array([math.sin(yaw), 0.0, math.cos(yaw) - 1.0])
        rig.append(Pose(rot_y(yaw), center))
    return rig


def _segment_clearance(path: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Smallest distance from densely sampled path points to a box footprint."""
    a, b = path[:-1], path[1:]
    if len(path) == 1:
        samples = path
    else:
        f = np.linspace(0.0, 1.0, 9)[:, None, None]
        samples = (a[None] + f * (b - a)[None]).reshape(-1, 2)
    q = np.maximum(lo[:2] - samples, 0) + np.maximum(samples - hi[:2], 0)
    return float(np.min(np.linalg.norm(q, axis=1)))


def _sample_surfaces(rng, boxes, half: float, n: int) -> np.ndarray:
    # faces as (origin, edge_u, edge_v)
    faces = [(np.array([-half, -half, 0.0]), np.array([2 * half, 0, 0.0]), np.array([0, 2 * half, 0.0]))]
    for lo, hi in boxes:
        dx, dy, dz = hi - lo
        ex, ey, ez = np.array([dx, 0, 0.0]), np.array([0, dy, 0.0]), np.array([0, 0, dz])
        faces += [
            (np.array([lo[0], lo[1], hi[2]]), ex, ey),
            (lo.copy(), ex, ez),
            (np.array([lo[0], hi[1], lo[2]]), ex, ez),
            (lo.copy(), ey, ez),
            (np.array([hi[0], lo[1], lo[2]]), ey, ez),
        ]
    areas = np.array([np.linalg.norm(np.cross(u, v)) for _, u, v in faces])
    which = rng.choice(len(faces), size=n, p=areas / areas.sum())
    ab = rng.random((n, 2))
    origins = np.array([f[0] for f in faces])[which]
    us = np.array([f[1] for f in faces])[which]
    vs = np.array([f[2] for f in faces])[which]
    return origins + ab[:, :1] * us + ab[:, 1:] * vs


def generate_scene(params: SceneParams | None = None, **overrides) -> SyntheticScene:
    """Deterministic scene, trajectory and rig from ``params.seed``.

    Raises:
        SceneGenerationError: some camera sees geometry in fewer than 20% of
            its pixels.
    """
    if params is None:
        params = SceneParams(**overrides)
    elif overrides:
        params = SceneParams(**{**asdict(params), **overrides})
    rng = np.random.default_rng(params.seed)
    E = params.extent
    half = E / 2.0
    pitch = math.radians(params.pitch_deg)
    traj, path = _trajectory(rng, params.n_frames, E, pitch)

    boxes = []
    if not params.ground_only:
        wall_h, th = E / 8.0, 0.5
        boxes += [
            ([-half, half - th, 0.0], [half, half, wall_h]),
            ([-half, -half, 0.0], [half, -half + th, wall_h]),
            ([half - th, -half, 0.0], [half, half, wall_h]),
            ([-half, -half, 0.0], [-half + th, half, wall_h]),
        ]
        tries = 0
        placed = 0
        while placed < params.n_boxes and tries < 200 * max(params.n_boxes, 1):
            tries += 1
            size = rng.uniform(1.0, max(E / 10.0, 1.5), size=2)
            height = rng.uniform(1.5, max(E / 8.0, 2.0))
            ctr = rng.uniform(-half + 1.0 + size / 2, half - 1.0 - size / 2)
            lo = np.array([ctr[0] - size[0] / 2, ctr[1] - size[1] / 2, 0.0])
            hi = np.array([ctr[0] + size[0] / 2, ctr[1] + size[1] / 2, height])
            if _segment_clearance(path, lo, hi) < 3.0:
                continue
            boxes.append((lo, hi))
            placed += 1
    box_arr = np.array(boxes, dtype=np.float64).reshape(-1, 2, 3)

    fx = params.width / 2.0 / math.tan(math.radians(params.hfov_deg) / 2.0)
    intr = Intrinsics(fx, fx, (params.width - 1) / 2.0, (params.height - 1) / 2.0,
                      params.width, params.height)
    scene = SyntheticScene(
        params=params,
        boxes=box_arr,
        ground_half=half,
        surface_points=_sample_surfaces(rng, box_arr, half, params.n_points),
        gt_trajectory=traj,
        rig=_rig(params.n_cameras),
        intrinsics=[intr] * params.n_cameras,
    )

    low = []
    for t in range(scene.n_frames):
        for c in range(scene.n_cameras):
            _, hit = scene.render_depth(t, c)
            frac = float(hit.mean())
            if frac < MIN_VISIBLE:
                low.append((t, c, frac))
    if low:
        detail = ", ".join(f"(t={t}, c={c}): {f:.1%}" for t, c, f in low[:10])
        raise SceneGenerationError(
            f"{len(low)} images see geometry in < {MIN_VISIBLE:.0%} of pixels: {detail}"
        )
    return scene


@dataclass(frozen=True)
class SubmapDistortion:
    scale: float
    focal_factor: float
    phase: float
    jitter: Pose


@dataclass(frozen=True)
class DistortionSpec:
    """Per-submap corruption regime.

    Per-submap values are drawn from ``seed`` and the submap index unless
    given explicitly in ``scales`` / ``focal_factors`` / ``phases``.
    """

    regime: str = "none"
    scale_range: tuple[float, float] = (0.5, 2.0)
    scales: dict[int, float] = field(default_factory=dict)
    focal_delta: float = 0.05
    focal_factors: dict[int, float] = field(default_factory=dict)
    alpha: float = 0.05
    beta: float = 3.0 * math.pi
    phases: dict[int, float] = field(default_factory=dict)
    jitter_rot_deg: float = 0.0
    jitter_trans: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range must be positive and ordered")
        if any(s <= 0 for s in self.scales.values()):
            raise ValueError("scales must be positive")

    def for_submap(self, k: int) -> SubmapDistortion:
        rng = np.random.default_rng([self.seed, k])
        lo, hi = self.scale_range
        scale_draw = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        focal_draw = 1.0 + self.focal_delta * rng.uniform(-1.0, 1.0)
        phase_draw = rng.uniform(0.0, 2.0 * math.pi)
        axis = rng.standard_normal(3)
        ang = math.radians(self.jitter_rot_deg) * rng.uniform(-1.0, 1.0)
        shift = rng.standard_normal(3)
        shift *= self.jitter_trans / max(np.linalg.norm(shift), 1e-12)
        jitter = Pose(axis_angle_rotation(axis, ang), shift)

        scale = 1.0
        focal = 1.0
        phase = 0.0
        if self.regime in ("case1", "case2"):
            scale = self.scales.get(k, scale_draw)
        if self.regime == "case2":
            focal = self.focal_factors.get(k, focal_draw)
        if self.regime == "case3":
            phase = self.phases.get(k, phase_draw)
        return SubmapDistortion(scale, focal, phase, jitter)

    def depth_factor(self, k: int, intr: Intrinsics) -> np.ndarray:
        """Multiplicative depth distortion ``f(D) / D`` per pixel."""
        if self.regime != "case3":
            return np.ones((intr.height, intr.width))
        phase = self.for_submap(k).phase
        v, u = np.mgrid[0 : intr.height, 0 : intr.width].astype(np.float64)
        return 1.0 + self.alpha * np.sin(self.beta * u / intr.width + phase) * np.cos(
            self.beta * v / intr.height + phase
        )

    def to_json(self) -> dict:
        d = asdict(self)
        for key in ("scales", "focal_factors", "phases"):
            d[key] = {str(k): v for k, v in d[key].items()}
        d["scale_range"] = list(d["scale_range"])
        return d

    @classmethod
    def from_json(cls, d: dict) -> DistortionSpec:
        d = dict(d)
        for key in ("scales", "focal_factors", "phases"):
            d[key] = {int(k): float(v) for k, v in d.get(key, {}).items()}
        if "scale_range" in d:
            d["scale_range"] = tuple(d["scale_range"])
        return cls(**d)


def submap_frame(scene: SyntheticScene, timestamps, spec: DistortionSpec, k: int) -> Sim3:
    """World-to-submap similarity used when rendering submap ``k``."""
    dist = spec.for_submap(k)
    first = scene.camera_pose(timestamps[0], 0)
    return Sim3(dist.scale, dist.jitter.rotation, dist.jitter.translation) @ Sim3.from_pose(
        first.inverse()
    )


def render_submap(scene: SyntheticScene, timestamps, spec: DistortionSpec, k: int,
                  overlap_count: int = 0) -> SubmapPrediction:
    """Simulated prediction for submap ``k`` covering ``timestamps``."""
    dist = spec.for_submap(k)
    frame = submap_frame(scene, timestamps, spec, k)
    frames = []
    for t in timestamps:
        for c in range(scene.n_cameras):
            intr = scene.intrinsics[c]
            depth, hit = scene.render_depth(t, c)
            factor = spec.depth_factor(k, intr)
            pred_intr = Intrinsics(
                intr.fx * dist.focal_factor, intr.fy * dist.focal_factor,
                intr.cx, intr.cy, intr.width, intr.height,
            )
            cam = pred_intr.pixel_rays() * (depth * factor)[..., None]
            pose = frame.transform_pose(scene.camera_pose(t, c))
            pts = pose.apply(dist.scale * cam.reshape(-1, 3)).reshape(cam.shape)
            pts[~hit] = np.nan
            conf = np.where(hit, np.clip(1.0 - np.abs(factor - 1.0), 0.0, 1.0), 0.0)
            frames.append(FramePrediction(t, c, pred_intr, pose, pts, conf, hit))
    return SubmapPrediction(k, frames, overlap_count if k > 0 else 0)


class SyntheticStream:
    """Lazily rendered, index-addressed sequence of submap predictions."""

    def __init__(self, scene: SyntheticScene, L: int, O: int, spec: DistortionSpec):
        self.scene = scene
        self.spec = spec
        self.config = StreamConfig(scene.n_frames, scene.n_cameras, L, O)
        self.segments = segment_stream(self.config)

    def __len__(self) -> int:
        return len(self.segments)

    def __getitem__(self, k: int) -> SubmapPrediction:
        if not 0 <= k < len(self):
            raise IndexError(k)
        return render_submap(self.scene, self.segments[k], self.spec, k, self.config.O)

    def frame(self, k: int) -> Sim3:
        return submap_frame(self.scene, self.segments[k], self.spec, k)

    def true_pair_transform(self, k: int) -> Sim3:
        """Exact map from submap k's frame into submap k-1's frame."""
        return self.frame(k - 1) @ self.frame(k).inverse()


def tum_rows(traj, frame_rate: float):
    from .exports import tum_row

    return [tum_row(t / frame_rate, p) for t, p in enumerate(traj)]


def write_ground_truth(stream: SyntheticStream, path, frame_rate: float = 2.0) -> None:
    scene = stream.scene
    gt = {
        "seed": scene.seed,
        "scene": asdict(scene.params),
        "stream": {"L": stream.config.L, "O": stream.config.O},
        "spec": stream.spec.to_json(),
        "frame_rate": frame_rate,
        "trajectories": {
            str(c): tum_rows(traj, frame_rate) for c, traj in scene.gt_trajectories().items()
        },
    }
    Path(path).write_text(json.dumps(gt, indent=1))


def read_ground_truth(path):
    """Returns (scene params, stream L/O, spec, frame_rate, trajectories)."""
    from .exports import parse_tum_row

    gt = json.loads(Path(path).read_text())
    trajs = {
        int(c): [parse_tum_row(r)[1] for r in rows] for c, rows in gt["trajectories"].items()
    }
    return (
        SceneParams(**gt["scene"]),
        gt["stream"],
        DistortionSpec.from_json(gt["spec"]),
        float(gt["frame_rate"]),
        trajs,
    )
