"""End-to-end online alignment: filter, register, track control points,
warp, evaluate and export."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines
from .control_points import ControlPool, seed_overlap_controls, submap_radius
from .deformation import (
    SmoothingParams,
    TpsModel,
    aggregate_canonical,
    default_lambda,
    smooth_displacements,
    tps_apply,
    tps_fit,
)
from .errors import ConfigError, DegenerateConfigurationError, StageError
from .evaluation import AlignmentReport, evaluate, trajectory_length
from .exports import export_ply, export_trajectory, submap_color
from .geometry import Pose, Sim3
from .prediction import FramePrediction, SubmapPrediction, confidence_filter, with_mask
from .registration import SubmapTransform, apply_to_submap, extend_chain, register_pair

logger = logging.getLogger(__name__)

STRATEGIES = ("talo", "sim3", "sl4", "none")


@dataclass
class PipelineConfig:
    strategy: str = "talo"
    L: int = 2
    O: int = 2
    voxel_ratio: float = 0.05
    Q: int = 32
    lam: float | None = None  # absolute TPS regularizer; None -> lambda_rel * source extent
    lambda_rel: float = 1e-2
    conf_pct: float = 60.0
    tau_ratio: float = 2.0  # propagation gate = tau_ratio * voxel size
    subpixel_transfer: bool = True
    metric_scale: bool = False
    streaming: bool = False
    rte_gap: int = 1
    frame_rate: float = 2.0
    seed: int = 0
    input: str | None = None
    output: str | None = None
    synth: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 1 <= self.O <= self.L:
            raise ConfigError(f"need 1 <= O <= L, got O={self.O}, L={self.L}")
        if self.strategy == "talo" and not self.metric_scale and self.O < 2:
            raise ConfigError("scale estimation needs O >= 2 (or set metric_scale)")
        if not self.voxel_ratio > 0:
            raise ConfigError("voxel_ratio must be positive")
        if self.Q < 1:
            raise ConfigError("Q must be >= 1")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if not 0 <= self.conf_pct <= 100:
            raise ConfigError("conf_pct must lie in [0, 100]")
        if not self.tau_ratio > 0:
            raise ConfigError("tau_ratio must be positive")
        if self.rte_gap < 1:
            raise ConfigError("rte_gap must be >= 1")
        if not self.frame_rate > 0:
            raise ConfigError("frame_rate must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> PipelineConfig:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class AlignmentResult:
    """Everything the online loop produced for one stream."""

    strategy: str
    submaps: list[SubmapPrediction]  # final, globally aligned (and warped) submaps
    trajectories: dict[int, list[Pose]]
    timestamps: list[int]
    pool: ControlPool | None = None
    scale_corrections: list[float] = field(default_factory=list)
    tps_models: dict[int, TpsModel] = field(default_factory=dict)
    streaming_models: dict[int, TpsModel] = field(default_factory=dict)
    failed: bool = False
    failure_reason: str | None = None
    wall_times: list[float] = field(default_factory=list)

    def cloud(self) -> tuple[np.ndarray, np.ndarray]:
        """All valid points with a per-submap colour."""
        pts, cols = [], []
        for sp in self.submaps:
            p = sp.valid_points()
            pts.append(p)
            cols.append(np.broadcast_to(submap_color(sp.k), p.shape).copy())
        return np.concatenate(pts), np.concatenate(cols)


def filter_submap(sp: SubmapPrediction, pct: float) -> SubmapPrediction:
    """Per-image confidence filtering.

    Images whose confidences are all equal would lose every pixel under the
    strict comparison; those keep their mask unchanged.
    """
    if pct == 0:
        return sp
    frames, kept = [], []
    for f in sp.frames:
        mask = confidence_filter(f, pct)
        if f.valid_mask.any() and not mask.any():
            kept.append(f.key)
            mask = f.valid_mask
        frames.append(with_mask(f, mask))
    if kept:
        logger.warning("submap %d: confidence filter would empty %d image(s) %s; left unfiltered",
                       sp.k, len(kept), kept)
    return sp.with_frames(frames)


def _transform_sim3(sp: SubmapPrediction, S: Sim3) -> SubmapPrediction:
    frames = []
    for f in sp.frames:
        pts = S.apply(f.pointmap.reshape(-1, 3)).reshape(f.pointmap.shape)
        frames.append(FramePrediction(f.t, f.c, f.intrinsics, S.transform_pose(f.pose), pts,
                                      f.confidence, f.valid_mask))
    return sp.with_frames(frames)


def _transform_sl4(sp: SubmapPrediction, H: baselines.Sl4Transform) -> SubmapPrediction:
    frames = []
    for f in sp.frames:
        pts, ok = baselines.apply_sl4(H, f.pointmap.reshape(-1, 3))
        mask = f.valid_mask & ok.reshape(f.shape)
        frames.append(FramePrediction(f.t, f.c, f.intrinsics, baselines.warp_pose_sl4(H, f.pose),
                                      pts.reshape(f.pointmap.shape), f.confidence, mask))
    return sp.with_frames(frames)


def _warp_submap(sp: SubmapPrediction, model: TpsModel) -> SubmapPrediction:
    frames = []
    for f in sp.frames:
        pts = f.pointmap.copy()
        pts[f.valid_mask] = tps_apply(model, f.pointmap[f.valid_mask])
        frames.append(FramePrediction(f.t, f.c, f.intrinsics, f.pose, pts, f.confidence,
                                      f.valid_mask))
    return sp.with_frames(frames)


def fit_submap_warp(pool: ControlPool, k: int, cfg: PipelineConfig,
                    canonical: dict[int, np.ndarray] | None = None) -> TpsModel:
    """TPS for submap ``k`` from its control-point observations."""
    cps = pool.observed_in(k)
    if not cps:
        return TpsModel.identity()
    src = np.array([cp.observations[k].point for cp in cps])
    if canonical is None:
        can = np.array([aggregate_canonical(cp.points()) for cp in cps])
    else:
        can = np.array([canonical[cp.id] for cp in cps])
    targets = smooth_displacements(src, can, SmoothingParams(Q=cfg.Q))
    lam = cfg.lam if cfg.lam is not None else default_lambda(src, cfg.lambda_rel)
    return tps_fit(src, targets, lam)


def canonical_positions(pool: ControlPool) -> dict[int, np.ndarray]:
    return {cp.id: aggregate_canonical(cp.points()) for cp in pool.points}


def _assemble_trajectories(submaps: list[SubmapPrediction]):
    """Pose per (camera, timestamp) from the earliest submap holding it."""
    seen: dict[tuple[int, int], Pose] = {}
    for sp in submaps:
        for f in sp.frames:
            seen.setdefault(f.key, f.pose)
    ts = sorted({t for t, _ in seen})
    cams = sorted({c for _, c in seen})
    return {c: [seen[(t, c)] for t in ts] for c in cams}, ts


def align_stream(source, cfg: PipelineConfig) -> AlignmentResult:
    """Run the online loop over ``source`` (indexable by submap, read in order).

    Submap k is read only when the loop reaches it; all cross-submap state
    lives here.
    """
    n = len(source)
    registered: list[SubmapPrediction] = []
    pool = ControlPool() if cfg.strategy == "talo" else None
    scales: list[float] = []
    streaming: dict[int, TpsModel] = {}
    wall: list[float] = []
    prev_raw = prev_g = None
    st: SubmapTransform | None = None
    G_sim: Sim3 = Sim3.identity()
    G_sl4 = baselines.Sl4Transform.identity()

    for k in range(n):
        t0 = time.perf_counter()
        stage = "load"
        try:
            raw = source[k]
            stage = "confidence_filter"
            raw = filter_submap(raw, cfg.conf_pct)

            if cfg.strategy == "talo":
                stage = "registration"
                if k == 0:
                    st = SubmapTransform(0, 1.0, Pose.identity())
                else:
                    H, ratio = register_pair(prev_raw, raw, st.scale_correction,
                                             estimate_scale=not cfg.metric_scale)
                    st = extend_chain(st, H, ratio)
                g = apply_to_submap(raw, st)
                scales.append(st.scale_correction)
                if k > 0:
                    stage = "control_points"
                    voxel = cfg.voxel_ratio * submap_radius(g)
                    if voxel > 0:
                        survivors = pool.propagate_all(prev_g, g, cfg.tau_ratio * voxel,
                                                       cfg.subpixel_transfer)
                        seed_overlap_controls(prev_g, g, pool, voxel, survivors)
                    if cfg.streaming:
                        stage = "streaming_tps"
                        streaming[k - 1] = fit_submap_warp(pool, k - 1, cfg)
            elif cfg.strategy == "sim3":
                stage = "sim3_alignment"
                if k > 0:
                    src, dst = baselines.pixel_correspondences(prev_raw, raw)
                    G_sim = G_sim @ baselines.sim3_point_align(src, dst,
                                                               with_scale=not cfg.metric_scale)
                g = _transform_sim3(raw, G_sim)
            elif cfg.strategy == "sl4":
                stage = "sl4_alignment"
                if k > 0:
                    src, dst = baselines.pixel_correspondences(prev_raw, raw)
                    G_sl4 = G_sl4 @ baselines.sl4_point_align(src, dst)
                g = _transform_sl4(raw, G_sl4)
            else:
                g = raw
        except DegenerateConfigurationError as exc:
            if cfg.strategy == "sl4":
                logger.warning("submap %d: SL(4) alignment failed: %s", k, exc)
                return AlignmentResult(cfg.strategy, registered, {}, [], failed=True,
                                       failure_reason=f"submap {k}, stage '{stage}': {exc}",
                                       wall_times=wall)
            raise StageError(k, stage, exc) from exc
        except StageError:
            raise
        except Exception as exc:
            raise StageError(k, stage, exc) from exc

        registered.append(g)
        prev_raw, prev_g = raw, g
        wall.append(time.perf_counter() - t0)
        logger.info("submap %d done in %.3f s", k, wall[-1])

    models: dict[int, TpsModel] = {}
    final = registered
    if cfg.strategy == "talo":
        try:
            canon = canonical_positions(pool)
            models = {g.k: fit_submap_warp(pool, g.k, cfg, canon) for g in registered}
            final = [_warp_submap(g, models[g.k]) for g in registered]
        except Exception as exc:
            raise StageError(n - 1, "tps_consolidation", exc) from exc
        if cfg.streaming and registered:
            streaming[registered[-1].k] = models[registered[-1].k]

    trajs, ts = _assemble_trajectories(final)
    return AlignmentResult(cfg.strategy, final, trajs, ts, pool=pool, scale_corrections=scales,
                           tps_models=models, streaming_models=streaming, wall_times=wall)


@dataclass
class PipelineOutput:
    result: AlignmentResult
    report: AlignmentReport | None

    @property
    def failed(self) -> bool:
        return self.result.failed or (self.report is not None and self.report.failed)


def evaluate_result(result: AlignmentResult, gt_trajs: dict[int, list[Pose]], gt_cloud,
                    gap: int = 1) -> AlignmentReport:
    if result.failed:
        return AlignmentReport.failure(trajectory_length(gt_trajs[min(gt_trajs)]))
    ts = result.timestamps
    gt_sel = {c: [gt_trajs[c][t] for t in ts] for c in result.trajectories}
    pts, _ = result.cloud()
    return evaluate(result.trajectories, gt_sel, pts, gt_cloud, gap=gap)


def export_result(result: AlignmentResult, report: AlignmentReport | None, out, cfg) -> None:
    """Write report, and unless the run failed, trajectories, cloud and control points.

    Wall times are not written so that repeated runs give identical files.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if report is not None:
        (out / "report.csv").write_text(report.to_csv(cfg.strategy))
    if result.failed or (report is not None and report.failed):
        (out / "FAILED").write_text((result.failure_reason or "ATE above failure threshold") + "\n")
        return
    for c, traj in result.trajectories.items():
        export_trajectory(traj, out / f"trajectory_cam{c}.txt", cfg.frame_rate, result.timestamps)
    pts, cols = result.cloud()
    export_ply(pts, cols, out / "cloud.ply")
    if result.pool is not None:
        result.pool.write_csv(out / "control_points.csv")


def run_pipeline(cfg: PipelineConfig, source=None, ground_truth=None) -> PipelineOutput:
    """Align a stream, evaluate it against ground truth if given, export if asked.

    ``ground_truth`` is a ``(trajectories by camera, gt cloud)`` pair.
    """
    if source is None:
        source, ground_truth = load_source(cfg)
    result = align_stream(source, cfg)
    report = None
    if ground_truth is not None:
        gt_trajs, gt_cloud = ground_truth
        report = evaluate_result(result, gt_trajs, gt_cloud, gap=cfg.rte_gap)
    if cfg.output:
        export_result(result, report, cfg.output, cfg)
    return PipelineOutput(result, report)


def load_source(cfg: PipelineConfig):
    """Bundles from ``cfg.input`` (with ``ground_truth.json`` if present), or a
    synthetic stream built from ``cfg.synth``."""
    from .prediction import BundleDirectory
    from .synth import (
        DistortionSpec,
        SceneParams,
        SyntheticStream,
        generate_scene,
        read_ground_truth,
    )

    if cfg.input:
        src = BundleDirectory(cfg.input)
        gt_path = Path(cfg.input) / "ground_truth.json"
        gt = None
        if gt_path.is_file():
            params, _, _, _, trajs = read_ground_truth(gt_path)
            gt = (trajs, generate_scene(params).gt_cloud())
        return src, gt
    syn = dict(cfg.synth)
    scene_kw = syn.get("scene", {})
    scene_kw.setdefault("seed", cfg.seed)
    spec = DistortionSpec.from_json(syn.get("spec", {"seed": cfg.seed}))
    scene = generate_scene(SceneParams(**scene_kw))
    stream = SyntheticStream(scene, cfg.L, cfg.O, spec)
    return stream, (scene.gt_trajectories(), scene.gt_cloud())


def config_dict(cfg: PipelineConfig) -> dict:
    return asdict(cfg)
