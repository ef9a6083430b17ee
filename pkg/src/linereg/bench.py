"""End-to-end pipelines and the benchmark harness (per-scene errors, quartiles, recall, sweeps)."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .baselines import icl_register, regression_register
from .config import RunConfig
from .errors import LineRegError
from .features import LineNet
from .formats import dumps_json
from .matching import MatchList, cost_matrix, sinkhorn, topk
from .metrics import recall_curve, summarize
from .plucker import rotation_error, translation_error
from .pose import RegistrationResult, ransac_register
from .synth import NoiseConfig, ScenePair, generate_scene

log = logging.getLogger(__name__)

# noise sweep end point: (angle sigma deg, footprint sigma m)
NOISE_SWEEP_MAX = (5.0, 0.1)
OVERLAP_SWEEP_RANGE = (0.2, 1.0)
# clip-to-sigma ratios of the default noise (5 deg / 2 deg, 0.25 m / 0.05 m)
ANGLE_CLIP_RATIO = 2.5
FOOTPRINT_CLIP_RATIO = 5.0


@dataclass
class Timing:
    feature: float = 0.0
    matching: float = 0.0
    pose: float = 0.0


@dataclass
class PipelineOutput:
    result: RegistrationResult
    timing: Timing = field(default_factory=Timing)
    matches: MatchList | None = None


def match_scene(model: LineNet, src, tgt, cfg: RunConfig, timing: Timing | None = None) -> MatchList:
    """Top-K matches from the network and Sinkhorn."""
    timing = timing if timing is not None else Timing()
    with torch.no_grad():
        t0 = time.perf_counter()
        out = model(src, tgt)
        t1 = time.perf_counter()
        W = sinkhorn(cost_matrix(out["fx"], out["fy"]), out["r"], out["s"], cfg.sinkhorn_lambda, cfg.sinkhorn_iters)
        ml = topk(W.double().numpy(), min(cfg.top_k, W.numel()))
        t2 = time.perf_counter()
    timing.feature += t1 - t0
    timing.matching += t2 - t1
    return ml


def run_pipeline(method: str, src, tgt, cfg: RunConfig, model: LineNet | None = None) -> PipelineOutput:
    """Register ``src`` onto ``tgt`` with ``method`` in {net, icl, regression}."""
    timing = Timing()
    if method == "icl":
        t0 = time.perf_counter()
        res = icl_register(src, tgt, cfg.icl)
        timing.pose = time.perf_counter() - t0
        return PipelineOutput(res, timing)
    if model is None:
        raise ValueError(f"method {method!r} needs a trained model")
    if method == "regression":
        t0 = time.perf_counter()
        pose = regression_register(src, tgt, model)
        timing.feature = time.perf_counter() - t0
        res = RegistrationResult(pose, np.zeros((0, 2), dtype=int), 0.0, 1)
        return PipelineOutput(res, timing)
    if method == "net":
        ml = match_scene(model, src, tgt, cfg, timing)
        t0 = time.perf_counter()
        res = ransac_register(ml, src, tgt, cfg.ransac)
        timing.pose = time.perf_counter() - t0
        return PipelineOutput(res, timing, ml)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class SceneOutcome:
    method: str
    scene: str
    status: str
    rotation_error: float
    translation_error: float
    hypothesis_count: int
    timing: Timing


def evaluate_scene(method, scene: ScenePair, scene_id: str, cfg: RunConfig, model=None) -> SceneOutcome:
    """Errors against the gt pose; library errors become a failure row (infinite errors)."""
    try:
        out = run_pipeline(method, scene.source, scene.target, cfg, model)
    except LineRegError as exc:
        log.warning("%s failed on %s: %s", method, scene_id, exc)
        return SceneOutcome(method, scene_id, f"failed:{type(exc).__name__}", np.inf, np.inf, 0, Timing())
    pose = out.result.pose
    return SceneOutcome(
        method,
        scene_id,
        "ok",
        rotation_error(scene.gt_pose.R, pose.R),
        translation_error(scene.gt_pose.t, pose.t),
        int(out.result.hypothesis_count),
        out.timing,
    )


def noise_levels(n: int) -> list[NoiseConfig]:
    """``n`` noise settings from zero to the sweep maximum, clip ratios as the defaults."""
    out = []
    for a, f in zip(np.linspace(0.0, NOISE_SWEEP_MAX[0], n), np.linspace(0.0, NOISE_SWEEP_MAX[1], n)):
        out.append(NoiseConfig(float(f), FOOTPRINT_CLIP_RATIO * float(f), float(a), ANGLE_CLIP_RATIO * float(a)))
    return out


def overlap_levels(n: int) -> list[float]:
    return [float(x) for x in np.linspace(*OVERLAP_SWEEP_RANGE, n)]


@dataclass
class Level:
    """One benchmark condition and its scenes."""

    sweep: str
    noise: NoiseConfig
    overlap: float
    scenes: list
    scene_ids: list


def sweep_conditions(cfg: RunConfig, axis: str) -> list[Level]:
    """Regenerated scenes per sweep level; the same ``(seed, index)`` keeps base lines and pose fixed."""
    if axis == "noise":
        grid = [(nc, cfg.overlap) for nc in noise_levels(cfg.sweep_levels)]
    elif axis == "overlap":
        grid = [(cfg.noise, ov) for ov in overlap_levels(cfg.sweep_levels)]
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    levels = []
    for nc, ov in grid:
        scenes = [
            generate_scene(cfg.seed, i, cfg.num_lines, ov, nc, cfg.pose_ranges, cfg.axis_aligned_fraction)
            for i in range(cfg.num_scenes)
        ]
        levels.append(Level(axis, nc, ov, scenes, [f"scene_{i:04d}" for i in range(cfg.num_scenes)]))
    return levels


@dataclass
class BenchmarkReport:
    """Per-scene outcomes grouped by level; renders the CSV/JSON outputs."""

    cfg: RunConfig
    levels: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)  # (level index, SceneOutcome)

    def _level_cols(self, k):
        lv = self.levels[k]
        return [lv.sweep, repr(lv.noise.angle_sigma), repr(lv.noise.footprint_sigma), repr(lv.overlap)]

    def per_scene_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sweep", "angle_sigma_deg", "footprint_sigma_m", "overlap", "method", "scene", "status",
                    "rotation_error_deg", "translation_error_m", "hypothesis_count"])
        for k, o in self.outcomes:
            w.writerow(self._level_cols(k) + [o.method, o.scene, o.status, repr(float(o.rotation_error)),
                                              repr(float(o.translation_error)), o.hypothesis_count])
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sweep", "angle_sigma_deg", "footprint_sigma_m", "overlap", "method", "scene",
                    "feature_s", "matching_s", "pose_s"])
        for k, o in self.outcomes:
            t = o.timing
            w.writerow(self._level_cols(k) + [o.method, o.scene, f"{t.feature:.6f}", f"{t.matching:.6f}", f"{t.pose:.6f}"])
        return buf.getvalue()

    def _groups(self):
        groups = {}
        for k, o in self.outcomes:
            groups.setdefault((k, o.method), []).append(o)
        return groups

    def recall_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sweep", "angle_sigma_deg", "footprint_sigma_m", "overlap", "method", "metric", "threshold", "recall"])
        for (k, method), rows in self._groups().items():
            for metric, th, errs in self._metric_series(rows):
                for t, r in zip(th, recall_curve(errs, th)):
                    w.writerow(self._level_cols(k) + [method, metric, repr(float(t)), repr(float(r))])
        return buf.getvalue()

    def _metric_series(self, rows):
        yield "rotation_deg", self.cfg.rotation_thresholds, [o.rotation_error for o in rows]
        yield "translation_m", self.cfg.translation_thresholds, [o.translation_error for o in rows]

    def summary(self) -> list:
        out = []
        for (k, method), rows in self._groups().items():
            lv = self.levels[k]
            entry = {
                "sweep": lv.sweep,
                "angle_sigma_deg": lv.noise.angle_sigma,
                "footprint_sigma_m": lv.noise.footprint_sigma,
                "overlap": lv.overlap,
                "method": method,
            }
            for metric, th, errs in self._metric_series(rows):
                entry[metric] = summarize(errs, th)
            out.append(entry)
        return out

    def summary_json(self) -> str:
        return dumps_json(_finite_or_null(self.summary()))

    def medians(self, method: str, metric: str = "rotation_deg") -> list[float]:
        """Median error per level for ``method``, in level order."""
        s = self.summary()
        return [e[metric]["median"] for e in s if e["method"] == method]


def _finite_or_null(x):
    if isinstance(x, float):
        return x if np.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _finite_or_null(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_finite_or_null(v) for v in x]
    return x


def run_benchmark(cfg: RunConfig, levels: list[Level], methods, models: dict | None = None) -> BenchmarkReport:
    """Evaluate every method on every scene of every level, in a fixed order."""
    models = models or {}
    report = BenchmarkReport(cfg, levels)
    for k, lv in enumerate(levels):
        for method in methods:
            for scene, sid in zip(lv.scenes, lv.scene_ids):
                report.outcomes.append((k, evaluate_scene(method, scene, sid, cfg, models.get(method))))
    return report
