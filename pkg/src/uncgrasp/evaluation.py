"""Experiment harness: scenes in, Precision@k out.

Success is judged by a geometric proxy oracle against the ground-truth
cloud, not by physics: the pads must enclose enough true surface, that
surface must offer an antipodal contact pair, and the finger slabs must not
pass through the object.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .cloud import OBB_TOL, PointCloud
from .completion import MirrorCompleter, complete_ensemble
from .config import PipelineConfig
from .errors import InsufficientExecutionsError, NoCandidatesError, StageError, UncGraspError
from .gripper import (
    GraspCandidate,
    GripperModel,
    _slab_geometry,
    closing_region,
    sample_grasps,
)
from .rescore import RankedList, rescore
from .scene import Scene, capture_view, segment_plane
from .uncertainty import UncertainCloud, aggregate

METHODS = ("baseline", "rescored")
ORACLE_LABEL = "geometric proxy (containment + antipodal pair + finger clearance)"


# ------------------------------------------------------------ oracle


@dataclass(frozen=True)
class OracleVerdict:
    contained: int
    antipodal: bool
    collision_free: bool
    success: bool

    def to_dict(self) -> dict:
        return {"contained": self.contained, "antipodal": self.antipodal,
                "collision_free": self.collision_free, "success": self.success}


def _gt_normals(scene: Scene) -> np.ndarray:
    if scene.normals is not None:
        return scene.normals
    from .gripper import estimate_normals

    return estimate_normals(scene.ground_truth.points)


def has_antipodal_pair(points, normals, closing, friction_deg: float = 30.0,
                       axis_deg: float = 30.0) -> bool:
    """True when some pair (i, j) has its contact line within ``axis_deg`` of
    the closing axis and each outward normal within ``friction_deg`` of the
    outward direction along that line."""
    if len(points) < 2:
        return False
    y = np.asarray(closing, dtype=np.float64)
    cos_f = math.cos(math.radians(friction_deg))
    cos_a = math.cos(math.radians(axis_deg))
    ny = normals @ y
    # a usable contact normal must lie within friction+axis of the closing line
    loose = math.cos(math.radians(min(90.0, friction_deg + axis_deg)))
    left = np.flatnonzero(ny <= -loose)
    right = np.flatnonzero(ny >= loose)
    if left.size == 0 or right.size == 0:
        return False
    step = max(1, 2_000_000 // right.size)
    for s in range(0, left.size, step):
        li = left[s : s + step]
        d = points[right][None, :, :] - points[li][:, None, :]
        dist = np.linalg.norm(d, axis=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = d / dist[..., None]
        ok = dist > 0
        ok &= u @ y >= cos_a
        ok &= np.einsum("ijk,ik->ij", u, normals[li]) <= -cos_f
        ok &= np.einsum("ijk,jk->ij", u, normals[right]) >= cos_f
        if np.any(ok):
            return True
    return False


def oracle_verdict(cand: GraspCandidate, scene: Scene, g: GripperModel, min_points: int = 10,
                   friction_deg: float = 30.0, axis_deg: float = 30.0) -> OracleVerdict:
    gt = scene.ground_truth
    box = closing_region(g, cand.grasp)
    inside = box.contains(gt.points)
    count = int(inside.sum())
    antipodal = False
    if count >= min_points:
        antipodal = has_antipodal_pair(gt.points[inside], _gt_normals(scene)[inside],
                                       cand.grasp.closing, friction_deg, axis_deg)
    offsets, half = _slab_geometry(g)
    r = cand.grasp.pose.rotation
    centres = cand.grasp.pose.apply(offsets)
    hits = kernels.count_in_boxes(gt.points, centres, np.stack([r, r]), half, OBB_TOL)
    clear = bool(np.all(hits == 0))
    return OracleVerdict(count, antipodal, clear, count >= min_points and antipodal and clear)


def grasp_success_oracle(cand: GraspCandidate, scene: Scene, g: GripperModel, min_points: int = 10,
                         friction_deg: float = 30.0, axis_deg: float = 30.0) -> bool:
    return oracle_verdict(cand, scene, g, min_points, friction_deg, axis_deg).success


# ------------------------------------------------------------ precision


@dataclass
class TrialResult:
    scene_id: str
    method: str
    flags: list  # success per executed rank, best first
    grasps: list = field(default_factory=list)  # per executed rank: details dict
    timings_ms: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.grasps and len(self.grasps) != len(self.flags):
            raise ValueError("one grasp record per success flag")


@dataclass
class PrecisionReport:
    k_values: tuple
    per_scene: dict  # method -> scene_id -> {"P@k": value}
    aggregate: dict  # method -> {"P@k": value}
    trials: dict  # method -> trial count

    def to_dict(self) -> dict:
        return {"k": list(self.k_values), "per_scene": self.per_scene,
                "aggregate": self.aggregate, "trials": self.trials}


def trial_precision(flags, k: int) -> float:
    if k < 1:
        raise InsufficientExecutionsError("k must be >= 1")
    if len(flags) < k:
        raise InsufficientExecutionsError(f"trial executed {len(flags)} grasps, need {k}")
    return sum(bool(f) for f in flags[:k]) / k


def precision_at_k(results, k: int) -> dict:
    """``{"per_trial": [...], "aggregate": mean}`` for one method's trials."""
    results = list(results)
    if not results:
        raise InsufficientExecutionsError("no trials")
    per = [trial_precision(r.flags, k) for r in results]
    return {"per_trial": per, "aggregate": math.fsum(per) / len(per)}


def build_report(results, k_values=(1, 5)) -> PrecisionReport:
    per_scene, agg, trials = {}, {}, {}
    methods = sorted({r.method for r in results})
    for m in methods:
        rs = [r for r in results if r.method == m]
        per_scene[m] = {r.scene_id: {} for r in rs}
        agg[m] = {}
        for k in k_values:
            pk = precision_at_k(rs, k)
            for r, v in zip(rs, pk["per_trial"]):
                per_scene[m][r.scene_id][f"P@{k}"] = v
            agg[m][f"P@{k}"] = pk["aggregate"]
        trials[m] = len(rs)
    return PrecisionReport(tuple(k_values), per_scene, agg, trials)


# ------------------------------------------------------------ pipeline


def stage_seed(*parts: int) -> int:
    """Deterministic 64-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


STAGE_SEGMENT, STAGE_DOWNSAMPLE, STAGE_COMPLETE, STAGE_LATTICE, STAGE_SAMPLE = range(5)


@dataclass
class SceneRun:
    """Everything computed for one scene before the arms diverge."""

    scene: Scene
    partial: PointCloud
    table_normal: np.ndarray
    uncertain: UncertainCloud
    candidates: list
    ranked: RankedList
    timings_ms: dict


def _clock():
    t = time.perf_counter()
    return lambda: (time.perf_counter() - t) * 1e3


def downsample(cloud: PointCloud, max_points: int, seed: int) -> PointCloud:
    if cloud.count <= max_points:
        return cloud
    rng = np.random.default_rng(seed)
    return cloud.subset(np.sort(rng.choice(cloud.count, max_points, replace=False)))


def run_scene(scene: Scene, cfg: PipelineConfig) -> SceneRun:
    """Capture, segment, complete, aggregate, sample and rescore one scene."""
    timings = {}
    stage = "capture"
    try:
        tick = _clock()
        cloud = capture_view(scene)
        timings["capture"] = tick()

        stage = "segment"
        tick = _clock()
        plane, obj = segment_plane(cloud, cfg.plane_distance_tol, cfg.plane_min_inliers,
                                   stage_seed(cfg.seed, scene.seed, STAGE_SEGMENT),
                                   cfg.ransac_iterations)
        partial = downsample(obj, cfg.partial_max_points,
                             stage_seed(cfg.seed, scene.seed, STAGE_DOWNSAMPLE))
        timings["segment"] = tick()

        stage = "complete"
        tick = _clock()
        completer = MirrorCompleter(
            cfg.completer(stage_seed(cfg.seed, scene.seed, STAGE_LATTICE), scene.completion),
            view_origin=scene.camera.origin if scene.camera is not None else None,
            up=plane.n,
        )
        stack = complete_ensemble(completer, partial, cfg.T,
                                  stage_seed(cfg.seed, scene.seed, STAGE_COMPLETE),
                                  workers=cfg.threads or None)
        timings["complete"] = tick()

        stage = "aggregate"
        tick = _clock()
        uc = aggregate(stack)
        timings["aggregate"] = tick()

        stage = "sample"
        tick = _clock()
        try:
            cands = sample_grasps(uc.mean, cfg.gripper(), cfg.k_generate,
                                  stage_seed(cfg.seed, scene.seed, STAGE_SAMPLE),
                                  up=plane.n, config=cfg.sampler())
        except NoCandidatesError:
            # a robot with no grasp to try scores a failed trial, not a crash
            cands = []
        timings["sample"] = tick()

        stage = "rescore"
        tick = _clock()
        ranked = rescore(cands, uc, cfg.gripper(), cfg.rescore_config()) if cands else RankedList(())
        timings["rescore"] = tick()
    except UncGraspError as exc:
        raise StageError(f"{stage} failed for {scene.scene_id}: {exc.message}", cause=exc,
                         scene=scene.scene_id, stage=stage) from exc
    return SceneRun(scene, partial, plane.n, uc, cands, ranked, timings)


def _grasp_record(rank, cand, entry, verdict):
    if cand is None:
        return {"rank": rank, "original_rank": None, "S": None, "S_prime": None,
                "penalty_m": None, "success": False, "oracle": None, "note": "no candidate"}
    return {"rank": rank, "original_rank": entry.original_rank, "S": entry.S,
            "S_prime": entry.S_prime, "penalty_m": entry.penalty, "success": verdict.success,
            "oracle": verdict.to_dict(),
            "translation": [float(v) for v in cand.grasp.center],
            "rotation": [float(v) for v in cand.grasp.pose.rotation.reshape(-1)]}


def judge_arms(run: SceneRun, cfg: PipelineConfig) -> list[TrialResult]:
    """Both arms judge their top ``k_execute`` from the same candidate set.

    When the sampler produced fewer than ``k_execute`` candidates the empty
    slots count as failed executions, so every trial still has ``k_execute``
    flags.
    """
    g = cfg.gripper()
    by_orig = run.ranked.by_original_rank()
    orders = {
        "baseline": by_orig,
        "rescored": list(run.ranked.entries),
    }
    cache = {}
    out = []
    for method in METHODS:
        tick = _clock()
        records, flags = [], []
        for rank in range(1, cfg.k_execute + 1):
            if rank <= len(orders[method]):
                e = orders[method][rank - 1]
                if e.original_rank not in cache:
                    cache[e.original_rank] = oracle_verdict(
                        e.candidate, run.scene, g, cfg.oracle_min_points, cfg.friction_deg,
                        cfg.axis_align_deg)
                v = cache[e.original_rank]
                records.append(_grasp_record(rank, e.candidate, e, v))
                flags.append(v.success)
            else:
                records.append(_grasp_record(rank, None, None, None))
                flags.append(False)
        timings = dict(run.timings_ms)
        timings["oracle"] = tick()
        out.append(TrialResult(run.scene.scene_id, method, flags, records, timings))
    return out


def run_experiment(scenes, cfg: PipelineConfig | None = None, methods=METHODS, workers=None):
    """Run every scene through the pipeline and both arms.

    Returns ``(report, trials)``; trial order follows scene order then
    ``METHODS`` and never depends on scheduling.
    """
    cfg = cfg or PipelineConfig()
    scenes = list(scenes)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")

    def one(sc):
        run = run_scene(sc, cfg)
        return [t for t in judge_arms(run, cfg) if t.method in methods]

    if workers and workers > 1 and len(scenes) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            nested = list(pool.map(one, scenes))
    else:
        nested = [one(sc) for sc in scenes]
    trials = [t for group in nested for t in group]
    return build_report(trials, (1, cfg.k_execute) if cfg.k_execute != 1 else (1,)), trials


# ------------------------------------------------------------ far side


def hidden_side_split(run: SceneRun) -> tuple[np.ndarray, np.ndarray]:
    """Penalties of candidates whose closing-region centre lies in the half of
    the completed object away from the camera (``hidden``) or facing it
    (``visible``). The dividing plane passes through the centroid of the mean
    completed cloud, normal to the viewing direction projected onto the
    table."""
    c = run.uncertain.mean.centroid()
    n = run.table_normal
    v = c - run.scene.camera.origin
    v = v - (v @ n) * n
    v = v / np.linalg.norm(v)
    hidden, visible = [], []
    for e in run.ranked.by_original_rank():
        (hidden if (e.candidate.grasp.center - c) @ v > 0 else visible).append(e.penalty)
    return np.array(hidden), np.array(visible)


# ------------------------------------------------------------ output


CSV_FIELDS = ["scene_id", "method", "executed", "successes", "precision_at_1",
              "precision_at_k", "k", "executed_original_ranks"]


def report_json(report: PrecisionReport, trials, cfg: PipelineConfig) -> str:
    doc = {
        "oracle": ORACLE_LABEL,
        "config": cfg.to_dict(),
        "report": report.to_dict(),
        "trials": [
            {"scene_id": t.scene_id, "method": t.method, "flags": [bool(f) for f in t.flags],
             "grasps": t.grasps}
            for t in trials
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_csv(trials, k: int) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for t in trials:
        w.writerow({
            "scene_id": t.scene_id,
            "method": t.method,
            "executed": len(t.flags),
            "successes": sum(bool(f) for f in t.flags),
            "precision_at_1": repr(trial_precision(t.flags, 1)),
            "precision_at_k": repr(trial_precision(t.flags, k)),
            "k": k,
            "executed_original_ranks": " ".join(
                "-" if g["original_rank"] is None else str(g["original_rank"]) for g in t.grasps),
        })
    return buf.getvalue()


def timings_json(trials) -> str:
    doc = [{"scene_id": t.scene_id, "method": t.method, "timings_ms": t.timings_ms} for t in trials]
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_outputs(report: PrecisionReport, trials, cfg: PipelineConfig, directory) -> dict:
    """``report.json`` and ``trials.csv`` are a pure function of the inputs;
    wall-clock timings go to ``timings.json`` only."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"report": d / "report.json", "csv": d / "trials.csv", "timings": d / "timings.json"}
    paths["report"].write_text(report_json(report, trials, cfg))
    paths["csv"].write_text(report_csv(trials, cfg.k_execute))
    paths["timings"].write_text(timings_json(trials))
    return paths
