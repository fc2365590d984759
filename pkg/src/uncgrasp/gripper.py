"""Parallel-jaw gripper geometry, a geometric antipodal grasp sampler, and the
grasp-list JSON format.

Grasp frame convention: local x is the approach direction, local y the
closing direction, the origin is the centre of the closing region.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .cloud import OBB_TOL, Obb, PointCloud, RigidTransform, orthonormalize
from .errors import (
    CloudIOError,
    InvalidGeometryError,
    NoCandidatesError,
    ParseError,
    SchemaError,
    TooFewPointsError,
)

DEFAULT_K_GENERATE = 15
MIN_SAMPLER_POINTS = 50


@dataclass(frozen=True)
class GripperModel:
    """Jaw geometry in meters.

    Defaults follow the Robotiq 2F-85: 85 mm stroke; pad depth and width per
    the vendor datasheet. ``finger_thickness`` and ``finger_length`` only
    shape the collision slabs.
    """

    max_opening: float = 0.085
    finger_depth: float = 0.037
    finger_width: float = 0.022
    finger_thickness: float = 0.010
    finger_length: float = 0.050

    def __post_init__(self):
        for name in ("max_opening", "finger_depth", "finger_width", "finger_thickness", "finger_length"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidGeometryError(f"gripper {name} must be > 0, got {v!r}")

    @property
    def half_extents(self) -> np.ndarray:
        return 0.5 * np.array([self.finger_depth, self.max_opening, self.finger_width])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GripperModel":
        known = {k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True, eq=False)
class GraspPose:
    pose: RigidTransform

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    @property
    def approach(self) -> np.ndarray:
        return self.pose.rotation[:, 0]

    @property
    def closing(self) -> np.ndarray:
        return self.pose.rotation[:, 1]

    @classmethod
    def from_axes(cls, center, approach, closing) -> "GraspPose":
        x = np.asarray(approach, dtype=np.float64)
        y = np.asarray(closing, dtype=np.float64)
        r = np.column_stack([x, y, np.cross(x, y)])
        return cls(RigidTransform(r, center))

    def transformed(self, t: RigidTransform) -> "GraspPose":
        return GraspPose(t @ self.pose)


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    grasp: GraspPose
    score: float
    source: str = "sampler"
    quality: float | None = None
    closure_count: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise InvalidGeometryError("grasp score must be finite")
        if self.source not in ("sampler", "imported"):
            raise InvalidGeometryError(f"unknown grasp source {self.source!r}")
        object.__setattr__(self, "score", float(self.score))

    def transformed(self, t: RigidTransform) -> "GraspCandidate":
        return GraspCandidate(self.grasp.transformed(t), self.score, self.source,
                              self.quality, self.closure_count)

    def with_score(self, score: float) -> "GraspCandidate":
        return GraspCandidate(self.grasp, score, self.source, self.quality, self.closure_count)


_CORNER_SIGNS = np.array(
    [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64
)


def contact_points(g: GripperModel, p: GraspPose) -> np.ndarray:
    """The 8 corners of the two inner pad faces, world frame, shape (8, 3)."""
    return p.pose.apply(_CORNER_SIGNS * g.half_extents)


def closing_region(g: GripperModel, p: GraspPose) -> Obb:
    return Obb(p.center, p.pose.rotation, g.half_extents)


def _slab_geometry(g: GripperModel):
    """Local centre offsets (one per finger) and half extents of the slabs."""
    d2 = 0.5 * g.finger_depth
    x_lo, x_hi = -d2 - g.finger_length, d2
    half = np.array([0.5 * (x_hi - x_lo), 0.5 * g.finger_thickness, 0.5 * g.finger_width])
    y_off = 0.5 * g.max_opening + 0.5 * g.finger_thickness
    xc = 0.5 * (x_lo + x_hi)
    return np.array([[xc, -y_off, 0.0], [xc, y_off, 0.0]]), half


def finger_slabs(g: GripperModel, p: GraspPose) -> tuple[Obb, Obb]:
    """Volumes swept by the two fingers: pad-thick slabs just outside the
    closing region, from ``finger_length`` behind it up to its far face."""
    offsets, half = _slab_geometry(g)
    a, b = (Obb(p.pose.apply(o), p.pose.rotation, half) for o in offsets)
    return a, b


# ------------------------------------------------------------ normals


def estimate_normals(points, k: int = 20, viewpoint=None) -> np.ndarray:
    """PCA normals over the k nearest neighbours.

    Oriented toward ``viewpoint`` when given, else away from the centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 3:
        raise TooFewPointsError(f"normal estimation needs >= 3 points, got {n}")
    k = min(k, n)
    _, nbr = cKDTree(pts).query(pts, k=k)
    nb = pts[nbr]
    centred = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    if viewpoint is not None:
        ref = np.asarray(viewpoint, dtype=np.float64) - pts
    else:
        ref = pts - pts.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, ref) < 0
    normals[flip] *= -1.0
    return normals


# ------------------------------------------------------------ sampler


def pose_distance(a: RigidTransform, b: RigidTransform, meters_per_radian: float = 0.1) -> float:
    """Translation distance plus weighted rotation angle, treating a grasp and
    its 180-degree flip about the approach axis as the same grasp."""
    dt = float(np.linalg.norm(a.translation - b.translation))
    best = np.inf
    for flip in (np.eye(3), np.diag([1.0, -1.0, -1.0])):
        r = a.rotation.T @ b.rotation @ flip
        c = np.clip(0.5 * (np.trace(r) - 1.0), -1.0, 1.0)
        best = min(best, float(np.arccos(c)))
    return dt + meters_per_radian * best


@dataclass
class SamplerConfig:
    n_anchors: int = 400
    normal_k: int = 20
    min_normal_angle_deg: float = 150.0
    min_quality: float = 0.85
    min_width: float = 0.002
    nms_threshold: float = 0.02
    nms_meters_per_radian: float = 0.1
    check_collision: bool = True
    n_approach: int = 8
    max_upward: float = 0.2
    score_mode: str = "unnormalized"


def _approach_for(center, closing, centroid, up):
    a = -(center - centroid)
    a = a - (a @ closing) * closing
    if up is not None:
        up = np.asarray(up, dtype=np.float64)
        if a @ up > 0:  # never approach from below the table
            a = a - (a @ up) * up
            a = a - (a @ closing) * closing
    if np.linalg.norm(a) < 1e-6:
        ref = -np.asarray(up, dtype=np.float64) if up is not None else np.eye(3)[int(np.argmin(np.abs(closing)))]
        a = ref - (ref @ closing) * closing
        if np.linalg.norm(a) < 1e-6:
            ref = np.eye(3)[int(np.argmin(np.abs(closing)))]
            a = ref - (ref @ closing) * closing
    return a / np.linalg.norm(a)


def sample_grasps(cloud: PointCloud, g: GripperModel, k: int = DEFAULT_K_GENERATE, seed: int = 0,
                  viewpoint=None, up=None, config: SamplerConfig | None = None) -> list[GraspCandidate]:
    """Seeded antipodal sampling.

    Anchors are drawn at random; each is paired with the neighbour inside the
    jaw stroke whose normal opposes its own (angle above
    ``min_normal_angle_deg``) and whose connecting line best matches both
    normals. The antipodal quality of a pair is
    ``(2 - n_i . u + n_j . u) / 4`` with ``u`` the unit vector from i to j.
    Score ``S = quality * (cloud points inside the closing region)``; in
    ``"unit"`` mode scores are divided by the largest kept score. Candidates
    whose finger slabs hit the cloud are dropped, then greedy non-maximum
    suppression on :func:`pose_distance` keeps the best ``k``.
    """
    cfg = config or SamplerConfig()
    if k < 1:
        raise InvalidGeometryError("k must be >= 1")
    pts = cloud.points
    n = len(pts)
    if n < MIN_SAMPLER_POINTS:
        raise TooFewPointsError(f"grasp sampling needs >= {MIN_SAMPLER_POINTS} points, got {n}")
    normals = estimate_normals(pts, cfg.normal_k, viewpoint)
    rng = np.random.default_rng(seed)
    anchors = np.sort(rng.choice(n, size=min(n, cfg.n_anchors), replace=False))
    tree = cKDTree(pts)
    cos_opp = np.cos(np.deg2rad(cfg.min_normal_angle_deg))
    centroid = pts.mean(axis=0)

    pairs = []
    for i in anchors:
        nbr = np.asarray(sorted(tree.query_ball_point(pts[i], g.max_opening)), dtype=np.intp)
        if nbr.size == 0:
            continue
        v = pts[nbr] - pts[i]
        dist = np.linalg.norm(v, axis=1)
        ok = (dist >= cfg.min_width) & (dist <= g.max_opening)
        ok &= normals[nbr] @ normals[i] < cos_opp
        if not np.any(ok):
            continue
        nbr, v, dist = nbr[ok], v[ok], dist[ok]
        u = v / dist[:, None]
        q = (2.0 - u @ normals[i] + np.einsum("ij,ij->i", u, normals[nbr])) / 4.0
        best = int(np.argmax(q))
        if q[best] >= cfg.min_quality:
            pairs.append((0.5 * (pts[i] + pts[nbr[best]]), u[best], float(q[best])))
    if not pairs:
        raise NoCandidatesError("no antipodal pair fits the gripper")
    if cfg.n_approach < 1:
        raise InvalidGeometryError("n_approach must be >= 1")

    # every pair gets n_approach approach directions spun about its closing
    # axis, ordered by preference; the first collision-free one is kept
    na = cfg.n_approach
    spins = [0.0]
    for j in range(1, na // 2 + 1):
        spins += [j * 2 * np.pi / na, -j * 2 * np.pi / na]
    spins = spins[:na]
    up_v = None if up is None else np.asarray(up, dtype=np.float64)
    centers, rots, quals, owner = [], [], [], []
    for pi, (center, y, q) in enumerate(pairs):
        x0 = _approach_for(center, y, centroid, up_v)
        z0 = np.cross(x0, y)
        for a in spins:
            x = np.cos(a) * x0 + np.sin(a) * z0
            if up_v is not None and x @ up_v > cfg.max_upward:
                continue
            rots.append(np.column_stack([x, y, np.cross(x, y)]))
            centers.append(center)
            quals.append(q)
            owner.append(pi)
    centers = np.array(centers)
    rots = np.array(rots)
    quals = np.array(quals)
    counts = kernels.count_in_boxes(pts, centers, rots, g.half_extents, OBB_TOL)
    keep = counts > 0
    if cfg.check_collision:
        offsets, half = _slab_geometry(g)
        for off in offsets:
            slab_centres = centers + np.einsum("mij,j->mi", rots, off)
            keep &= kernels.count_in_boxes(pts, slab_centres, rots, half, OBB_TOL) == 0
    # first surviving spin per pair
    survivors = np.flatnonzero(keep)
    _, first = np.unique(np.asarray(owner)[survivors], return_index=True)
    idx = survivors[first]
    if idx.size == 0:
        raise NoCandidatesError("every antipodal candidate collides or encloses no points")
    scores = quals[idx] * counts[idx]
    order = idx[np.argsort(-scores, kind="stable")]

    kept = []
    for j in order:
        pose = RigidTransform(rots[j], centers[j])
        if all(pose_distance(pose, other.pose, cfg.nms_meters_per_radian) > cfg.nms_threshold
               for other in (c.grasp for c in kept)):
            kept.append(GraspCandidate(GraspPose(pose), float(quals[j] * counts[j]), "sampler",
                                       float(quals[j]), int(counts[j])))
            if len(kept) == k:
                break
    if cfg.score_mode == "unit":
        top = kept[0].score
        kept = [c.with_score(c.score / top) for c in kept]
    elif cfg.score_mode != "unnormalized":
        raise InvalidGeometryError(f"unknown score_mode {cfg.score_mode!r}")
    return kept


# ------------------------------------------------------------ grasp lists

ROTATION_TOL = 1e-6


def grasps_to_json(cands, g: GripperModel | None = None, score_scale: str = "unnormalized") -> dict:
    return {
        "gripper": (g or GripperModel()).to_dict(),
        "score_scale": score_scale,
        "grasps": [
            {
                "rotation": [float(v) for v in c.grasp.pose.rotation.reshape(-1)],
                "translation": [float(v) for v in c.grasp.pose.translation],
                "score": c.score,
            }
            for c in cands
        ],
    }


def export_grasps(cands, path, g: GripperModel | None = None, score_scale: str = "unnormalized") -> Path:
    path = Path(path)
    path.write_text(json.dumps(grasps_to_json(cands, g, score_scale), indent=2) + "\n")
    return path


def _parse_entry(i, entry) -> GraspCandidate:
    if not isinstance(entry, dict):
        raise SchemaError(f"grasp entry {i} is not an object", entry=i)
    try:
        rot = np.array(entry["rotation"], dtype=np.float64)
        trans = np.array(entry["translation"], dtype=np.float64)
        score = float(entry["score"])
    except KeyError as exc:
        raise SchemaError(f"grasp entry {i} lacks {exc.args[0]!r}", entry=i) from None
    except (TypeError, ValueError):
        raise SchemaError(f"grasp entry {i} has non-numeric fields", entry=i) from None
    if rot.shape != (9,) or trans.shape != (3,):
        raise SchemaError(f"grasp entry {i}: rotation needs 9 and translation 3 values", entry=i)
    if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans)) and np.isfinite(score)):
        raise SchemaError(f"grasp entry {i} has non-finite values", entry=i)
    r = rot.reshape(3, 3)
    err = np.max(np.abs(r.T @ r - np.eye(3)))
    if err > ROTATION_TOL or abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
        raise SchemaError(f"grasp entry {i}: rotation is not orthonormal (error {err:.2e})", entry=i)
    if err > 1e-12:
        r = orthonormalize(r)
    return GraspCandidate(GraspPose(RigidTransform(r, trans)), score, "imported")


def grasps_from_json(doc) -> tuple[list[GraspCandidate], dict]:
    if not isinstance(doc, dict) or not isinstance(doc.get("grasps"), list):
        raise SchemaError("grasp list must be an object with a 'grasps' array")
    scale = doc.get("score_scale", "unnormalized")
    if scale not in ("unnormalized", "unit"):
        raise SchemaError(f"score_scale must be 'unnormalized' or 'unit', not {scale!r}")
    header = {"gripper": doc.get("gripper") or {}, "score_scale": scale}
    return [_parse_entry(i, e) for i, e in enumerate(doc["grasps"])], header


def read_grasps(path) -> tuple[list[GraspCandidate], dict]:
    """Candidates in file order plus the header (gripper, score_scale)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CloudIOError(str(exc), path=path) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from exc
    return grasps_from_json(doc)


def import_grasps(path) -> list[GraspCandidate]:
    """Candidates in file order, ``source="imported"``."""
    return read_grasps(path)[0]
