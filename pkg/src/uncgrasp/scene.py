"""Synthetic table-top scenes and single-view capture.

A scene is a ground-truth object surface standing on the plane z = 0 of the
world frame, seen by one virtual camera. :func:`capture_view` produces what a
depth camera would return (visible object points plus a table patch), and
:func:`segment_plane` strips the table again.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from . import kernels
from .cloud import PointCloud, RigidTransform, axis_angle
from .errors import (
    CloudIOError,
    EmptySceneError,
    InsufficientPointsError,
    InvalidGeometryError,
    NoPlaneFoundError,
    ParseError,
)
from .plyio import read_cloud, save_cloud

RANSAC_ITERATIONS = 500
DEFAULT_REMOVAL_SCALE = 100.0


@dataclass(frozen=True)
class Plane:
    """``normal . p + offset = 0`` with a unit normal."""

    normal: tuple
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise InvalidGeometryError("plane normal must be a unit 3-vector")
        object.__setattr__(self, "normal", tuple(float(v) for v in n))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n(self) -> np.ndarray:
        return np.array(self.normal)

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.n + self.offset

    def to_list(self) -> list:
        return [*self.normal, self.offset]

    @classmethod
    def from_list(cls, coeffs) -> "Plane":
        a, b, c, d = (float(v) for v in coeffs)
        return cls((a, b, c), d)


TABLE = Plane((0.0, 0.0, 1.0), 0.0)


@dataclass(frozen=True)
class VirtualCamera:
    """Camera-to-world pose; the camera looks along its local +z."""

    pose: RigidTransform
    removal_radius_scale: float = DEFAULT_REMOVAL_SCALE

    def __post_init__(self):
        if not self.removal_radius_scale > 0:
            raise InvalidGeometryError("removal_radius_scale must be positive")

    @property
    def origin(self) -> np.ndarray:
        return self.pose.translation

    @property
    def view_direction(self) -> np.ndarray:
        return self.pose.rotation[:, 2]

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), removal_radius_scale=DEFAULT_REMOVAL_SCALE):
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [1.0, 0.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(RigidTransform(np.column_stack([x, y, z]), eye), removal_radius_scale)


@dataclass(frozen=True, eq=False)
class Scene:
    ground_truth: PointCloud
    table_plane: Plane
    object_pose: RigidTransform
    normals: np.ndarray | None = None
    camera: VirtualCamera | None = None
    seed: int = 0
    scene_id: str = "scene"
    shape: dict = field(default_factory=dict)
    completion: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.normals is not None:
            nrm = np.array(self.normals, dtype=np.float64)
            if nrm.shape != self.ground_truth.points.shape:
                raise InvalidGeometryError("normals must match ground truth shape")
            nrm.flags.writeable = False
            object.__setattr__(self, "normals", nrm)

    def transformed(self, t: RigidTransform) -> "Scene":
        """The same scene with every geometric quantity moved by ``t``."""
        n = self.table_plane.n
        new_n = t.apply_vectors(n)
        # a point p on the plane maps to t(p); keep n'.t(p) + d' = 0
        p0 = -self.table_plane.offset * n
        new_plane = Plane(tuple(new_n), float(-new_n @ t.apply(p0)))
        cam = None
        if self.camera is not None:
            cam = VirtualCamera(t @ self.camera.pose, self.camera.removal_radius_scale)
        return Scene(
            PointCloud(t.apply(self.ground_truth.points)),
            new_plane,
            t @ self.object_pose,
            None if self.normals is None else t.apply_vectors(self.normals),
            cam,
            self.seed,
            self.scene_id,
            dict(self.shape),
            dict(self.completion),
        )


# ---------------------------------------------------------- visibility


def _hull_vertices(points: np.ndarray) -> np.ndarray:
    """Indices of the convex-hull vertices, handling degenerate dimensions."""
    centred = points - points.mean(axis=0)
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    scale = max(s[0], 1e-300) if s.size else 0.0
    rank = int(np.sum(s > 1e-10 * scale)) if scale > 0 else 0
    if rank == 0:
        return np.arange(len(points))
    coords = centred @ vt[:rank].T
    if rank == 1:
        c = coords[:, 0]
        return np.unique([int(np.argmin(c)), int(np.argmax(c))])
    return np.asarray(ConvexHull(coords).vertices, dtype=np.intp)


def visible_indices(points, origin, radius_scale: float = DEFAULT_REMOVAL_SCALE) -> np.ndarray:
    """Spherical-flip hidden point removal; sorted indices of visible points.

    Points are flipped about a sphere centred on ``origin`` whose radius is
    ``radius_scale`` times the largest point distance; a point is visible when
    its flipped image is a vertex of the convex hull of the flipped set plus
    the origin.
    """
    p = np.asarray(points, dtype=np.float64) - np.asarray(origin, dtype=np.float64)
    n = len(p)
    if n == 0:
        return np.zeros(0, dtype=np.intp)
    norms = np.linalg.norm(p, axis=1)
    if np.any(norms == 0):
        raise InvalidGeometryError("a point coincides with the camera origin")
    radius = radius_scale * norms.max()
    flipped = p + 2.0 * (radius - norms)[:, None] * (p / norms[:, None])
    hull = _hull_vertices(np.vstack([flipped, np.zeros((1, 3))]))
    return np.sort(hull[hull < n])


def render_partial_view(scene: Scene, cam: VirtualCamera | None = None) -> PointCloud:
    cam = cam or scene.camera
    if cam is None:
        raise InvalidGeometryError("scene has no camera and none was given")
    if scene.ground_truth.count == 0:
        raise EmptySceneError("ground truth cloud is empty", scene=scene.scene_id)
    idx = visible_indices(scene.ground_truth.points, cam.origin, cam.removal_radius_scale)
    return scene.ground_truth.subset(idx)


def table_patch(scene: Scene, radius: float = 0.2, spacing: float = 0.008) -> np.ndarray:
    """Regular grid of table points around the object footprint."""
    n = scene.table_plane.n
    centre = scene.object_pose.translation
    centre = centre - scene.table_plane.signed_distance(centre) * n
    u = np.cross(n, [1.0, 0.0, 0.0])
    if np.linalg.norm(u) < 1e-6:
        u = np.cross(n, [0.0, 1.0, 0.0])
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    ticks = np.arange(-radius, radius + 0.5 * spacing, spacing)
    a, b = np.meshgrid(ticks, ticks, indexing="ij")
    keep = a**2 + b**2 <= radius**2
    a, b = a[keep], b[keep]
    return centre + a[:, None] * u + b[:, None] * v


def capture_view(scene: Scene, cam: VirtualCamera | None = None, table_radius: float = 0.2,
                 table_spacing: float = 0.008) -> PointCloud:
    """Visible object points followed by a table patch, as a depth camera sees them."""
    partial = render_partial_view(scene, cam)
    return PointCloud(np.vstack([partial.points, table_patch(scene, table_radius, table_spacing)]))


# ---------------------------------------------------------- segmentation


def fit_plane_ransac(points, distance_tol: float, min_inliers: int, seed: int = 0,
                     iterations: int = RANSAC_ITERATIONS):
    """Best-consensus plane and its inlier mask."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 3:
        raise InsufficientPointsError(f"plane fit needs 3 points, got {n}")
    rng = np.random.default_rng(seed)
    if n == 3:
        triples = np.array([[0, 1, 2]])
    else:
        triples = np.stack([rng.choice(n, 3, replace=False) for _ in range(iterations)])
    a, b, c = pts[triples[:, 0]], pts[triples[:, 1]], pts[triples[:, 2]]
    normals = np.cross(b - a, c - a)
    lens = np.linalg.norm(normals, axis=1)
    extent = np.max(np.ptp(pts, axis=0))
    ok = lens > 1e-12 * max(extent, 1e-12) ** 2
    if not np.any(ok):
        raise NoPlaneFoundError("all sampled triples are collinear")
    normals = normals[ok] / lens[ok, None]
    offsets = -np.einsum("ij,ij->i", normals, a[ok])
    counts = kernels.plane_inlier_counts(pts, normals, offsets, distance_tol)
    best = int(np.argmax(counts))  # first maximum wins
    if counts[best] < min_inliers:
        raise NoPlaneFoundError(
            f"best plane has {counts[best]} inliers, need {min_inliers}",
            best=int(counts[best]),
        )
    normal, offset = normals[best], offsets[best]
    mask = np.abs(pts @ normal + offset) <= distance_tol
    outliers = pts[~mask]
    # orient toward the object side, else toward +z / first non-zero axis
    side = float(np.mean(outliers @ normal + offset)) if len(outliers) else 0.0
    if side < 0 or (side == 0 and _first_nonzero(normal) < 0):
        normal, offset = -normal, -offset
    return Plane(tuple(normal), offset), mask


def _first_nonzero(v) -> float:
    for x in v[::-1]:
        if abs(x) > 1e-12:
            return float(x)
    return 0.0


def segment_plane(cloud: PointCloud, distance_tol: float, min_inliers: int, seed: int = 0,
                  iterations: int = RANSAC_ITERATIONS):
    """RANSAC table removal: ``(plane, cloud_without_inliers)``."""
    plane, mask = fit_plane_ransac(cloud.points, distance_tol, min_inliers, seed, iterations)
    return plane, cloud.subset(np.flatnonzero(~mask))


# ---------------------------------------------------------- primitives


def _sample_box(dims, n, rng):
    dx, dy, dz = dims
    faces = [  # (normal axis, sign, area)
        (0, -1, dy * dz), (0, 1, dy * dz),
        (1, -1, dx * dz), (1, 1, dx * dz),
        (2, -1, dx * dy), (2, 1, dx * dy),
    ]
    areas = np.array([f[2] for f in faces])
    which = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.array(dims)
    nrm = np.zeros((n, 3))
    for k, (ax, sign, _) in enumerate(faces):
        sel = which == k
        pts[sel, ax] = sign * 0.5 * dims[ax]
        nrm[sel, ax] = sign
    pts[:, 2] += 0.5 * dz
    return pts, nrm


def _sample_cylinder(radius, height, n, rng):
    side = 2 * np.pi * radius * height
    cap = np.pi * radius**2
    kind = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, n)
    pts = np.zeros((n, 3))
    nrm = np.zeros((n, 3))
    s = kind == 0
    pts[s] = np.column_stack([radius * np.cos(theta[s]), radius * np.sin(theta[s]), rng.uniform(0, height, s.sum())])
    nrm[s] = np.column_stack([np.cos(theta[s]), np.sin(theta[s]), np.zeros(s.sum())])
    for k, z, nz in ((1, 0.0, -1.0), (2, height, 1.0)):
        c = kind == k
        r = radius * np.sqrt(rng.uniform(0, 1, c.sum()))
        pts[c] = np.column_stack([r * np.cos(theta[c]), r * np.sin(theta[c]), np.full(c.sum(), z)])
        nrm[c] = [0.0, 0.0, nz]
    return pts, nrm


def _sample_sphere(radius, n, rng):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v + [0.0, 0.0, radius], v


def sample_shape(shape: dict, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Surface points and outward normals of a primitive resting on z = 0."""
    kind = shape["kind"]
    if kind == "box":
        return _sample_box(np.asarray(shape["dims"], dtype=np.float64), n, rng)
    if kind == "cylinder":
        return _sample_cylinder(float(shape["radius"]), float(shape["height"]), n, rng)
    if kind == "sphere":
        return _sample_sphere(float(shape["radius"]), n, rng)
    raise InvalidGeometryError(f"unknown shape kind {kind!r}")


def make_scene(shape: dict, seed: int, scene_id: str = "scene", n_points: int = 4000,
               eye=(0.0, -0.5, 0.32), completion: dict | None = None,
               position_jitter: float = 0.04) -> Scene:
    """Place a primitive at a seeded random yaw/position and aim a side-angle
    camera at it."""
    rng = np.random.default_rng(seed)
    yaw = float(rng.uniform(0, 2 * np.pi))
    xy = rng.uniform(-position_jitter, position_jitter, 2)
    pose = RigidTransform(axis_angle([0.0, 0.0, 1.0], yaw), [xy[0], xy[1], 0.0])
    local, nrm = sample_shape(shape, n_points, rng)
    pts = pose.apply(local)
    height = float(np.ptp(local[:, 2]))
    cam = VirtualCamera.look_at(eye, [0.0, 0.0, 0.4 * height])
    return Scene(PointCloud(pts), TABLE, pose, pose.apply_vectors(nrm), cam, seed,
                 scene_id, dict(shape), dict(completion or {}))


# ---------------------------------------------------------- fixture sets

STANDARD_SHAPES = [
    {"kind": "cylinder", "radius": 0.0375, "height": 0.23, "name": "chips-can"},
    {"kind": "box", "dims": [0.06, 0.16, 0.21], "name": "cracker-box"},
    {"kind": "cylinder", "radius": 0.033, "height": 0.10, "name": "soup-can"},
    {"kind": "box", "dims": [0.05, 0.09, 0.17], "name": "bottle-box"},
    {"kind": "box", "dims": [0.035, 0.09, 0.075], "name": "gelatin-box"},
    {"kind": "cylinder", "radius": 0.04, "height": 0.09, "name": "mug-body"},
    {"kind": "sphere", "radius": 0.036, "name": "baseball"},
    {"kind": "box", "dims": [0.07, 0.12, 0.16], "name": "drill-box"},
    {"kind": "cylinder", "radius": 0.03, "height": 0.20, "name": "cleanser"},
    {"kind": "box", "dims": [0.045, 0.06, 0.12], "name": "small-box"},
]


def standard_scenes(seed: int = 0) -> list[Scene]:
    return [
        make_scene(shape, seed * 1000 + i, f"scene_{i:03d}")
        for i, shape in enumerate(STANDARD_SHAPES)
    ]


ADVERSARIAL_SHAPES = [
    {"kind": "cylinder", "radius": 0.03, "height": 0.16, "name": "adv-cylinder"},
    {"kind": "box", "dims": [0.05, 0.05, 0.16], "name": "adv-box"},
]
# the hidden side is completed 25 mm too close to the camera: grasps that
# trust it meet the real back face, and they are exactly the high-std ones
ADVERSARIAL_COMPLETION = {"far_side_bias": -0.025}


def adversarial_scenes(seed: int = 0, n: int = 20) -> list[Scene]:
    """Scenes whose completion deviates from the truth on the hidden side."""
    return [
        make_scene(ADVERSARIAL_SHAPES[i % len(ADVERSARIAL_SHAPES)], seed * 1000 + 500 + i,
                   f"adv_{i:03d}", completion=ADVERSARIAL_COMPLETION)
        for i in range(n)
    ]


def trivial_scene(seed: int = 0) -> Scene:
    """A thin graspable box with completion noise switched off."""
    return make_scene({"kind": "box", "dims": [0.03, 0.12, 0.15], "name": "thin-box"},
                      seed, "trivial_000", completion={"dropout_rate": 0.0})


# ---------------------------------------------------------- fixture I/O


def write_scene(scene: Scene, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    channels = {}
    if scene.normals is not None:
        channels = {"nx": scene.normals[:, 0], "ny": scene.normals[:, 1], "nz": scene.normals[:, 2]}
    save_cloud(scene.ground_truth, d / "ground_truth.ply", "ply-binary-le", channels=channels)
    meta = {
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "table_plane": scene.table_plane.to_list(),
        "object_pose": scene.object_pose.matrix().tolist(),
        "camera_pose": None if scene.camera is None else scene.camera.pose.matrix().tolist(),
        "removal_radius_scale": None if scene.camera is None else scene.camera.removal_radius_scale,
        "shape": scene.shape,
        "completion": scene.completion,
    }
    (d / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def read_scene(directory) -> Scene:
    d = Path(directory)
    try:
        meta = json.loads((d / "scene.json").read_text())
    except FileNotFoundError as exc:
        raise CloudIOError(f"missing scene.json in {d}", path=d) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"scene.json is not valid JSON: {exc}", path=d / "scene.json") from exc
    data = read_cloud(d / "ground_truth.ply")
    normals = None
    if all(k in data.channels for k in ("nx", "ny", "nz")):
        normals = np.column_stack([data.channels[k] for k in ("nx", "ny", "nz")])
    cam = None
    if meta.get("camera_pose") is not None:
        cam = VirtualCamera(RigidTransform.from_matrix(meta["camera_pose"]),
                            float(meta.get("removal_radius_scale") or DEFAULT_REMOVAL_SCALE))
    return Scene(
        data.cloud,
        Plane.from_list(meta["table_plane"]),
        RigidTransform.from_matrix(meta["object_pose"]),
        normals,
        cam,
        int(meta.get("seed", 0)),
        str(meta.get("scene_id", d.name)),
        dict(meta.get("shape") or {}),
        dict(meta.get("completion") or {}),
    )


def write_fixture_set(scenes, directory) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for sc in scenes:
        write_scene(sc, root / sc.scene_id)
    index = {"scenes": [sc.scene_id for sc in scenes]}
    (root / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    return root


def read_fixture_set(directory) -> list[Scene]:
    root = Path(directory)
    if (root / "scene.json").is_file():
        return [read_scene(root)]
    index = root / "index.json"
    if index.is_file():
        names = json.loads(index.read_text())["scenes"]
    else:
        names = sorted(p.name for p in root.iterdir() if (p / "scene.json").is_file())
    if not names:
        raise CloudIOError(f"no scenes under {root}", path=root)
    return [read_scene(root / n) for n in names]
