"""Point clouds, rigid transforms and bounding volumes.

All containers are immutable: the wrapped arrays are copied on construction
and flagged read-only. Lengths are in meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidGeometryError

ORTHO_TOL = 1e-9
OBB_TOL = 1e-12


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidGeometryError(f"expected (N, 3) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidGeometryError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.count

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    __hash__ = None

    def subset(self, indices) -> "PointCloud":
        return PointCloud(self.points[np.asarray(indices, dtype=np.intp)])

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def aabb(self) -> "Aabb":
        if self.count == 0:
            raise InvalidGeometryError("empty cloud has no bounding box")
        return Aabb(self.points.min(axis=0), self.points.max(axis=0))

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))


def check_rotation(r, tol: float = ORTHO_TOL) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise InvalidGeometryError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        raise InvalidGeometryError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise InvalidGeometryError("rotation determinant is not +1")
    return r


def orthonormalize(r) -> np.ndarray:
    """Nearest proper rotation (SVD projection)."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def frame_from_axes(x, y) -> np.ndarray:
    """Rotation whose columns are x, y and x cross y (x, y unit, orthogonal)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.column_stack([x, y, np.cross(x, y)])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise InvalidGeometryError("translation must be finite")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def random(cls, rng: np.random.Generator, scale: float = 1.0) -> "RigidTransform":
        from scipy.spatial.transform import Rotation

        rot = Rotation.random(random_state=rng).as_matrix()
        return cls(rot, rng.uniform(-scale, scale, 3))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self @ other``: apply ``other`` first."""
        r = self.rotation @ other.rotation
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-12:
            r = orthonormalize(r)
        return RigidTransform(r, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    return PointCloud(t.apply(cloud.points))


@dataclass(frozen=True, eq=False)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise InvalidGeometryError("Aabb min must not exceed max")
        object.__setattr__(self, "min", _frozen(lo))
        object.__setattr__(self, "max", _frozen(hi))

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.min) & (p <= self.max), axis=1)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)


@dataclass(frozen=True, eq=False)
class Obb:
    center: np.ndarray
    axes: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        h = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if np.any(h < 0) or not np.all(np.isfinite(h)) or not np.all(np.isfinite(c)):
            raise InvalidGeometryError("Obb half extents must be finite and >= 0")
        a = np.asarray(self.axes, dtype=np.float64)
        if a.shape != (3, 3) or np.max(np.abs(a.T @ a - np.eye(3))) > ORTHO_TOL:
            raise InvalidGeometryError("Obb axes must be orthonormal")
        object.__setattr__(self, "center", _frozen(c))
        object.__setattr__(self, "axes", _frozen(a))
        object.__setattr__(self, "half_extents", _frozen(h))

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_extents))

    def to_local(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.axes

    def corners(self) -> np.ndarray:
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        return self.center + (signs * self.half_extents) @ self.axes.T

    def contains(self, points, tol: float = OBB_TOL) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if p.shape[0] == 0:
            return np.zeros(0, dtype=bool)
        return kernels.obb_mask(p, self.center, self.axes, self.half_extents, tol)


def points_in_obb(cloud: PointCloud, box: Obb) -> np.ndarray:
    """Sorted indices of the cloud points inside the closed box."""
    return np.flatnonzero(box.contains(cloud.points))


def pairwise_distances(points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    diff = p[:, None, :] - p[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))
