"""Stochastic shape-completion backends and ensembles.

A backend maps a partial cloud to a completed cloud of fixed size ``N`` whose
first ``P`` points are the partial input itself; the remaining points are
generated and change from draw to draw. Point ``i`` means the same surface
location in every draw, so an ensemble of draws can be averaged index by
index.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .cloud import PointCloud
from .errors import (
    CountMismatchError,
    EmptyPartialError,
    InvalidGeometryError,
    InvalidStackError,
    InvalidTError,
    PartialMismatchError,
)
from .plyio import load_cloud, save_cloud

DEFAULT_T = 60
DEFAULT_OUTPUT_SIZE = 2048


def derive_seed(seed: int, t: int) -> int:
    """Seed of draw ``t``; independent of every other draw index."""
    words = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(t),)).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


@dataclass(frozen=True, eq=False)
class EnsembleStack:
    passes: np.ndarray  # (T, N, 3)
    partial_count: int
    tol: float = 0.0

    def __post_init__(self):
        arr = np.array(self.passes, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidStackError(f"passes must be (T, N, 3), got {arr.shape}")
        T, N, _ = arr.shape
        P = int(self.partial_count)
        if T < 2:
            raise InvalidStackError(f"an ensemble needs T >= 2 passes, got {T}")
        if not 0 <= P <= N:
            raise InvalidStackError(f"partial_count {P} outside [0, {N}]")
        if not np.all(np.isfinite(arr)):
            raise InvalidStackError("non-finite coordinates in ensemble")
        lead = arr[:, :P]
        if P and np.max(np.abs(lead - lead[0])) > self.tol:
            raise PartialMismatchError("leading partial points differ across passes")
        arr.flags.writeable = False
        object.__setattr__(self, "passes", arr)
        object.__setattr__(self, "partial_count", P)

    @property
    def T(self) -> int:
        return self.passes.shape[0]

    @property
    def N(self) -> int:
        return self.passes.shape[1]

    def pass_cloud(self, t: int) -> PointCloud:
        return PointCloud(self.passes[t])


class CompletionBackend(ABC):
    """Stochastic partial -> completed cloud map with index correspondence."""

    backend_id = "abstract"
    output_size: int

    @abstractmethod
    def complete(self, partial: PointCloud, draw_seed: int) -> PointCloud:
        """One draw. Must return ``output_size`` points led by ``partial``."""

    def seed_for(self, seed: int, t: int) -> int:
        return derive_seed(seed, t)


def complete_once(backend: CompletionBackend, partial: PointCloud, draw_seed: int) -> PointCloud:
    if partial.count == 0:
        raise EmptyPartialError("partial cloud is empty")
    out = backend.complete(partial, draw_seed)
    if out.count != backend.output_size:
        raise InvalidStackError(
            f"backend returned {out.count} points, expected {backend.output_size}"
        )
    if not np.array_equal(out.points[: partial.count], partial.points):
        raise PartialMismatchError("backend altered the partial points")
    return out


def complete_ensemble(backend: CompletionBackend, partial: PointCloud, T: int, seed: int,
                      workers: int | None = None) -> EnsembleStack:
    """``T`` draws with per-draw seeds derived from ``(seed, t)``.

    ``workers > 1`` runs draws on a thread pool; the result does not depend
    on the schedule.
    """
    if int(T) != T or T < 2:
        raise InvalidTError(f"T must be an integer >= 2, got {T!r}")
    if partial.count == 0:
        raise EmptyPartialError("partial cloud is empty")
    prepared = backend.prepare(partial) if hasattr(backend, "prepare") else None

    def draw(t):
        s = backend.seed_for(seed, t)
        if prepared is not None:
            out = backend.draw(prepared, s)
            if out.count != backend.output_size:
                raise InvalidStackError("backend returned wrong point count")
            return out
        return complete_once(backend, partial, s)

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            clouds = list(pool.map(draw, range(T)))
    else:
        clouds = [draw(t) for t in range(T)]
    return EnsembleStack(np.stack([c.points for c in clouds]), partial.count)


# ------------------------------------------------------------ mirror backend


@dataclass(frozen=True)
class MirrorCompleterConfig:
    seed: int = 0
    dropout_rate: float = 0.5
    perturbation_scale: float = 0.004
    grid: tuple = (4, 4, 4)
    output_size: int = DEFAULT_OUTPUT_SIZE
    far_side_bias: float = 0.0
    min_gain: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate <= 0.5:
            raise InvalidGeometryError("dropout_rate must lie in [0, 0.5]")
        if not self.perturbation_scale > 0:
            raise InvalidGeometryError("perturbation_scale must be positive")
        grid = tuple(int(g) for g in self.grid)
        if len(grid) != 3 or min(grid) < 2:
            raise InvalidGeometryError("grid needs three resolutions >= 2")
        object.__setattr__(self, "grid", grid)
        if self.output_size < 2:
            raise InvalidGeometryError("output_size must be >= 2")
        if not 0.0 <= self.min_gain <= 1.0:
            raise InvalidGeometryError("min_gain must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class MirrorGeometry:
    """Everything about a completion that does not depend on the draw."""

    partial: PointCloud
    plane_point: np.ndarray
    plane_normal: np.ndarray
    frame: np.ndarray  # columns: normal, u, w
    base: np.ndarray  # (G, 3) generated points before perturbation
    cell_nodes: np.ndarray  # (G, 8) lattice node indices
    cell_weights: np.ndarray  # (G, 8) trilinear weights
    node_vectors: np.ndarray  # (K, 3) world-frame control vectors
    gain: np.ndarray  # (G,) distance-to-partial falloff in [min_gain, 1]


def _trilinear(local, lo, hi, grid):
    g = np.asarray(grid)
    span = np.where(hi > lo, hi - lo, 1.0)
    s = np.clip((local - lo) / span, 0.0, 1.0) * (g - 1)
    i0 = np.minimum(np.floor(s).astype(np.int64), g - 2)
    f = s - i0
    nodes = np.empty((len(local), 8), dtype=np.int64)
    weights = np.empty((len(local), 8))
    c = 0
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                ix, iy, iz = i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz
                nodes[:, c] = (ix * g[1] + iy) * g[2] + iz
                weights[:, c] = wx * wy * wz
                c += 1
    return nodes, weights


class MirrorCompleter(CompletionBackend):
    """Toy completer: reflect the partial through an estimated symmetry plane
    and jitter the reflection with a dropout-masked control lattice.

    With ``view_origin`` (and optionally the table normal ``up``) the plane
    normal is the viewing direction projected onto the table; otherwise it is
    the principal axis of least spread.
    """

    backend_id = "mirror"

    def __init__(self, config: MirrorCompleterConfig | None = None, view_origin=None, up=None):
        self.config = config or MirrorCompleterConfig()
        self.output_size = self.config.output_size
        self.view_origin = None if view_origin is None else np.asarray(view_origin, dtype=np.float64)
        self.up = None if up is None else np.asarray(up, dtype=np.float64) / np.linalg.norm(up)

    # geometry ---------------------------------------------------------------

    def symmetry_plane(self, partial: PointCloud):
        pts = partial.points
        c = pts.mean(axis=0)
        n = None
        if self.view_origin is not None:
            v = c - self.view_origin
            if self.up is not None:
                v = v - (v @ self.up) * self.up
            if np.linalg.norm(v) > 1e-9:
                n = v / np.linalg.norm(v)
        if n is None:
            cov = np.cov((pts - c).T) if len(pts) > 1 else np.eye(3)
            _, vecs = np.linalg.eigh(np.atleast_2d(cov))
            n = vecs[:, 0]
            if self.view_origin is not None:
                if n @ (c - self.view_origin) < 0:
                    n = -n
            elif n[np.argmax(np.abs(n))] < 0:
                n = -n
        return c, n

    def _frame(self, partial, n):
        ref = self.up
        if ref is None or abs(ref @ n) > 0.999:
            pts = partial.points - partial.points.mean(axis=0)
            if len(pts) > 1:
                _, vecs = np.linalg.eigh(np.cov(pts.T))
                ref = vecs[:, 2]
            if ref is None or abs(ref @ n) > 0.999:
                ref = np.eye(3)[int(np.argmin(np.abs(n)))]
        u = ref - (ref @ n) * n
        u /= np.linalg.norm(u)
        return np.column_stack([n, u, np.cross(n, u)])

    def prepare(self, partial: PointCloud) -> MirrorGeometry:
        cfg = self.config
        P = partial.count
        if P == 0:
            raise EmptyPartialError("partial cloud is empty")
        G = cfg.output_size - P
        if G < 1:
            raise InvalidGeometryError(
                f"partial has {P} points; output_size {cfg.output_size} leaves no room"
            )
        c, n = self.symmetry_plane(partial)
        pts = partial.points
        depth = (pts - c) @ n
        reflected = pts - 2.0 * depth[:, None] * n + cfg.far_side_bias * n
        # only reflections that land behind the plane propose hidden surface;
        # points seen beyond the centroid (e.g. a top face) would otherwise be
        # mirrored into free space in front of the object
        src = np.flatnonzero(depth < 0)
        if src.size == 0:
            src = np.arange(P)
        base = reflected[src[(np.arange(G) * src.size) // G]]

        frame = self._frame(partial, n)
        local = (base - c) @ frame
        lo, hi = local.min(axis=0), local.max(axis=0)
        nodes, weights = _trilinear(local, lo, hi, cfg.grid)

        k = int(np.prod(cfg.grid))
        signs = np.where(_generator(cfg.seed).random((k, 3)) < 0.5, -1.0, 1.0)
        vectors = (cfg.perturbation_scale * signs) @ frame.T

        dist, _ = cKDTree(pts).query(base)
        dmax = dist.max()
        ramp = dist / dmax if dmax > 0 else np.ones_like(dist)
        gain = cfg.min_gain + (1.0 - cfg.min_gain) * ramp
        return MirrorGeometry(partial, c, n, frame, base, nodes, weights, vectors, gain)

    def draw(self, geom: MirrorGeometry, draw_seed: int) -> PointCloud:
        p = self.config.dropout_rate
        k = len(geom.node_vectors)
        if p == 0.0:
            generated = geom.base
        else:
            keep = _generator(draw_seed).random(k) >= p
            # inverted dropout, centred: zero-mean, zero when nothing is dropped
            coef = keep / (1.0 - p) - 1.0
            disp = kernels.lattice_displacement(
                geom.cell_nodes, geom.cell_weights, coef, geom.node_vectors, geom.gain
            )
            generated = geom.base + disp
        return PointCloud(np.vstack([geom.partial.points, generated]))

    def complete(self, partial: PointCloud, draw_seed: int) -> PointCloud:
        return self.draw(self.prepare(partial), draw_seed)

    def displacement_bound(self, geom: MirrorGeometry) -> np.ndarray:
        """Per generated point, the largest possible difference between two
        draws: ``gain * sum_c w_c |v_c| / (1 - p)``."""
        p = self.config.dropout_rate
        norms = np.linalg.norm(geom.node_vectors, axis=1)
        reach = (geom.cell_weights * norms[geom.cell_nodes]).sum(axis=1) * geom.gain
        return reach / (1.0 - p) if p > 0 else np.zeros(len(reach))


# ------------------------------------------------------------ file backend


class FileBackend(CompletionBackend):
    """Replays completions dumped by an external network, one file per pass.

    Draw ``t`` of an ensemble is file ``t``; ``seed_for`` ignores the seed.
    """

    backend_id = "file"

    def __init__(self, paths, partial_count: int):
        self.stack = load_ensemble(paths, partial_count)
        self.output_size = self.stack.N

    def seed_for(self, seed: int, t: int) -> int:
        return t

    def complete(self, partial: PointCloud, draw_seed: int) -> PointCloud:
        P = self.stack.partial_count
        if partial.count != P or np.max(np.abs(self.stack.passes[0, :P] - partial.points), initial=0.0) > 1e-9:
            raise PartialMismatchError("partial does not match the dumped completions")
        t = int(draw_seed) % self.stack.T
        out = self.stack.passes[t].copy()
        out[:P] = partial.points
        return PointCloud(out)


def load_ensemble(paths, partial_count: int) -> EnsembleStack:
    paths = [Path(p) for p in paths]
    if len(paths) < 2:
        raise InvalidTError(f"need at least 2 completion files, got {len(paths)}")
    clouds = [load_cloud(p)[0] for p in paths]
    counts = [c.count for c in clouds]
    if len(set(counts)) != 1:
        raise CountMismatchError(f"completion files have unequal counts {sorted(set(counts))}",
                                 counts=str(counts))
    if not 0 <= partial_count <= counts[0]:
        raise InvalidStackError(f"partial_count {partial_count} outside [0, {counts[0]}]")
    return EnsembleStack(np.stack([c.points for c in clouds]), partial_count, tol=1e-9)


def dump_ensemble(stack: EnsembleStack, directory, seed: int | None = None,
                  backend_id: str = "unknown") -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t in range(stack.T):
        save_cloud(stack.pass_cloud(t), d / f"pass_{t:04d}.ply", "ply-binary-le")
    manifest = {"T": stack.T, "N": stack.N, "P": stack.partial_count, "seed": seed,
                "backend": backend_id}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_ensemble_dir(directory) -> EnsembleStack:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    paths = [d / f"pass_{t:04d}.ply" for t in range(int(manifest["T"]))]
    stack = load_ensemble(paths, int(manifest["P"]))
    if stack.N != int(manifest["N"]):
        raise CountMismatchError(f"manifest says N={manifest['N']}, files have {stack.N}")
    return stack
