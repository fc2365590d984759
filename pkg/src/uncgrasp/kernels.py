"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The public names at the bottom of the module are bound to one flavour at
import time (see :mod:`uncgrasp._accel`). Both flavours are importable
directly as ``<name>_numba`` / ``<name>_numpy`` so tests and the benchmark can
compare them; ``<name>_numba`` is ``None`` when numba is not installed.
"""

import numpy as np

from ._accel import USE_NUMBA, njit, parallel_guard

try:
    from numba import prange
except ImportError:  # pragma: no cover
    prange = range


# ---------------------------------------------------------------- ensemble


_BLOCK = 256


@njit(parallel=True)
def _ensemble_stats_numba(stack):
    T, N, _ = stack.shape
    mean = np.zeros((N, 3))
    std = np.empty(N)
    nblocks = (N + _BLOCK - 1) // _BLOCK
    for b in prange(nblocks):
        lo = b * _BLOCK
        hi = min(N, lo + _BLOCK)
        # two passes over contiguous rows: mean, then squared deviations.
        # The mean is accumulated relative to pass 0 so identical passes
        # reproduce it exactly.
        for t in range(1, T):
            for i in range(lo, hi):
                for a in range(3):
                    mean[i, a] += stack[t, i, a] - stack[0, i, a]
        for i in range(lo, hi):
            for a in range(3):
                mean[i, a] = stack[0, i, a] + mean[i, a] / T
        ss = np.zeros(hi - lo)
        for t in range(T):
            for i in range(lo, hi):
                acc = 0.0
                for a in range(3):
                    d = stack[t, i, a] - mean[i, a]
                    acc += d * d
                ss[i - lo] += acc
        for i in range(lo, hi):
            std[i] = np.sqrt(ss[i - lo] / (T - 1))
    return mean, std


def ensemble_stats_numba(stack):
    """Per-point mean (N, 3) and scalar sample std (N,) over axis 0 of a
    (T, N, 3) stack, two-pass (mean first, then squared deviations). The
    mean is taken relative to the first pass."""
    stack = np.ascontiguousarray(stack, dtype=np.float64)
    with parallel_guard():
        return _ensemble_stats_numba(stack)


def ensemble_stats_numpy(stack):
    stack = np.asarray(stack, dtype=np.float64)
    T = stack.shape[0]
    base = stack[0]
    mean = base + (stack - base).sum(axis=0) / T
    var = ((stack - mean) ** 2).sum(axis=0) / (T - 1)
    return mean, np.sqrt(var.sum(axis=1))


# ---------------------------------------------------------------- obb test


@njit
def _obb_mask_numba(points, center, axes, half, tol):
    n = points.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        d0 = points[i, 0] - center[0]
        d1 = points[i, 1] - center[1]
        d2 = points[i, 2] - center[2]
        inside = True
        for j in range(3):
            loc = d0 * axes[0, j] + d1 * axes[1, j] + d2 * axes[2, j]
            if abs(loc) > half[j] + tol:
                inside = False
                break
        out[i] = inside
    return out


def obb_mask_numba(points, center, axes, half, tol):
    return _obb_mask_numba(
        np.ascontiguousarray(points, dtype=np.float64),
        np.asarray(center, dtype=np.float64),
        np.ascontiguousarray(axes, dtype=np.float64),
        np.asarray(half, dtype=np.float64),
        float(tol),
    )


def obb_mask_numpy(points, center, axes, half, tol):
    local = (np.asarray(points, dtype=np.float64) - center) @ axes
    return np.all(np.abs(local) <= np.asarray(half) + tol, axis=1)


# ------------------------------------------------------- box point counting


@njit(parallel=True)
def _count_in_boxes_numba(points, centers, rotations, half, tol):
    m = centers.shape[0]
    n = points.shape[0]
    counts = np.zeros(m, dtype=np.int64)
    for k in prange(m):
        c = 0
        for i in range(n):
            d0 = points[i, 0] - centers[k, 0]
            d1 = points[i, 1] - centers[k, 1]
            d2 = points[i, 2] - centers[k, 2]
            inside = True
            for j in range(3):
                loc = (
                    d0 * rotations[k, 0, j]
                    + d1 * rotations[k, 1, j]
                    + d2 * rotations[k, 2, j]
                )
                if abs(loc) > half[j] + tol:
                    inside = False
                    break
            if inside:
                c += 1
        counts[k] = c
    return counts


def count_in_boxes_numba(points, centers, rotations, half, tol=1e-12):
    """Number of points inside each of M oriented boxes sharing half extents."""
    args = (
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3),
        np.ascontiguousarray(rotations, dtype=np.float64).reshape(-1, 3, 3),
        np.asarray(half, dtype=np.float64),
        float(tol),
    )
    with parallel_guard():
        return _count_in_boxes_numba(*args)


def count_in_boxes_numpy(points, centers, rotations, half, tol=1e-12):
    points = np.asarray(points, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    rotations = np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
    limit = np.asarray(half) + tol
    counts = np.zeros(len(centers), dtype=np.int64)
    # chunk over boxes so the (m, n, 3) intermediate stays small
    step = max(1, 2_000_000 // max(1, 3 * len(points)))
    for s in range(0, len(centers), step):
        d = points[None, :, :] - centers[s : s + step, None, :]
        local = np.einsum("mni,mij->mnj", d, rotations[s : s + step])
        counts[s : s + step] = np.all(np.abs(local) <= limit, axis=2).sum(axis=1)
    return counts


# ------------------------------------------------------ lattice displacement


@njit
def _lattice_displacement_numba(idx, weights, coef, vectors, gain):
    g, m = idx.shape
    out = np.zeros((g, 3))
    for i in range(g):
        for c in range(m):
            k = idx[i, c]
            s = weights[i, c] * coef[k] * gain[i]
            out[i, 0] += s * vectors[k, 0]
            out[i, 1] += s * vectors[k, 1]
            out[i, 2] += s * vectors[k, 2]
    return out


def lattice_displacement_numba(idx, weights, coef, vectors, gain):
    """Displacement of each generated point: ``gain_i * sum_c w_ic coef_k v_k``
    over the lattice nodes ``k = idx[i, c]`` of its cell."""
    return _lattice_displacement_numba(
        np.ascontiguousarray(idx, dtype=np.int64),
        np.ascontiguousarray(weights, dtype=np.float64),
        np.asarray(coef, dtype=np.float64),
        np.ascontiguousarray(vectors, dtype=np.float64),
        np.asarray(gain, dtype=np.float64),
    )


def lattice_displacement_numpy(idx, weights, coef, vectors, gain):
    s = weights * np.asarray(coef)[idx] * np.asarray(gain)[:, None]
    return np.einsum("gc,gcj->gj", s, np.asarray(vectors)[idx])


# -------------------------------------------------------- plane consensus


@njit
def _plane_inlier_counts_numba(points, normals, offsets, tol):
    h = normals.shape[0]
    n = points.shape[0]
    counts = np.zeros(h, dtype=np.int64)
    for k in range(h):
        a = normals[k, 0]
        b = normals[k, 1]
        c = normals[k, 2]
        d = offsets[k]
        cnt = 0
        for i in range(n):
            if abs(a * points[i, 0] + b * points[i, 1] + c * points[i, 2] + d) <= tol:
                cnt += 1
        counts[k] = cnt
    return counts


def plane_inlier_counts_numba(points, normals, offsets, tol):
    """Inliers per plane hypothesis ``n . p + d = 0`` within ``tol``."""
    return _plane_inlier_counts_numba(
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(normals, dtype=np.float64),
        np.asarray(offsets, dtype=np.float64),
        float(tol),
    )


def plane_inlier_counts_numpy(points, normals, offsets, tol):
    points = np.asarray(points, dtype=np.float64)
    counts = np.zeros(len(normals), dtype=np.int64)
    step = max(1, 4_000_000 // max(1, len(points)))
    for s in range(0, len(normals), step):
        dist = points @ normals[s : s + step].T + offsets[s : s + step]
        counts[s : s + step] = (np.abs(dist) <= tol).sum(axis=0)
    return counts


if _ensemble_stats_numba is None:  # numba missing
    ensemble_stats_numba = obb_mask_numba = count_in_boxes_numba = None
    lattice_displacement_numba = plane_inlier_counts_numba = None

if USE_NUMBA:
    ensemble_stats = ensemble_stats_numba
    obb_mask = obb_mask_numba
    count_in_boxes = count_in_boxes_numba
    lattice_displacement = lattice_displacement_numba
    plane_inlier_counts = plane_inlier_counts_numba
    BACKEND = "numba"
else:
    ensemble_stats = ensemble_stats_numpy
    obb_mask = obb_mask_numpy
    count_in_boxes = count_in_boxes_numpy
    lattice_displacement = lattice_displacement_numpy
    plane_inlier_counts = plane_inlier_counts_numpy
    BACKEND = "numpy"
