"""Ensemble aggregation: mean completed cloud plus per-point uncertainty."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .cloud import PointCloud
from .completion import EnsembleStack
from .errors import InvalidStackError, LengthMismatchError
from .plyio import read_cloud, save_cloud

OBSERVED = 0
GENERATED = 1


@dataclass(frozen=True, eq=False)
class UncertainCloud:
    mean: PointCloud
    std: np.ndarray
    provenance: np.ndarray  # uint8, OBSERVED / GENERATED
    T_used: int

    def __post_init__(self):
        n = self.mean.count
        std = np.array(self.std, dtype=np.float64)
        prov = np.array(self.provenance, dtype=np.uint8)
        if std.shape != (n,) or prov.shape != (n,):
            raise LengthMismatchError("std and provenance must have one entry per point")
        if np.any(~np.isfinite(std)) or np.any(std < 0):
            raise InvalidStackError("std values must be finite and >= 0")
        if np.any(std[prov == OBSERVED] != 0):
            raise InvalidStackError("observed points must carry zero std")
        std.flags.writeable = False
        prov.flags.writeable = False
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "provenance", prov)

    @property
    def count(self) -> int:
        return self.mean.count

    @property
    def partial_count(self) -> int:
        """Observed points occupy the leading indices."""
        return int(np.sum(self.provenance == OBSERVED))

    @property
    def observed(self) -> np.ndarray:
        return self.provenance == OBSERVED


def aggregate(stack: EnsembleStack) -> UncertainCloud:
    """Per-point mean over passes and scalar spread
    ``sqrt(s_x^2 + s_y^2 + s_z^2)`` with sample (T - 1) standard deviations."""
    if not isinstance(stack, EnsembleStack):
        raise InvalidStackError("aggregate expects an EnsembleStack")
    mean, std = kernels.ensemble_stats(stack.passes)
    P = stack.partial_count
    # leading points are identical in every pass; pin them exactly
    mean[:P] = stack.passes[0, :P]
    std[:P] = 0.0
    prov = np.full(stack.N, GENERATED, dtype=np.uint8)
    prov[:P] = OBSERVED
    return UncertainCloud(PointCloud(mean), std, prov, stack.T)


def _stats_mm(values) -> dict:
    v = np.asarray(values, dtype=np.float64) * 1e3
    if v.size == 0:
        return {"count": 0, "min": None, "max": None, "mean": None}
    return {"count": int(v.size), "min": float(v.min()), "max": float(v.max()),
            "mean": float(v.mean())}


def std_summary(uc: UncertainCloud, band_mm=(2.0, 6.0)) -> dict:
    """Summary of the std channel in millimetres.

    ``in_band_fraction`` is the share of generated points whose std lies in
    the closed ``band_mm`` interval.
    """
    out = _stats_mm(uc.std)
    gen = uc.std[uc.provenance == GENERATED] * 1e3
    out["observed"] = _stats_mm(uc.std[uc.provenance == OBSERVED])
    out["generated"] = _stats_mm(uc.std[uc.provenance == GENERATED])
    lo, hi = band_mm
    out["band_mm"] = [float(lo), float(hi)]
    out["in_band_fraction"] = float(np.mean((gen >= lo) & (gen <= hi))) if gen.size else None
    out["units"] = "mm"
    return out


def save_uncertain_cloud(uc: UncertainCloud, path, color: bool = False,
                         format: str = "ply-binary-le") -> Path:
    """PLY with a ``std`` vertex property plus a ``<stem>.json`` sidecar."""
    path = Path(path)
    save_cloud(uc.mean, path, format, channels={"std": uc.std},
               color_by="std" if color else None)
    sidecar = {"T_used": uc.T_used, "P": uc.partial_count, "N": uc.count, "units": "m"}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_uncertain_cloud(path, partial_count: int | None = None) -> UncertainCloud:
    """Inverse of :func:`save_uncertain_cloud`.

    Without a sidecar (and no explicit ``partial_count``) the observed points
    are taken to be the leading run of zero-std points.
    """
    path = Path(path)
    data = read_cloud(path)
    std = data.std
    if std is None:
        raise LengthMismatchError(f"{path} has no 'std' vertex property", path=path)
    T_used = 0
    side = path.with_suffix(".json")
    if partial_count is None and side.is_file():
        meta = json.loads(side.read_text())
        partial_count = int(meta["P"])
        T_used = int(meta.get("T_used", 0))
    if partial_count is None:
        nz = np.flatnonzero(std != 0)
        partial_count = int(nz[0]) if nz.size else len(std)
    prov = np.full(len(std), GENERATED, dtype=np.uint8)
    prov[:partial_count] = OBSERVED
    std = np.array(std, dtype=np.float64)
    std[:partial_count] = 0.0
    return UncertainCloud(data.cloud, std, prov, T_used)
