"""Uncertainty-penalised re-ranking of grasp candidates.

Each candidate's closing region crops the mean completed cloud; the std of
the cropped points is summed and subtracted from the score:

    S' = S - W_u * sum(std)

then candidates are stably re-sorted by S' (ties keep the original order).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import Obb, points_in_obb
from .errors import ConfigError, EmptyCandidatesError
from .gripper import GraspCandidate, GripperModel, closing_region
from .uncertainty import UncertainCloud

W_U_UNNORMALIZED = 1e5  # scores in the hundreds to thousands
W_U_UNIT = 1e-1  # scores in [0, 1]


@dataclass(frozen=True, eq=False)
class CropResult:
    indices: np.ndarray
    points: np.ndarray
    stds: np.ndarray
    box: Obb

    @property
    def size(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class RescoreConfig:
    W_u: float = W_U_UNNORMALIZED
    tie_break: str = "original-rank"
    penalty_mode: str = "sum"

    def __post_init__(self):
        if not (math.isfinite(self.W_u) and self.W_u >= 0):
            raise ConfigError(f"W_u must be finite and >= 0, got {self.W_u!r}")
        if self.tie_break != "original-rank":
            raise ConfigError(f"unsupported tie_break {self.tie_break!r}")
        if self.penalty_mode not in ("sum", "mean"):
            raise ConfigError(f"penalty_mode must be 'sum' or 'mean', not {self.penalty_mode!r}")


@dataclass(frozen=True)
class RankedEntry:
    original_rank: int  # 1-based
    S: float
    crop_size: int
    penalty: float
    S_prime: float
    new_rank: int  # 1-based
    candidate: GraspCandidate

    def to_dict(self) -> dict:
        return {"original_rank": self.original_rank, "S": self.S, "crop_size": self.crop_size,
                "penalty_m": self.penalty, "S_prime": self.S_prime, "new_rank": self.new_rank}


@dataclass(frozen=True)
class RankedList:
    """Entries in new order (best first).

    ``permutation[i]`` is the original rank of the candidate now at position
    ``i + 1``; the identity permutation means nothing moved.
    """

    entries: tuple

    @property
    def permutation(self) -> list[int]:
        return [e.original_rank for e in self.entries]

    @property
    def candidates(self) -> list[GraspCandidate]:
        return [e.candidate for e in self.entries]

    def by_original_rank(self) -> list[RankedEntry]:
        return sorted(self.entries, key=lambda e: e.original_rank)

    def top(self, k: int) -> list[GraspCandidate]:
        return self.candidates[:k]

    def report(self) -> dict:
        return {"candidates": [e.to_dict() for e in self.by_original_rank()],
                "permutation": self.permutation}


def crop_for_grasp(uc: UncertainCloud, cand: GraspCandidate, g: GripperModel) -> CropResult:
    box = closing_region(g, cand.grasp)
    idx = points_in_obb(uc.mean, box)
    return CropResult(idx, uc.mean.points[idx], uc.std[idx], box)


def uncertainty_penalty(crop: CropResult, mode: str = "sum") -> float:
    """Compensated (exactly rounded) sum of the cropped stds, meters."""
    if crop.size == 0:
        return 0.0
    total = math.fsum(crop.stds.tolist())
    return total / crop.size if mode == "mean" else total


def rank_by_penalty(scores, penalties, W_u: float) -> list[int]:
    """0-based original indices in new order. Pure function of the inputs."""
    s_prime = [s - W_u * p for s, p in zip(scores, penalties)]
    return sorted(range(len(s_prime)), key=lambda i: (-s_prime[i], i))


def rescore(cands, uc: UncertainCloud, g: GripperModel, cfg: RescoreConfig | None = None,
            workers: int | None = None) -> RankedList:
    """Rescore ``cands`` (given in baseline order) against ``uc``."""
    cfg = cfg or RescoreConfig()
    cands = list(cands)
    if not cands:
        raise EmptyCandidatesError("rescore needs at least one candidate")

    def one(c):
        crop = crop_for_grasp(uc, c, g)
        return crop.size, uncertainty_penalty(crop, cfg.penalty_mode)

    if workers and workers > 1 and len(cands) > 1:
        with ThreadPoolExecutor(workers) as pool:
            crops = list(pool.map(one, cands))
    else:
        crops = [one(c) for c in cands]

    scores = [c.score for c in cands]
    penalties = [p for _, p in crops]
    order = rank_by_penalty(scores, penalties, cfg.W_u)
    entries = []
    for new_rank, i in enumerate(order, start=1):
        s_prime = scores[i] - cfg.W_u * penalties[i]
        entries.append(RankedEntry(i + 1, scores[i], crops[i][0], penalties[i], s_prime,
                                   new_rank, cands[i]))
    return RankedList(tuple(entries))


def write_report(ranked: RankedList, path, cfg: RescoreConfig | None = None) -> Path:
    doc = ranked.report()
    if cfg is not None:
        doc["W_u"] = cfg.W_u
        doc["penalty_mode"] = cfg.penalty_mode
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
