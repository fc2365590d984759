"""Uncertainty-aware re-ranking of parallel-jaw grasp candidates.

Stochastic shape completions are aggregated into a mean cloud with per-point
standard deviation; each grasp's score is penalised by the summed std of the
points between its fingers, and the candidates are re-ranked.
"""

__version__ = "0.1.0"

from .cloud import Obb, PointCloud, RigidTransform, apply_transform, points_in_obb
from .completion import EnsembleStack, MirrorCompleter, MirrorCompleterConfig, complete_ensemble
from .config import PipelineConfig
from .errors import UncGraspError
from .evaluation import grasp_success_oracle, precision_at_k, run_experiment
from .gripper import GraspCandidate, GraspPose, GripperModel, closing_region, contact_points, sample_grasps
from .kernels import BACKEND
from .rescore import RescoreConfig, crop_for_grasp, rescore, uncertainty_penalty
from .uncertainty import UncertainCloud, aggregate

__all__ = [
    "BACKEND",
    "EnsembleStack",
    "GraspCandidate",
    "GraspPose",
    "GripperModel",
    "MirrorCompleter",
    "MirrorCompleterConfig",
    "Obb",
    "PipelineConfig",
    "PointCloud",
    "RescoreConfig",
    "RigidTransform",
    "UncGraspError",
    "UncertainCloud",
    "aggregate",
    "apply_transform",
    "closing_region",
    "complete_ensemble",
    "contact_points",
    "crop_for_grasp",
    "grasp_success_oracle",
    "points_in_obb",
    "precision_at_k",
    "rescore",
    "run_experiment",
    "sample_grasps",
    "uncertainty_penalty",
]
