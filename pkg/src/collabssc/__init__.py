"""Deterministic simulation and evaluation of collaborative LiDAR semantic scene completion."""

from .fusion import FusionMode, run_frame
from .geometry import Pose6D
from .metrics import MetricsReport, aggregate, evaluate
from .voxelgrid import DEFAULT_SPEC, GridSpec, SemanticGrid, SemanticLabel
from .worldsim import Scene, SceneConfig, build_scene, ground_truth_grid

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SPEC",
    "FusionMode",
    "GridSpec",
    "MetricsReport",
    "Pose6D",
    "Scene",
    "SceneConfig",
    "SemanticGrid",
    "SemanticLabel",
    "aggregate",
    "build_scene",
    "evaluate",
    "ground_truth_grid",
    "run_frame",
]
