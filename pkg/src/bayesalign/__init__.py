"""Bayesian matching of unlabelled 3-D point sets by MCMC."""

__version__ = "0.1.0"

from .estimators import ConfigurationMatcher, ProcrustesMatcher
from .geom import EulerAngles, PointSet, RigidTransform, partial_procrustes
from .model import UNMATCHED, MatchMatrix, ModelConfig, ModelState, Pose

__all__ = [
    "ConfigurationMatcher",
    "EulerAngles",
    "MatchMatrix",
    "ModelConfig",
    "ModelState",
    "PointSet",
    "Pose",
    "ProcrustesMatcher",
    "RigidTransform",
    "UNMATCHED",
    "partial_procrustes",
]
