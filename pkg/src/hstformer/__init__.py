"""Hierarchical spatial-temporal transformer toolkit for 2D-to-3D pose lifting."""

from .estimator import PoseLifter3D
from .model import EncoderConfig, forward, init_params, param_count, flops_estimate
from .skeleton import default_skeleton, mirror_pairs
from .tensor import Tensor, grad_check

__all__ = [
    "PoseLifter3D", "EncoderConfig", "forward", "init_params", "param_count",
    "flops_estimate", "default_skeleton", "mirror_pairs", "Tensor", "grad_check",
]

__version__ = "0.1.0"
