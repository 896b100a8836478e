"""Affordance-grounded sensorimotor object recognition at desk scale."""

from .archspec import ArchSpecError, FusionSpec, LayerName, parse_arch_spec
from .netgraph import (
    NetworkGraph,
    ScaleConfig,
    build_appearance_cnn,
    build_fused,
    build_st_cnn_lstm,
    build_tm_cnn,
    forward,
    list_layers,
    structure,
)
from .tensor import DimensionError, Tensor

__version__ = "0.1.0"

__all__ = [
    "ArchSpecError",
    "DimensionError",
    "FusionSpec",
    "LayerName",
    "NetworkGraph",
    "ScaleConfig",
    "Tensor",
    "build_appearance_cnn",
    "build_fused",
    "build_st_cnn_lstm",
    "build_tm_cnn",
    "forward",
    "list_layers",
    "parse_arch_spec",
    "structure",
    "__version__",
]
