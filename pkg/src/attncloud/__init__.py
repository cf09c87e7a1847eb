"""Attention-based latent-to-point-cloud generation, completion, and
evaluation toolkit."""

from .cloud import PointCloud, read_cloud, write_cloud
from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    NumericsError,
    ShapeError,
)
from .layers import AttnTransform, AttnTransformConfig, attn_param_count
from .models import Autoencoder, CompletionConfig, CompletionNet, ReconstructionConfig
from .tensor import Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "AttnTransform",
    "AttnTransformConfig",
    "Autoencoder",
    "CompletionConfig",
    "CompletionNet",
    "ConfigError",
    "ContractError",
    "FormatError",
    "NumericsError",
    "PointCloud",
    "ReconstructionConfig",
    "ShapeError",
    "Tensor",
    "attn_param_count",
    "backward",
    "read_cloud",
    "write_cloud",
]
