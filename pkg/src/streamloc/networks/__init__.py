"""PR, AR, F2G and detector networks."""

from .c3d import C3D, C3DConfig, ar_network, frames_to_input, pr_network
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .detector import FEATURE_ORDER, Detector, DetectorConfig, concat_features
from .f2g import F2G, F2GConfig
from .labels import BEGINNING, DEFAULT_CLASSES, FINISHING, LabelSpace
from .module import Module

__all__ = [
    "BEGINNING",
    "C3D",
    "C3DConfig",
    "DEFAULT_CLASSES",
    "Detector",
    "DetectorConfig",
    "F2G",
    "F2GConfig",
    "FEATURE_ORDER",
    "FINISHING",
    "LabelSpace",
    "Module",
    "ar_network",
    "concat_features",
    "frames_to_input",
    "load_checkpoint",
    "pr_network",
    "read_checkpoint",
    "save_checkpoint",
]
