"""Tri-modal multivariate time-series forecaster.

Spectral, temporal, and prompt-embedding branches fused by horizon-aware
gating and adaptive multi-head cross-modal alignment, trained end-to-end on
a self-contained reverse-mode autodiff engine.
"""

from . import tensor
from .model import ModelConfig, T3TimeModel, load_checkpoint, save_checkpoint

__all__ = ["tensor", "ModelConfig", "T3TimeModel", "load_checkpoint", "save_checkpoint"]
__version__ = "0.1.0"
