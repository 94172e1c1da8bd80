"""Camouflaged object segmentation with edge-guided decoding and adversarial camouflage synthesis."""

__version__ = "0.1.0"

from .model import CamoDetector, ModelConfig
from .generator import CamoGenerator
from .config import TrainConfig

__all__ = ["CamoDetector", "CamoGenerator", "ModelConfig", "TrainConfig", "__version__"]
