"""Obstacle detection from LiDAR shadows, for spotting object-hiding attacks."""

from .attribution import DetectionResult, PipelineConfig, run_pipeline
from .shadow_detect import RoiConfig

__all__ = ["DetectionResult", "PipelineConfig", "RoiConfig", "run_pipeline"]
__version__ = "0.1.0"
