"""Feature-extraction adapter for the change-detection inference engine."""

from .backbones import BackboneUnavailable
from .extract import ExtractionJob, ImageLoadError, extract

__all__ = ["BackboneUnavailable", "ExtractionJob", "ImageLoadError", "extract"]

__version__ = "0.1.0"
