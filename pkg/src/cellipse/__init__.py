"""Detection and counting of touching ellipse-like cells in micrographs."""

__version__ = "0.1.0"

from .ellipse import Ellipse
from .pipeline import DetectionResult, PipelineConfig, run_pipeline
from .raster import PixelImage, decode_image, load_image, render_annotated

__all__ = [
    "__version__",
    "Ellipse",
    "DetectionResult",
    "PipelineConfig",
    "run_pipeline",
    "PixelImage",
    "decode_image",
    "load_image",
    "render_annotated",
]
