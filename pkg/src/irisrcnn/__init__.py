"""Double-circle iris segmentation with rubber-sheet RoI normalization."""

from .geometry import Circle, DoubleCircle
from .pipeline import IrisRCNN, SegmentationResult

__all__ = ["Circle", "DoubleCircle", "IrisRCNN", "SegmentationResult"]
__version__ = "0.1.0"
