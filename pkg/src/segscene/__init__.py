"""Bottom-up scene understanding from per-pixel class scores.

A semantic segmentation is the only input the downstream stages need: scene
categories come from label histograms fed to additive-kernel SVMs, and object
detections are tight boxes around connected components scored by the mean
class confidence inside them.
"""

from .grid import IGNORE, BoundingBox, ClassPalette, LabelMap, ScoreMap

__version__ = "0.1.0"

__all__ = ["IGNORE", "BoundingBox", "ClassPalette", "LabelMap", "ScoreMap"]
