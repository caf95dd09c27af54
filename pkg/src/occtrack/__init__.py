"""Model-free multi-object 6-DoF tracking from RGB-D frames and long-range
2D point tracks, with per-object TSDF reconstruction.

Subpackages: ``simulator`` renders ground-truth sequences; the top-level
modules hold geometry, registration, TSDF fusion, dense refinement, the
keyframe factor graph, the keypoint lifecycle, the tracking pipeline and the
evaluation metrics.
"""

__version__ = "0.1.0"
