"""cuboidlift: lift 2D image detections into oriented 3D cuboids on LiDAR.

Batch auto-annotation toolkit: frustum point selection, prior-guided
multi-hypothesis cuboid search, occupancy scoring, track-based score
refinement and nuScenes-style evaluation.
"""

__version__ = "0.1.0"
