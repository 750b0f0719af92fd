"""pup3d: patch-based 3D point cloud upsampling.

A sparse point cloud is lifted to per-point features by dynamic edge
convolutions, expanded through a bi-directional multi-scale up/down
pyramid with learned weighted fusion, and regressed back to coordinates
at every intermediate scale. Training supervises all scales at once
against the full-resolution ground truth; inference runs on overlapping
patches merged by farthest point sampling.
"""

__version__ = "0.1.0"
