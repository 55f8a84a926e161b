"""Amodal 3D box auto-annotation from 2D proposals and LiDAR point clusters.

The package fits oriented 3D bounding boxes to point-cloud clusters that
were picked out by 2D detections, using a constrained particle-swarm
search over a geometric cost. Around that core sit scene preparation
(ground removal, clustering), frustum-based 2D-to-3D association,
alignment filters, deduplication, and a small synthetic-scene harness
used for benchmarking and tests.
"""

__version__ = "0.1.0"
