"""herdplan: plan and simulate gate-herding of 2D particle groups.

A tabletop simulator plus planning stack: Fourier contour descriptors,
a cohesiveness metric, iterated-centroid action trees, MPC trajectory
refinement, and a symbolic grasp/herd/push/check/release task loop.

Submodules are imported explicitly (`from herdplan import sim`, ...);
nothing heavy loads at package import time.
"""

__version__ = "0.1.0"
