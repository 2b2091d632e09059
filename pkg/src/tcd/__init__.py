"""Tree canopy mapping over arbitrarily large georeferenced orthomosaics:
tiled prediction with a pluggable per-tile predictor, seamless semantic
stitching, cross-tile instance merging, evaluation metrics and dataset
split/export tooling.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
