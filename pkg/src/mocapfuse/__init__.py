"""Multi-person motion fusion from sparse IMUs and pairwise UWB distances."""

from .body import PoseSequence, Skeleton, load_skeleton
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "PoseSequence", "Skeleton", "load_skeleton", "__version__"]
