"""Face motion retargeting from 2D landmarks with a reduced 3D morphable model."""

from .errors import CollisionError, InvalidInputError, PlacementError
from .morphable_model import FaceParams, FaceTensor, generate_synthetic_tensor, project_landmarks

__all__ = [
    "CollisionError",
    "FaceParams",
    "FaceTensor",
    "InvalidInputError",
    "PlacementError",
    "generate_synthetic_tensor",
    "project_landmarks",
]
