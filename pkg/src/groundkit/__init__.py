"""Grounding rewards, crop resampling and tiled inference for GUI agents."""

__version__ = "0.1.0"

from .geometry import BBox, CropWindow, Point, Size  # noqa: E402
from .rewards import RewardConfig, grounding_reward, length_reward, think_reward  # noqa: E402

__all__ = [
    "BBox",
    "CropWindow",
    "Point",
    "RewardConfig",
    "Size",
    "__version__",
    "grounding_reward",
    "length_reward",
    "think_reward",
]
