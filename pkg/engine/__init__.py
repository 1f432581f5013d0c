"""UV Makeup Engine - 3D-aware, shadow- and occlusion-robust makeup transfer."""

__version__ = "0.1.0"
