"""PNG input and output for images, textures and masks."""

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from engine.errors import ContractError, require


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8, rounding half up."""
    return np.floor(np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(path: Union[str, Path], pixels: np.ndarray):
    """Save an H x W x 3 (or H x W) image in [0, 1] as PNG."""
    pixels = np.asarray(pixels)
    require(pixels.ndim in (2, 3), f"image must be H x W or H x W x C, got {pixels.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(pixels)).save(path, format="PNG")


def save_mask(path: Union[str, Path], mask: np.ndarray):
    """Grayscale PNG of a mask in [0, 1] (booleans map to 0 / 255)."""
    mask = np.asarray(mask, dtype=np.float64)
    require(mask.ndim == 2, f"mask must be H x W, got {mask.shape}")
    save_image(path, mask)


def load_image(path: Union[str, Path]) -> np.ndarray:
    """Load a PNG as H x W x 3 float64 in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as handle:
        array = np.asarray(handle.convert("RGB"), dtype=np.float64)
    return array / 255.0


def load_mask(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mask not found: {path}")
    with Image.open(path) as handle:
        if handle.mode not in ("L", "1", "I", "I;16"):
            raise ContractError(f"{path} is not a grayscale mask (mode {handle.mode})")
        return np.asarray(handle.convert("L"), dtype=np.float64) / 255.0
