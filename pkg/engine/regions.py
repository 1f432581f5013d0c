"""Static UV-space region masks (lips, eye, face) for the canonical layout."""

from typing import Dict, Optional

import numpy as np

from engine.errors import require

# Ellipses as (u_center, v_center, u_radius, v_radius) in UV units
LIPS = (0.5, 0.28, 0.10, 0.040)
EYE_CENTER = (0.65, 0.66)  # right eye; the left one is its mirror
EYE_INNER = (0.055, 0.026)  # the eye itself, excluded from every region
EYE_OUTER = (0.105, 0.065)  # outer contour of the eye-shadow annulus
FACE_OVAL = (0.5, 0.52, 0.40, 0.44)


def texel_centers(resolution: int):
    """(u, v) of every texel center; row 0 is the top of the face (v near 1)."""
    centers = (np.arange(resolution) + 0.5) / resolution
    uu, vv = np.meshgrid(centers, 1.0 - centers)
    return uu, vv


def _ellipse(uu, vv, cu, cv, ru, rv) -> np.ndarray:
    return ((uu - cu) / ru) ** 2 + ((vv - cv) / rv) ** 2 <= 1.0


def build_region_masks(resolution: int, footprint: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """Disjoint boolean masks keyed lips / eye / face, each mirror-symmetric."""
    require(resolution % 2 == 0, f"uv_resolution must be even, got {resolution}")
    uu, vv = texel_centers(resolution)
    # distance to the midline, so both halves see identical geometry
    du = np.abs(uu - 0.5)
    uu_sym = 0.5 + du

    lips = _ellipse(uu, vv, *LIPS)
    cu, cv = EYE_CENTER
    eye_outer = _ellipse(uu_sym, vv, cu, cv, *EYE_OUTER)
    eye_inner = _ellipse(uu_sym, vv, cu, cv, *EYE_INNER)
    eye = eye_outer & ~eye_inner
    face = _ellipse(uu, vv, *FACE_OVAL) & ~lips & ~eye_outer
    lips, eye, face = (m & m[:, ::-1] for m in (lips, eye, face))
    if footprint is not None:
        lips &= footprint
        eye &= footprint
        face &= footprint
    return {"lips": lips, "eye": eye, "face": face}


def full_mask(resolution: int) -> np.ndarray:
    return np.ones((resolution, resolution), dtype=bool)


def makeup_mask(masks: Dict[str, np.ndarray]) -> np.ndarray:
    """Union of the regions that carry makeup (lips and eye shadow)."""
    return masks["lips"] | masks["eye"]
