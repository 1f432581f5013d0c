"""Procedural face dataset with known clean ground truth.

Every sample is a random face of the morphable model with a UV skin texture,
optional lipstick and eye shadow painted into the canonical region masks, and
for some makeup samples a contamination (occluder rectangle or shadow ramp)
confined to one bilateral half, so the mirror texel of every contaminated
texel stays clean. The face is rendered at a random pose and its observed UV
texture is extracted back from that image, exactly as a real photo would be.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from dotenv import dotenv_values
from scipy import ndimage

from engine import container
from engine.debug import get_logger
from engine.errors import ContainerError, require
from engine.morphable_face import (
    FaceCoefficients,
    MorphableBasis,
    clamp_coefficients,
    evaluate_texture,
    export_texture,
    fit_face,
    image_projection,
)
from engine.regions import build_region_masks
from engine.uv_pipeline import (
    UVTexture,
    extract_uv_texture,
    rasterize,
    uv_footprint,
    vertex_colors_to_uv,
)

logger = get_logger(__name__)

MAKEUP = "makeup"
PLAIN = "non-makeup"
SKIN_REFERENCE = np.array([0.78, 0.60, 0.50])


@dataclass(frozen=True)
class SyntheticSample:
    """One synthetic face with its clean and contaminated UV textures."""
    coefficients: FaceCoefficients
    clean_texture: UVTexture
    contaminated_texture: UVTexture
    contamination_mask: np.ndarray  # R x R bool
    makeup_params: Dict[str, np.ndarray]  # lip, eye, skin colors in [0, 1]^3
    pose: Tuple[float, float]  # yaw, pitch in degrees
    domain: str
    image: np.ndarray  # H x W x 3 render of the contaminated face
    observed_texture: UVTexture  # texture extracted back from `image`

    @property
    def contaminated(self) -> bool:
        return bool(self.contamination_mask.any())


@dataclass(frozen=True)
class SynthSettings:
    uv_resolution: int = 128
    image_size: int = 256
    face_scale: float = 0.42
    z_eps: float = 1e-3
    coeff_clamp: float = 4.0
    contamination_rate: float = 0.3
    max_yaw: float = 40.0
    max_pitch: float = 10.0
    occluder_area: Tuple[float, float] = (0.05, 0.20)
    shadow_strength: Tuple[float, float] = (0.30, 0.70)

    @classmethod
    def from_config(cls, config) -> "SynthSettings":
        return cls(
            uv_resolution=config.render.uv_resolution,
            image_size=config.render.image_size,
            face_scale=config.render.face_scale,
            z_eps=config.render.z_eps,
            coeff_clamp=config.face.coeff_clamp,
            contamination_rate=config.synth.contamination_rate,
            max_yaw=config.synth.max_yaw,
            max_pitch=config.synth.max_pitch,
            occluder_area=tuple(config.synth.occluder_area),
            shadow_strength=tuple(config.synth.shadow_strength),
        )


# ---------------------------------------------------------------------------
# Painting

def _feather(mask: np.ndarray, sigma: float) -> np.ndarray:
    """Alpha that is 1 inside the mask and falls off smoothly outside it."""
    soft = ndimage.gaussian_filter(mask.astype(np.float64), sigma)
    return np.maximum(mask.astype(np.float64), np.clip(soft * 2.0, 0.0, 1.0))


def paint(base: np.ndarray, mask: np.ndarray, color: np.ndarray, opacity: float = 1.0,
          sigma: float = 1.5) -> np.ndarray:
    alpha = (opacity * _feather(mask, sigma))[..., None]
    return base * (1.0 - alpha) + alpha * np.asarray(color)[None, None, :]


def sample_makeup_params(rng: np.random.Generator, domain: str) -> Dict[str, np.ndarray]:
    skin = np.clip(SKIN_REFERENCE + rng.normal(0.0, 0.05, 3), 0.2, 0.95)
    if domain == MAKEUP:
        lip = np.array([rng.uniform(0.45, 0.95), rng.uniform(0.05, 0.35), rng.uniform(0.1, 0.45)])
        eye = rng.uniform(0.1, 0.7, 3)
    else:
        lip = np.clip(skin * np.array([0.95, 0.72, 0.72]), 0.0, 1.0)
        eye = skin.copy()
    return {"lip": lip, "eye": eye, "skin": skin}


def skin_texture(basis: MorphableBasis, coeffs: FaceCoefficients, skin: np.ndarray,
                 resolution: int) -> np.ndarray:
    colors = evaluate_texture(basis, coeffs) + (skin - SKIN_REFERENCE)[None, :]
    return export_texture(vertex_colors_to_uv(colors, basis.uv_coords, basis.triangles, resolution))


def compose_texture(basis: MorphableBasis, coeffs: FaceCoefficients, params: Dict[str, np.ndarray],
                    domain: str, resolution: int) -> np.ndarray:
    """Skin base plus lips and eye shadow painted into the UV regions."""
    regions = build_region_masks(resolution, uv_footprint(basis, resolution))
    texture = skin_texture(basis, coeffs, params["skin"], resolution)
    texture = paint(texture, regions["lips"], params["lip"])
    if domain == MAKEUP:
        texture = paint(texture, regions["eye"], params["eye"], opacity=0.85)
    return export_texture(texture)


# ---------------------------------------------------------------------------
# Contamination

def contaminate(texture: np.ndarray, footprint: np.ndarray, rng: np.random.Generator,
                settings: SynthSettings) -> Tuple[np.ndarray, np.ndarray]:
    """Occluder rectangle or shadow ramp inside one bilateral half."""
    r = texture.shape[0]
    half = r // 2
    left = rng.random() < 0.5
    cols = np.arange(r)
    side = (cols < half) if left else (cols >= half)
    side_mask = footprint & side[None, :]
    out = texture.copy()

    if rng.random() < 0.5:
        area = rng.uniform(*settings.occluder_area) * footprint.sum()
        aspect = rng.uniform(0.6, 1.6)
        height = int(np.clip(round(np.sqrt(area * aspect)), 2, r - 1))
        width = int(np.clip(round(area / max(height, 1)), 2, half - 1))
        top = int(rng.integers(r // 8, max(r // 8 + 1, r - r // 8 - height)))
        lo, hi = (0, half - width) if left else (half, r - width)
        start = int(rng.integers(lo, max(lo + 1, hi + 1)))
        mask = np.zeros((r, r), dtype=bool)
        mask[top:top + height, start:start + width] = True
        mask &= side_mask
        occluder = np.clip(SKIN_REFERENCE * rng.uniform(0.5, 1.1) + rng.normal(0, 0.05, 3), 0, 1)
        out[mask] = occluder
    else:
        strength = rng.uniform(*settings.shadow_strength)
        u = (cols + 0.5) / r
        ramp = np.clip((np.abs(u - 0.5) - 0.04) / 0.30, 0.0, 1.0)
        factor = np.broadcast_to(1.0 - strength * ramp[None, :], (r, r))
        mask = side_mask & (ramp[None, :] > 0)
        out[mask] = texture[mask] * factor[mask][:, None]
    return out, mask


# ---------------------------------------------------------------------------
# Generation

def sample_coefficients(basis: MorphableBasis, rng: np.random.Generator, settings: SynthSettings,
                        pose: Tuple[float, float]) -> FaceCoefficients:
    projection = image_projection(settings.image_size, settings.face_scale, *pose)
    coeffs = FaceCoefficients(
        alpha_id=rng.normal(0.0, 1.0, basis.k_id),
        alpha_exp=rng.normal(0.0, 0.5, basis.k_exp),
        alpha_tex=rng.normal(0.0, 1.0, basis.k_tex),
        projection=projection,
    )
    return clamp_coefficients(coeffs, settings.coeff_clamp)


def generate_sample(basis: MorphableBasis, domain: str, rng: np.random.Generator,
                    settings: SynthSettings, contaminate_it: bool = False,
                    pose: Optional[Tuple[float, float]] = None) -> SyntheticSample:
    """Draw one face, paint it, optionally contaminate, render and re-extract."""
    r = settings.uv_resolution
    if pose is None:
        pose = (float(rng.uniform(-settings.max_yaw, settings.max_yaw)),
                float(rng.uniform(-settings.max_pitch, settings.max_pitch)))
    coeffs = sample_coefficients(basis, rng, settings, pose)
    params = sample_makeup_params(rng, domain)
    clean = compose_texture(basis, coeffs, params, domain, r)
    footprint = uv_footprint(basis, r)
    if contaminate_it:
        dirty, mask = contaminate(clean, footprint, rng, settings)
    else:
        dirty, mask = clean.copy(), np.zeros((r, r), dtype=bool)

    fitted = fit_face(basis, coeffs)
    size = (settings.image_size, settings.image_size)
    image = rasterize(fitted, UVTexture.full(dirty), size).pixels
    observed = extract_uv_texture(image, fitted, r, settings.z_eps, fill_colors=basis.mean_texture)
    return SyntheticSample(
        coefficients=coeffs,
        clean_texture=UVTexture.full(clean),
        contaminated_texture=UVTexture.full(dirty),
        contamination_mask=mask,
        makeup_params=params,
        pose=pose,
        domain=domain,
        image=image,
        observed_texture=observed,
    )


def generate_dataset(n_makeup: int, n_plain: int, seed: int, basis: MorphableBasis,
                     settings: SynthSettings = SynthSettings()) -> List[SyntheticSample]:
    """Makeup samples first, then plain ones; each sample draws from its own seeded stream."""
    require(n_makeup + n_plain >= 1, "dataset needs at least one sample")
    require(basis.uv_coords is not None, "basis has no uv_coords")
    samples = []
    for index in range(n_makeup + n_plain):
        rng = np.random.default_rng([seed, index])
        domain = MAKEUP if index < n_makeup else PLAIN
        dirty = domain == MAKEUP and rng.random() < settings.contamination_rate
        samples.append(generate_sample(basis, domain, rng, settings, contaminate_it=dirty))
    logger.info("generated %d makeup (%d contaminated) and %d plain samples",
                n_makeup, sum(s.contaminated for s in samples), n_plain)
    return samples


# ---------------------------------------------------------------------------
# Files

def _prefix(index: int) -> str:
    return f"sample_{index:04d}"


def save_dataset(path: Union[str, Path], samples: List[SyntheticSample], seed: int,
                 n_makeup: int, n_plain: int):
    """Write all samples to one UVT1 container plus a `key = value` manifest."""
    path = Path(path)
    tensors = {}
    for i, s in enumerate(samples):
        p = _prefix(i)
        c = s.coefficients
        tensors.update({
            f"{p}/alpha_id": c.alpha_id,
            f"{p}/alpha_exp": c.alpha_exp,
            f"{p}/alpha_tex": c.alpha_tex,
            f"{p}/projection": c.projection,
            f"{p}/clean_texture": s.clean_texture.pixels,
            f"{p}/contaminated_texture": s.contaminated_texture.pixels,
            f"{p}/contamination_mask": s.contamination_mask,
            f"{p}/lip": s.makeup_params["lip"],
            f"{p}/eye": s.makeup_params["eye"],
            f"{p}/skin": s.makeup_params["skin"],
            f"{p}/pose": np.asarray(s.pose),
            f"{p}/domain": np.asarray([1 if s.domain == MAKEUP else 0], dtype=np.uint8),
            f"{p}/image": s.image,
            f"{p}/observed_texture": s.observed_texture.pixels,
            f"{p}/observed_validity": s.observed_texture.validity,
        })
    container.save(path, tensors)
    manifest = [
        f"samples = {len(samples)}",
        f"n_makeup = {n_makeup}",
        f"n_plain = {n_plain}",
        f"seed = {seed}",
        f"uv_resolution = {samples[0].clean_texture.resolution}",
        f"image_size = {samples[0].image.shape[0]}",
    ]
    manifest_path(path).write_text("\n".join(manifest) + "\n", encoding="utf-8")


def manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest")


def read_manifest(path: Union[str, Path]) -> Dict[str, str]:
    target = manifest_path(path)
    if not target.exists():
        raise ContainerError(f"dataset manifest not found: {target}")
    return {k: v for k, v in dotenv_values(target).items() if v is not None}


def load_dataset(path: Union[str, Path]) -> List[SyntheticSample]:
    tensors = container.load(path)
    count = int(read_manifest(path)["samples"])
    samples = []
    for i in range(count):
        p = _prefix(i)

        def get(name: str) -> np.ndarray:
            return container.pick(tensors, f"{p}/{name}")

        f64 = lambda name: get(name).astype(np.float64)  # noqa: E731
        samples.append(SyntheticSample(
            coefficients=FaceCoefficients(
                alpha_id=f64("alpha_id"), alpha_exp=f64("alpha_exp"),
                alpha_tex=f64("alpha_tex"), projection=f64("projection")),
            clean_texture=UVTexture.full(f64("clean_texture")),
            contaminated_texture=UVTexture.full(f64("contaminated_texture")),
            contamination_mask=get("contamination_mask").astype(bool),
            makeup_params={k: f64(k) for k in ("lip", "eye", "skin")},
            pose=tuple(float(v) for v in get("pose")),
            domain=MAKEUP if int(get("domain")[0]) == 1 else PLAIN,
            image=f64("image"),
            observed_texture=UVTexture(pixels=f64("observed_texture"),
                                       validity=get("observed_validity").astype(bool)),
        ))
    return samples
