"""Small shared fixtures for the test scripts."""

import os
from functools import lru_cache

import numpy as np

from config.loader import Config
from engine.morphable_face import FaceCoefficients, MorphableBasis, build_basis, image_projection
from engine.uv_pipeline import attach_uv

SLOW = os.environ.get("UVMAKEUP_SLOW") == "1"

TINY = {
    "face.rows": 16,
    "face.cols": 15,
    "face.k_id": 4,
    "face.k_exp": 4,
    "face.k_tex": 4,
    "render.uv_resolution": 32,
    "render.image_size": 64,
    "network.feature_channels": 16,
    "network.attention_channels": 8,
    "network.residual_blocks": 1,
    "network.disc_channels": 8,
    "trainer.steps": 3,
    "trainer.checkpoint_every": 2,
    "trainer.prefetch": 0,
    "synth.n_makeup": 4,
    "synth.n_plain": 2,
}


def tiny_config(out_dir=None, **extra) -> Config:
    values = dict(TINY)
    if out_dir is not None:
        values["trainer.out_dir"] = str(out_dir)
    values.update({k.replace("__", "."): v for k, v in extra.items()})
    return Config().override(values)


@lru_cache(maxsize=None)
def tiny_basis() -> MorphableBasis:
    return attach_uv(build_basis(rows=16, cols=15, k_id=4, k_exp=4, k_tex=4, seed=7))


@lru_cache(maxsize=None)
def default_basis() -> MorphableBasis:
    return attach_uv(build_basis())


def frontal_coefficients(basis: MorphableBasis, image_size: int = 256, yaw: float = 0.0,
                         pitch: float = 0.0, face_scale: float = 0.42) -> FaceCoefficients:
    return FaceCoefficients.zeros(basis, image_projection(image_size, face_scale, yaw, pitch))


def random_coefficients(basis: MorphableBasis, seed: int, image_size: int = 256,
                        yaw: float = 0.0) -> FaceCoefficients:
    rng = np.random.default_rng(seed)
    return FaceCoefficients(
        alpha_id=rng.normal(0, 1, basis.k_id),
        alpha_exp=rng.normal(0, 0.5, basis.k_exp),
        alpha_tex=rng.normal(0, 1, basis.k_tex),
        projection=image_projection(image_size, 0.42, yaw, 0.0),
    )
