#!/usr/bin/env python3
"""Tests for the synthetic face dataset."""

import numpy as np
import pytest

from engine.morphable_face import FaceCoefficients
from engine.regions import build_region_masks
from engine.synthetic import (
    MAKEUP,
    PLAIN,
    SynthSettings,
    compose_texture,
    contaminate,
    generate_dataset,
    generate_sample,
    load_dataset,
    manifest_path,
    read_manifest,
    sample_makeup_params,
    save_dataset,
    skin_texture,
)
from engine.uv_pipeline import uv_footprint
from testing_utils import default_basis, tiny_basis

TINY = SynthSettings(uv_resolution=32, image_size=64)


def test_dataset_is_deterministic():
    a = generate_dataset(2, 1, seed=3, basis=tiny_basis(), settings=TINY)
    b = generate_dataset(2, 1, seed=3, basis=tiny_basis(), settings=TINY)
    for x, y in zip(a, b):
        assert np.array_equal(x.contaminated_texture.pixels, y.contaminated_texture.pixels)
        assert np.array_equal(x.image, y.image)
        assert x.pose == y.pose
    other = generate_dataset(2, 1, seed=4, basis=tiny_basis(), settings=TINY)
    assert not np.array_equal(a[0].clean_texture.pixels, other[0].clean_texture.pixels)


def test_domains_and_shapes():
    samples = generate_dataset(2, 2, seed=0, basis=tiny_basis(), settings=TINY)
    assert [s.domain for s in samples] == [MAKEUP, MAKEUP, PLAIN, PLAIN]
    for s in samples:
        assert s.clean_texture.pixels.shape == (32, 32, 3)
        assert s.image.shape == (64, 64, 3)
        assert s.observed_texture.validity.any()
        assert abs(s.pose[0]) <= TINY.max_yaw and abs(s.pose[1]) <= TINY.max_pitch
    assert not any(s.contaminated for s in samples[2:])


def test_lips_carry_the_lip_color():
    basis = default_basis()
    rng = np.random.default_rng(5)
    params = sample_makeup_params(rng, MAKEUP)
    coeffs = FaceCoefficients.zeros(basis)
    texture = compose_texture(basis, coeffs, params, MAKEUP, 128)
    lips = build_region_masks(128, uv_footprint(basis, 128))["lips"]
    assert lips.sum() > 20
    assert np.abs(texture[lips].mean(axis=0) - params["lip"]).max() <= 0.02


def test_plain_faces_have_no_eye_shadow():
    basis = default_basis()
    params = sample_makeup_params(np.random.default_rng(6), PLAIN)
    coeffs = FaceCoefficients.zeros(basis)
    texture = compose_texture(basis, coeffs, params, PLAIN, 128)
    eye = build_region_masks(128, uv_footprint(basis, 128))["eye"]
    assert np.array_equal(texture[eye], skin_texture(basis, coeffs, params["skin"], 128)[eye])
    assert np.allclose(params["eye"], params["skin"])


def test_contamination_stays_in_one_half():
    basis = tiny_basis()
    footprint = uv_footprint(basis, 32)
    clean = np.full((32, 32, 3), 0.5)
    hits = 0
    for seed in range(12):
        dirty, mask = contaminate(clean, footprint, np.random.default_rng(seed), TINY)
        assert not (mask & mask[:, ::-1]).any()
        assert not (mask & ~footprint).any()
        assert np.array_equal(dirty[~mask], clean[~mask])
        hits += int(mask.any())
    assert hits >= 4


def test_contaminated_sample_keeps_clean_texture_outside_mask():
    rng = np.random.default_rng(9)
    sample = generate_sample(tiny_basis(), MAKEUP, rng, TINY, contaminate_it=True)
    outside = ~sample.contamination_mask
    assert np.array_equal(sample.contaminated_texture.pixels[outside], sample.clean_texture.pixels[outside])


def test_full_contamination_rate():
    settings = SynthSettings(uv_resolution=32, image_size=64, contamination_rate=1.0)
    samples = generate_dataset(4, 1, seed=2, basis=tiny_basis(), settings=settings)
    assert sum(s.contaminated for s in samples[:4]) >= 2
    assert not samples[4].contaminated


def test_save_and_load(tmp_path):
    samples = generate_dataset(2, 1, seed=1, basis=tiny_basis(), settings=TINY)
    path = tmp_path / "train.uvt"
    save_dataset(path, samples, seed=1, n_makeup=2, n_plain=1)
    assert manifest_path(path) == tmp_path / "train.manifest"
    manifest = read_manifest(path)
    assert manifest["samples"] == "3"
    assert manifest["uv_resolution"] == "32"
    loaded = load_dataset(path)
    assert len(loaded) == 3
    for before, after in zip(samples, loaded):
        assert after.domain == before.domain
        assert np.array_equal(after.contamination_mask, before.contamination_mask)
        assert np.allclose(after.clean_texture.pixels, before.clean_texture.pixels, atol=1e-6)
        assert np.allclose(after.coefficients.projection, before.coefficients.projection, rtol=1e-6)
        assert np.array_equal(after.observed_texture.validity, before.observed_texture.validity)
        assert after.pose == pytest.approx(before.pose, rel=1e-6)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
