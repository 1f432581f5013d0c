#!/usr/bin/env python3
"""Tests for PNG image and mask files."""

import numpy as np
import pytest

from engine.errors import ContractError
from engine.imaging import load_image, load_mask, save_image, save_mask, to_uint8


def test_rounding_is_half_up():
    values = np.array([0.0, 0.5 / 255, 1.0, 1.5, -0.2])
    assert to_uint8(values).tolist() == [0, 1, 255, 255, 0]


def test_image_file_quantizes_to_255_levels(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.random((6, 5, 3))
    path = tmp_path / "nested" / "face.png"
    save_image(path, pixels)
    loaded = load_image(path)
    assert loaded.shape == (6, 5, 3)
    assert np.abs(loaded - pixels).max() <= 0.5 / 255 + 1e-12


def test_mask_file(tmp_path):
    mask = np.zeros((4, 4), dtype=bool)
    mask[1:3, 2] = True
    save_mask(tmp_path / "m.png", mask)
    assert np.array_equal(load_mask(tmp_path / "m.png") > 0.5, mask)
    with pytest.raises(ContractError):
        save_mask(tmp_path / "bad.png", np.zeros((2, 2, 3)))


def test_color_png_is_not_a_mask(tmp_path):
    save_image(tmp_path / "rgb.png", np.zeros((3, 3, 3)))
    with pytest.raises(ContractError):
        load_mask(tmp_path / "rgb.png")
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "absent.png")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
