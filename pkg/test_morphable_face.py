#!/usr/bin/env python3
"""Tests for the morphable face model: evaluation, fitting, camera, files."""

from dataclasses import replace

import numpy as np
import pytest

from engine.errors import ContractError, SingularSystemError
from engine.morphable_face import (
    FaceCoefficients,
    clamp_coefficients,
    default_landmarks,
    evaluate_shape,
    evaluate_texture,
    fit_coefficients,
    fit_landmark_file,
    is_weak_perspective,
    load_basis,
    load_coefficients,
    load_landmarks,
    make_projection,
    project,
    rotation_matrix,
    save_basis,
    save_coefficients,
    save_landmarks,
    validate_basis,
)
from testing_utils import default_basis, random_coefficients


def test_basis_structure():
    basis = default_basis()
    validate_basis(basis)
    m = basis.mirror_map
    assert np.array_equal(m[m], np.arange(basis.n_vertices))
    assert 800 <= basis.n_vertices <= 1200
    assert basis.k_id == basis.k_exp == basis.k_tex == 8
    reflected = basis.mean_shape[m] * np.array([-1.0, 1.0, 1.0])
    assert np.abs(reflected - basis.mean_shape).max() <= 1e-6


def test_mesh_is_connected():
    basis = default_basis()
    parent = np.arange(basis.n_vertices)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b, c in basis.triangles:
        for u, v in ((a, b), (b, c)):
            parent[find(u)] = find(v)
    roots = {find(i) for i in range(basis.n_vertices)}
    assert len(roots) == 1


def test_disconnected_mesh_is_rejected():
    basis = default_basis()
    # later rows lose every triangle and become isolated vertices
    cut = replace(basis, triangles=basis.triangles[:len(basis.triangles) // 2])
    with pytest.raises(ContractError, match="connected components"):
        validate_basis(cut)


def test_zero_coefficients_give_mean():
    basis = default_basis()
    zero = FaceCoefficients.zeros(basis)
    assert np.array_equal(evaluate_shape(basis, zero), basis.mean_shape)
    assert np.array_equal(evaluate_texture(basis, zero), basis.mean_texture)


def test_unit_identity_coefficient_adds_column():
    basis = default_basis()
    coeffs = FaceCoefficients.zeros(basis)
    alpha = np.zeros(basis.k_id)
    alpha[0] = 1.0
    shape = evaluate_shape(basis, FaceCoefficients(alpha, coeffs.alpha_exp, coeffs.alpha_tex))
    assert np.allclose(shape, basis.mean_shape + basis.id_basis[:, :, 0], atol=1e-12)


def test_shape_superposition():
    basis = default_basis()
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=basis.k_id), rng.normal(size=basis.k_exp)
    zeros_id, zeros_exp, zeros_tex = np.zeros(basis.k_id), np.zeros(basis.k_exp), np.zeros(basis.k_tex)
    both = evaluate_shape(basis, FaceCoefficients(a, b, zeros_tex))
    only_id = evaluate_shape(basis, FaceCoefficients(a, zeros_exp, zeros_tex))
    only_exp = evaluate_shape(basis, FaceCoefficients(zeros_id, b, zeros_tex))
    assert np.abs(both - (only_id + only_exp - basis.mean_shape)).max() <= 1e-7


def test_texture_linearity_and_matmul():
    basis = default_basis()
    rng = np.random.default_rng(4)
    alpha = rng.normal(size=basis.k_tex)
    zeros = FaceCoefficients.zeros(basis)
    single = evaluate_texture(basis, FaceCoefficients(zeros.alpha_id, zeros.alpha_exp, alpha))
    double = evaluate_texture(basis, FaceCoefficients(zeros.alpha_id, zeros.alpha_exp, 2 * alpha))
    assert np.allclose(double - basis.mean_texture, 2 * (single - basis.mean_texture), atol=1e-12)
    dense = basis.mean_texture.ravel() + basis.tex_basis.reshape(-1, basis.k_tex) @ alpha
    assert np.abs(single.ravel() - dense).max() <= 1e-7


def test_dimension_mismatch_names_axis():
    basis = default_basis()
    bad = FaceCoefficients(np.zeros(basis.k_id + 1), np.zeros(basis.k_exp), np.zeros(basis.k_tex))
    with pytest.raises(ContractError, match="alpha_id"):
        evaluate_shape(basis, bad)
    bad_tex = FaceCoefficients(np.zeros(basis.k_id), np.zeros(basis.k_exp), np.zeros(3))
    with pytest.raises(ContractError, match="alpha_tex"):
        evaluate_texture(basis, bad_tex)


def test_symmetric_identity_keeps_shape_symmetric():
    basis = default_basis()
    rng = np.random.default_rng(5)
    coeffs = FaceCoefficients(rng.normal(size=basis.k_id), np.zeros(basis.k_exp), np.zeros(basis.k_tex))
    shape = evaluate_shape(basis, coeffs)
    reflected = shape[basis.mirror_map] * np.array([-1.0, 1.0, 1.0])
    assert np.abs(reflected - shape).max() <= 1e-5


def test_fit_recovers_coefficients():
    basis = default_basis()
    rng = np.random.default_rng(6)
    truth = FaceCoefficients(rng.normal(size=basis.k_id), rng.normal(size=basis.k_exp),
                             np.zeros(basis.k_tex))
    idx = default_landmarks(basis)
    fitted = fit_coefficients(evaluate_shape(basis, truth)[idx], idx, basis)
    assert np.abs(fitted.alpha_id - truth.alpha_id).max() <= 1e-5
    assert np.abs(fitted.alpha_exp - truth.alpha_exp).max() <= 1e-5
    assert fitted.residual <= 1e-6


def test_fit_mean_landmarks_gives_zero():
    basis = default_basis()
    idx = default_landmarks(basis)
    fitted = fit_coefficients(basis.mean_shape[idx], idx, basis)
    assert np.abs(fitted.alpha_id).max() <= 1e-8
    assert np.abs(fitted.alpha_exp).max() <= 1e-8


def test_ridge_shrinks_monotonically():
    basis = default_basis()
    coeffs = random_coefficients(basis, seed=7)
    idx = default_landmarks(basis)
    landmarks = evaluate_shape(basis, coeffs)[idx]
    norms = []
    for reg in (0.0, 1e-3, 1e-1, 10.0, 1e3, 1e6):
        fitted = fit_coefficients(landmarks, idx, basis, regularizer=reg)
        norms.append(np.linalg.norm(np.concatenate([fitted.alpha_id, fitted.alpha_exp])))
    assert all(b <= a + 1e-9 for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-2 * norms[0]


def test_fit_clamps_coefficients():
    basis = default_basis()
    truth = FaceCoefficients(np.linspace(-3.0, 3.0, basis.k_id), np.linspace(2.5, -2.5, basis.k_exp),
                             np.zeros(basis.k_tex))
    idx = default_landmarks(basis)
    landmarks = evaluate_shape(basis, truth)[idx]
    free = fit_coefficients(landmarks, idx, basis)
    assert np.abs(free.alpha_id).max() > 2.0
    fitted = fit_coefficients(landmarks, idx, basis, clamp=1.5)
    assert np.abs(fitted.alpha_id).max() <= 1.5
    assert np.abs(fitted.alpha_exp).max() <= 1.5
    assert np.allclose(fitted.alpha_id, np.clip(free.alpha_id, -1.5, 1.5))


def test_fit_rank_deficient_raises():
    basis = default_basis()
    # one vertex repeated cannot pin down 16 unknowns
    idx = np.full(20, 5)
    with pytest.raises(SingularSystemError):
        fit_coefficients(basis.mean_shape[idx], idx, basis)


def test_projection_identity_and_translation():
    basis = default_basis()
    vertices = basis.mean_shape
    points, _ = project(vertices, np.eye(3, 4))
    assert np.array_equal(points, vertices[:, :2])
    shifted = np.eye(3, 4)
    shifted[:2, 3] = (3.0, -2.0)
    moved, _ = project(vertices, shifted)
    assert np.allclose(moved - points, [3.0, -2.0], atol=1e-12)


def test_rotating_vertices_equals_rotating_camera():
    basis = default_basis()
    rot = rotation_matrix(yaw_deg=25.0)
    base = make_projection(scale=2.0, tx=1.0, ty=4.0)
    points_a, _ = project(basis.mean_shape @ rot.T, base)
    points_b, _ = project(basis.mean_shape, make_projection(yaw_deg=25.0, scale=2.0, tx=1.0, ty=4.0))
    assert np.abs(points_a - points_b).max() <= 1e-6


def test_weak_perspective_check():
    assert is_weak_perspective(make_projection(30, 10, 3.0, 5, 5))
    bad = make_projection(scale=2.0)
    bad[0, :3] *= 1.5
    assert not is_weak_perspective(bad)


def test_clamp_coefficients():
    basis = default_basis()
    coeffs = FaceCoefficients(np.full(basis.k_id, 9.0), np.full(basis.k_exp, -9.0), np.zeros(basis.k_tex))
    clamped = clamp_coefficients(coeffs, 4.0)
    assert clamped.alpha_id.max() == 4.0
    assert clamped.alpha_exp.min() == -4.0


def test_basis_file_keeps_tensors(tmp_path):
    basis = default_basis()
    path = tmp_path / "basis.uvt"
    save_basis(path, basis)
    loaded = load_basis(path)
    assert loaded.grid_shape == basis.grid_shape
    assert np.array_equal(loaded.triangles, basis.triangles)
    assert np.allclose(loaded.mean_shape, basis.mean_shape, atol=1e-6)
    assert np.allclose(loaded.uv_coords, basis.uv_coords, atol=1e-6)


def test_coefficient_file(tmp_path):
    basis = default_basis()
    coeffs = random_coefficients(basis, seed=11)
    path = tmp_path / "face.coef"
    save_coefficients(path, coeffs)
    loaded = load_coefficients(path)
    assert np.array_equal(loaded.alpha_id, coeffs.alpha_id)
    assert np.array_equal(loaded.projection, coeffs.projection)


def test_coefficient_file_missing_line(tmp_path):
    path = tmp_path / "broken.coef"
    path.write_text("alpha_id = 1 2 3\n", encoding="utf-8")
    with pytest.raises(ContractError, match="alpha_exp"):
        load_coefficients(path)


def test_coefficient_file_clamped_on_load(tmp_path):
    basis = default_basis()
    coeffs = FaceCoefficients(np.full(basis.k_id, 6.0), np.full(basis.k_exp, -6.0), np.full(basis.k_tex, 0.5))
    path = tmp_path / "wild.coef"
    save_coefficients(path, coeffs)
    assert load_coefficients(path).alpha_id.max() == 6.0
    loaded = load_coefficients(path, clamp=3.0)
    assert loaded.alpha_id.max() == 3.0
    assert loaded.alpha_exp.min() == -3.0
    assert np.array_equal(loaded.alpha_tex, coeffs.alpha_tex)


def test_landmark_file_fits_shape_and_keeps_camera(tmp_path):
    basis = default_basis()
    coeffs = random_coefficients(basis, seed=12, yaw=15.0)
    idx = default_landmarks(basis)
    path = tmp_path / "face.landmarks"
    save_landmarks(path, evaluate_shape(basis, coeffs)[idx], idx, coeffs.projection)
    landmarks, indices, projection = load_landmarks(path)
    assert np.array_equal(indices, idx)
    assert landmarks.shape == (len(idx), 3)
    fitted = fit_landmark_file(path, basis)
    assert np.abs(fitted.alpha_id - coeffs.alpha_id).max() <= 1e-5
    assert np.abs(fitted.alpha_exp - coeffs.alpha_exp).max() <= 1e-5
    assert np.array_equal(fitted.alpha_tex, np.zeros(basis.k_tex))
    assert np.array_equal(fitted.projection, coeffs.projection)
    shrunk = fit_landmark_file(path, basis, regularizer=1e3)
    assert np.linalg.norm(shrunk.alpha_id) < np.linalg.norm(fitted.alpha_id)


def test_landmark_file_count_mismatch(tmp_path):
    path = tmp_path / "short.landmarks"
    path.write_text("indices = 1 2 3\nlandmarks = 0.0 0.0 0.0\nprojection = " + " ".join(["0.0"] * 12) + "\n",
                    encoding="utf-8")
    with pytest.raises(ContractError, match="3 indices"):
        load_landmarks(path)
    with pytest.raises(FileNotFoundError):
        load_landmarks(tmp_path / "missing.landmarks")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
