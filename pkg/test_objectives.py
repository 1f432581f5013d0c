#!/usr/bin/env python3
"""Tests for histogram matching and the training objectives."""

import math

import numpy as np
import pytest
import torch

from engine.errors import ContractError, DegenerateRenderError, EmptyRegionError
from engine.objectives import (
    AdversarialBatch,
    HistogramSpec,
    LossComponents,
    LossWeights,
    RandomFeatureExtractor,
    adversarial_losses,
    cycle_loss,
    generator_adversarial,
    histogram_match,
    makeup_loss,
    perceptual_loss,
    total_loss,
)


def constant_critic(value):
    return lambda x: torch.full((x.shape[0], 1, 4, 4), value)


def batch_of(value=0.5):
    t = torch.full((1, 3, 8, 8), value)
    return AdversarialBatch(t, t, t, t, t, t, t, t)


# ---------------------------------------------------------------------------
# Histogram matching

def test_match_to_itself_is_identity():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 256, size=(500, 3)) / 255.0
    assert np.array_equal(histogram_match(x, x), x)


def test_constant_source_lands_on_median():
    src = np.full((40, 1), 0.9)
    ref = np.array([[10], [20], [30], [40], [50]]) / 255.0
    matched = histogram_match(src, ref)
    assert np.all(matched == 30 / 255.0)


def test_matched_distribution_follows_reference():
    rng = np.random.default_rng(1)
    src = rng.random((20000, 3))
    ref = rng.beta(2.0, 5.0, size=(20000, 3))
    matched = histogram_match(src, ref)
    for ch in range(3):
        gap = np.abs(np.sort(matched[:, ch]) - np.sort(ref[:, ch])).mean()
        assert gap <= 2 / 256


def test_match_is_idempotent_within_a_level():
    rng = np.random.default_rng(3)
    src = rng.random((200000, 3))
    ref = rng.random((200000, 3)) ** 1.2
    once = histogram_match(src, ref)
    twice = histogram_match(once, ref)
    assert np.abs(twice - once).max() <= 1 / 255 + 1e-12


def test_match_is_monotone():
    rng = np.random.default_rng(2)
    src = rng.random((1000, 1))
    matched = histogram_match(src, rng.random((800, 1)) ** 2)
    order = np.argsort(src[:, 0])
    assert np.all(np.diff(matched[order, 0]) >= 0)


def test_match_keeps_tensor_type_without_gradient():
    src = torch.rand(100, 3, requires_grad=True)
    matched = histogram_match(src, torch.rand(50, 3))
    assert isinstance(matched, torch.Tensor)
    assert matched.dtype == src.dtype
    assert not matched.requires_grad


def test_match_errors():
    with pytest.raises(EmptyRegionError):
        histogram_match(np.zeros((0, 3)), np.zeros((5, 3)))
    with pytest.raises(ContractError):
        histogram_match(np.zeros((5, 3)), np.zeros((5, 2)))
    with pytest.raises(ContractError):
        HistogramSpec(bins=1)


# ---------------------------------------------------------------------------
# Makeup loss

def region_masks(size=16):
    lips = np.zeros((size, size), dtype=bool)
    eye = np.zeros((size, size), dtype=bool)
    face = np.zeros((size, size), dtype=bool)
    lips[10:13, 5:11] = True
    eye[3:5, 2:14] = True
    face[6:9, 3:13] = True
    return {"lips": lips, "eye": eye, "face": face}


def test_makeup_loss_of_identical_images_is_tiny():
    image = torch.rand(3, 16, 16)
    loss = makeup_loss(image, image, region_masks())
    assert 0.0 <= loss.item() <= 1e-5


def test_makeup_loss_pulls_toward_reference():
    masks = region_masks()
    source = torch.full((1, 3, 16, 16), 0.2, requires_grad=True)
    reference = torch.full((1, 3, 16, 16), 0.8)
    loss = makeup_loss(source, reference, masks, LossWeights(lambda1=1.0, lambda2=0.0, lambda3=0.0))
    assert loss.item() == pytest.approx((0.8 - 0.2) ** 2, abs=1e-3)
    loss.backward()
    lips = torch.from_numpy(masks["lips"])
    assert bool((source.grad[0][:, lips] < 0).all())
    assert torch.count_nonzero(source.grad[0][:, ~lips]) == 0


def test_makeup_loss_skips_empty_region():
    masks = region_masks()
    image, ref = torch.rand(3, 16, 16), torch.rand(3, 16, 16)
    without_lips = dict(masks, lips=np.zeros_like(masks["lips"]))
    weights = LossWeights(lambda1=0.0)
    assert makeup_loss(image, ref, without_lips).item() == pytest.approx(
        makeup_loss(image, ref, masks, weights).item(), rel=1e-6)


def test_makeup_loss_all_regions_empty_raises():
    empty = {k: np.zeros((16, 16), dtype=bool) for k in ("lips", "eye", "face")}
    with pytest.raises(DegenerateRenderError):
        makeup_loss(torch.rand(3, 16, 16), torch.rand(3, 16, 16), empty)


def test_makeup_loss_hand_computed_two_regions():
    lips = np.zeros((4, 4), dtype=bool)
    eye = np.zeros((4, 4), dtype=bool)
    lips[:2, :2] = True
    eye[2:, 2:] = True
    masks = {"lips": lips, "eye": eye, "face": np.zeros((4, 4), dtype=bool)}
    source = torch.zeros(3, 4, 4, dtype=torch.float64)
    reference = torch.zeros(3, 4, 4, dtype=torch.float64)
    source[:, lips] = torch.tensor([10.0, 20.0, 30.0, 40.0], dtype=torch.float64) / 255
    reference[:, lips] = torch.tensor([80.0, 60.0, 50.0, 70.0], dtype=torch.float64) / 255
    source[:, eye] = 100 / 255
    reference[:, eye] = torch.tensor([0.0, 200.0, 200.0, 255.0], dtype=torch.float64) / 255
    # lips rank-match 10..40 onto 50..80, the constant eye lands on the median 200
    expected = (40 / 255) ** 2 + (100 / 255) ** 2
    assert makeup_loss(source, reference, masks).item() == pytest.approx(expected, abs=1e-6)


def test_makeup_loss_gradient_matches_finite_differences():
    masks = region_masks()
    rng = np.random.default_rng(4)
    # pixels on exact levels: a 1e-3 nudge keeps every level, so the matched target stays fixed
    source = torch.from_numpy(rng.integers(0, 256, size=(3, 16, 16)) / 255.0)
    reference = torch.from_numpy(rng.integers(0, 256, size=(3, 16, 16)) / 255.0)
    x = source.clone().requires_grad_(True)
    makeup_loss(x, reference, masks).backward()
    covered = np.argwhere(masks["lips"] | masks["eye"] | masks["face"])
    h = 1e-3
    for row in rng.choice(len(covered), size=10, replace=False):
        i, j = covered[row]
        idx = (int(rng.integers(3)), int(i), int(j))
        plus, minus = source.clone(), source.clone()
        plus[idx] += h
        minus[idx] -= h
        numeric = (makeup_loss(plus, reference, masks).item()
                   - makeup_loss(minus, reference, masks).item()) / (2 * h)
        analytic = x.grad[idx].item()
        assert abs(numeric - analytic) <= 2e-3 * abs(analytic) + 1e-9


def test_makeup_loss_uses_reference_masks():
    masks = region_masks()
    ref_masks = {k: np.roll(m, 4, axis=1) for k, m in masks.items()}
    reference = torch.zeros(3, 16, 16)
    reference[:, torch.from_numpy(ref_masks["lips"])] = 0.6
    source = torch.full((3, 16, 16), 0.6)
    weights = LossWeights(lambda1=1.0, lambda2=0.0, lambda3=0.0)
    assert makeup_loss(source, reference, masks, weights, ref_masks).item() <= 1e-5
    assert makeup_loss(source, reference, masks, weights).item() > 0.01


# ---------------------------------------------------------------------------
# Perceptual and cycle

def test_perceptual_loss():
    extractor = RandomFeatureExtractor(seed=3)
    x = torch.rand(1, 3, 32, 32)
    assert perceptual_loss(x, x, extractor).item() == 0.0
    assert perceptual_loss(x, torch.rand(1, 3, 32, 32), extractor).item() > 0.0
    assert extractor(x).shape == (1, 512, 4, 4)
    twin = RandomFeatureExtractor(seed=3)
    assert torch.equal(twin(x), extractor(x))
    assert not any(p.requires_grad for p in extractor.parameters())


def test_perceptual_loss_grows_along_a_path():
    extractor = RandomFeatureExtractor()
    gen = torch.Generator().manual_seed(11)
    start, other = torch.rand(1, 3, 32, 32, generator=gen), torch.rand(1, 3, 32, 32, generator=gen)
    losses = [perceptual_loss(start + k / 5 * (other - start), start, extractor).item() for k in range(6)]
    assert losses[0] == 0.0
    assert all(b > a for a, b in zip(losses, losses[1:]))
    assert perceptual_loss(other, start, extractor).item() == pytest.approx(
        perceptual_loss(start, other, extractor).item(), rel=1e-6)


def test_cycle_loss_constant_generator():
    src, ref = torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 8)
    c = torch.full((1, 3, 8, 8), 0.3)
    expected = (c - src).abs().mean() + (c - ref).abs().mean()
    assert cycle_loss(lambda a, b: c, src, ref).item() == pytest.approx(expected.item(), abs=1e-7)


def test_cycle_loss_identity_generator():
    src, ref = torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 8)
    assert cycle_loss(lambda a, b: a, src, ref).item() == 0.0


def test_cycle_loss_swap_generator():
    src, ref = torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 8)
    # G(a, b) = b: G(G(src, ref), src) = src
    assert cycle_loss(lambda a, b: b, src, ref).item() == 0.0
    shifted = cycle_loss(lambda a, b: a + 0.1, src, ref).item()
    assert shifted == pytest.approx(0.4, abs=1e-5)


# ---------------------------------------------------------------------------
# Adversarial and total

def test_adversarial_at_half():
    half = constant_critic(0.5)
    d_tex, g_tex, d_img, g_img = adversarial_losses(half, half, half, batch_of())
    assert d_tex.item() == pytest.approx(4 * math.log(2), rel=1e-6)
    assert d_img.item() == pytest.approx(4 * math.log(2), rel=1e-6)
    assert g_tex.item() == pytest.approx(2 * math.log(2), rel=1e-6)
    assert g_img.item() == pytest.approx(2 * math.log(2), rel=1e-6)


def test_adversarial_losses_match_direct_log_terms():
    gen = torch.Generator().manual_seed(5)
    batch = AdversarialBatch(*(0.05 + 0.9 * torch.rand(2, 1, 3, 3, generator=gen, dtype=torch.float64)
                               for _ in range(8)))
    d_s, d_r, d_i = (lambda x: x), (lambda x: x ** 2), (lambda x: x.sqrt())
    d_tex, g_tex, d_img, g_img = adversarial_losses(d_s, d_r, d_i, batch)

    def mean_log(scores):
        return np.log(scores.numpy()).mean()

    def mean_log1m(scores):
        return np.log(1.0 - scores.numpy()).mean()

    expected_d_tex = -(mean_log(d_s(batch.t_src)) + mean_log(d_r(batch.t_ref))
                       + mean_log1m(d_s(batch.fake_ref_src)) + mean_log1m(d_r(batch.fake_src_ref)))
    expected_d_img = -(mean_log(d_i(batch.img_src)) + mean_log(d_i(batch.img_ref))
                       + mean_log1m(d_i(batch.render_ref_src)) + mean_log1m(d_i(batch.render_src_ref)))
    expected_g_tex = -(mean_log(d_s(batch.fake_ref_src)) + mean_log(d_r(batch.fake_src_ref)))
    expected_g_img = -(mean_log(d_i(batch.render_ref_src)) + mean_log(d_i(batch.render_src_ref)))
    assert d_tex.item() == pytest.approx(expected_d_tex, abs=1e-7)
    assert d_img.item() == pytest.approx(expected_d_img, abs=1e-7)
    assert g_tex.item() == pytest.approx(expected_g_tex, abs=1e-7)
    assert g_img.item() == pytest.approx(expected_g_img, abs=1e-7)


def test_minimax_generator_form():
    critic = constant_critic(0.75)
    g_tex, g_img = generator_adversarial(critic, critic, critic, batch_of(), form="minimax")
    assert g_tex.item() == pytest.approx(2 * math.log(0.25), rel=1e-6)
    printed, _ = generator_adversarial(critic, critic, critic, batch_of())
    assert printed.item() == pytest.approx(-2 * math.log(0.75), rel=1e-6)
    with pytest.raises(ContractError):
        generator_adversarial(critic, critic, critic, batch_of(), form="hinge")


def test_saturated_critic_stays_finite():
    zero, one = constant_critic(0.0), constant_critic(1.0)
    d_tex, g_tex, d_img, g_img = adversarial_losses(zero, zero, one, batch_of())
    for value in (d_tex, g_tex, d_img, g_img):
        assert math.isfinite(value.item())


def test_total_loss_of_unit_components():
    components = LossComponents(*(1.0,) * 7)
    l_g, l_d = total_loss(components)
    assert l_g == pytest.approx(13.005)
    assert l_d == pytest.approx(2.0)


def test_total_loss_weights():
    components = LossComponents(g_tex=1.0, g_img=2.0, d_tex=3.0, d_img=4.0, makeup=5.0, cycle=6.0,
                                perceptual=7.0)
    weights = LossWeights(lambda_a=2.0, lambda_m=0.5, lambda_c=1.0, lambda_p=0.0)
    l_g, l_d = total_loss(components, weights)
    assert l_g == pytest.approx(2 * 3 + 2.5 + 6)
    assert l_d == pytest.approx(14.0)
    with pytest.raises(ContractError):
        LossWeights(lambda_c=-1.0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
