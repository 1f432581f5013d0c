"""Training objectives: histogram makeup loss, perceptual, cycle, adversarial, total."""

from dataclasses import dataclass, fields
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from config.settings import REGION_ITEMS
from engine.debug import get_logger
from engine.errors import DegenerateRenderError, EmptyRegionError, require

logger = get_logger(__name__)

Number = Union[float, torch.Tensor]


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.1
    lambda_a: float = 1.0
    lambda_m: float = 1.0
    lambda_c: float = 10.0
    lambda_p: float = 5e-3

    def __post_init__(self):
        for f in fields(self):
            require(getattr(self, f.name) >= 0, f"loss weight {f.name} must be nonnegative")

    @classmethod
    def from_config(cls, section) -> "LossWeights":
        return cls(**{f.name: getattr(section, f.name) for f in fields(cls)})

    def region_weights(self) -> Dict[str, float]:
        return dict(zip(REGION_ITEMS, (self.lambda1, self.lambda2, self.lambda3)))


@dataclass(frozen=True)
class HistogramSpec:
    bins: int = 256

    def __post_init__(self):
        require(self.bins >= 2, f"histogram needs at least 2 bins, got {self.bins}")


# ---------------------------------------------------------------------------
# Histogram matching

def _quantize(values: np.ndarray, levels: int) -> np.ndarray:
    return np.clip(np.rint(values * levels), 0, levels).astype(np.int64)


def histogram_match(source, reference, spec: HistogramSpec = HistogramSpec()):
    """Per-channel CDF matching of source pixels (n x C) onto reference pixels (m x C).

    Each source level maps to the first reference level whose CDF reaches the
    source level's mid-rank, so matching a region to itself is the identity and
    a constant region lands on the reference median. The result carries no
    gradient.
    """
    as_tensor = isinstance(source, torch.Tensor)
    src = source.detach().cpu().double().numpy() if as_tensor else np.asarray(source, dtype=np.float64)
    ref = (reference.detach().cpu().double().numpy() if isinstance(reference, torch.Tensor)
           else np.asarray(reference, dtype=np.float64))
    if src.size == 0 or ref.size == 0:
        raise EmptyRegionError("histogram matching needs nonempty source and reference regions")
    src = src.reshape(src.shape[0], -1)
    ref = ref.reshape(ref.shape[0], -1)
    require(src.shape[1] == ref.shape[1], "source and reference channel counts differ")

    levels = spec.bins - 1
    matched = np.empty_like(src)
    for ch in range(src.shape[1]):
        s_q = _quantize(src[:, ch], levels)
        r_q = _quantize(ref[:, ch], levels)
        s_hist = np.bincount(s_q, minlength=spec.bins)
        r_cdf = np.cumsum(np.bincount(r_q, minlength=spec.bins)) / len(r_q)
        s_mid = (np.cumsum(s_hist) - 0.5 * s_hist) / len(s_q)
        lookup = np.minimum(np.searchsorted(r_cdf, s_mid, side="left"), levels)
        matched[:, ch] = lookup[s_q] / levels

    if as_tensor:
        return torch.as_tensor(matched, dtype=source.dtype, device=source.device)
    return matched


def _region_pixels(image: torch.Tensor, mask) -> torch.Tensor:
    """(3, H, W) image and H x W mask -> (n, 3) masked pixels."""
    mask = torch.as_tensor(np.asarray(mask, dtype=bool), device=image.device)
    return image[:, mask].t()


def makeup_loss(i_t: torch.Tensor, i_ref: torch.Tensor, region_masks: Dict[str, np.ndarray],
                weights: LossWeights = LossWeights(), ref_masks: Optional[Dict[str, np.ndarray]] = None,
                spec: HistogramSpec = HistogramSpec()) -> torch.Tensor:
    """Sum over lips / eye / face of lambda * mean((HM(I_t, I_ref) - I_t)^2) on the region.

    `region_masks` belong to I_t's pose and `ref_masks` to I_ref's (same masks
    when omitted). Images are (3, H, W) or (1, 3, H, W).
    """
    i_t = i_t[0] if i_t.dim() == 4 else i_t
    i_ref = i_ref[0] if i_ref.dim() == 4 else i_ref
    ref_masks = region_masks if ref_masks is None else ref_masks
    total = i_t.new_zeros(())
    usable = 0
    for item, lam in weights.region_weights().items():
        x = _region_pixels(i_t, region_masks[item])
        y = _region_pixels(i_ref, ref_masks[item])
        try:
            target = histogram_match(x, y, spec)
        except EmptyRegionError:
            logger.debug("makeup loss: region '%s' is empty, skipped", item)
            continue
        usable += 1
        total = total + lam * F.mse_loss(x, target)
    if usable == 0:
        raise DegenerateRenderError("every makeup region is empty in the render")
    return total


# ---------------------------------------------------------------------------
# Perceptual

class RandomFeatureExtractor(nn.Module):
    """Frozen seeded conv stack tapping 512 channels at 1/8 resolution."""

    def __init__(self, seed: int = 1234):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.net = nn.Sequential(
                nn.Conv2d(3, 64, 3, 2, 1), nn.ReLU(),
                nn.Conv2d(64, 128, 3, 2, 1), nn.ReLU(),
                nn.Conv2d(128, 256, 3, 2, 1), nn.ReLU(),
                nn.Conv2d(256, 512, 3, 1, 1), nn.ReLU(),
            )
            for module in self.net:
                if isinstance(module, nn.Conv2d):
                    nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
                    nn.init.zeros_(module.bias)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x - 0.5)


def perceptual_loss(t_t: torch.Tensor, t_src: torch.Tensor, extractor: nn.Module) -> torch.Tensor:
    """Mean squared distance between extractor features of the two textures."""
    return F.mse_loss(extractor(t_t), extractor(t_src))


# ---------------------------------------------------------------------------
# Cycle

def cycle_loss(generator: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
               t_src: torch.Tensor, t_ref: torch.Tensor,
               fakes: Optional[Tuple[torch.Tensor, torch.Tensor]] = None) -> torch.Tensor:
    """|G(G(src, ref), src) - src|_1 + |G(G(ref, src), ref) - ref|_1, per-texel means.

    `fakes` may carry the already computed (G(src, ref), G(ref, src)).
    """
    fake_sr, fake_rs = fakes if fakes is not None else (generator(t_src, t_ref), generator(t_ref, t_src))
    rec_src = generator(fake_sr, t_src)
    rec_ref = generator(fake_rs, t_ref)
    return F.l1_loss(rec_src, t_src) + F.l1_loss(rec_ref, t_ref)


# ---------------------------------------------------------------------------
# Adversarial

@dataclass
class AdversarialBatch:
    """Real and generated textures / renders of one (source, reference) pair."""
    t_src: torch.Tensor
    t_ref: torch.Tensor
    fake_src_ref: torch.Tensor  # G(T_src, T_ref): source wearing reference makeup
    fake_ref_src: torch.Tensor  # G(T_ref, T_src)
    img_src: torch.Tensor
    img_ref: torch.Tensor
    render_src_ref: torch.Tensor  # R(S_src, G(T_src, T_ref))
    render_ref_src: torch.Tensor  # R(S_ref, G(T_ref, T_src))


def _log(scores: torch.Tensor, eps: float) -> torch.Tensor:
    return torch.log(scores.clamp(eps, 1.0 - eps)).mean()


def _log1m(scores: torch.Tensor, eps: float) -> torch.Tensor:
    return torch.log(1.0 - scores.clamp(eps, 1.0 - eps)).mean()


def discriminator_adversarial(d_tex_s, d_tex_r, d_img, batch: AdversarialBatch,
                              eps: float = 1e-6) -> Tuple[torch.Tensor, torch.Tensor]:
    """(L_D_tex, L_D_img) log losses; the caller detaches generated inputs."""
    d_tex = (-_log(d_tex_s(batch.t_src), eps) - _log(d_tex_r(batch.t_ref), eps)
             - _log1m(d_tex_s(batch.fake_ref_src), eps) - _log1m(d_tex_r(batch.fake_src_ref), eps))
    d_img = (-_log(d_img(batch.img_src), eps) - _log(d_img(batch.img_ref), eps)
             - _log1m(d_img(batch.render_ref_src), eps) - _log1m(d_img(batch.render_src_ref), eps))
    return d_tex, d_img


def generator_adversarial(d_tex_s, d_tex_r, d_img, batch: AdversarialBatch, eps: float = 1e-6,
                          form: str = "printed") -> Tuple[torch.Tensor, torch.Tensor]:
    """(L_G_tex, L_G_img): -log D(fake) as printed, or log(1 - D(fake)) for `minimax`."""
    require(form in ("printed", "minimax"), f"unknown generator loss form {form!r}")
    fakes_tex = ((d_tex_s, batch.fake_ref_src), (d_tex_r, batch.fake_src_ref))
    fakes_img = ((d_img, batch.render_ref_src), (d_img, batch.render_src_ref))
    if form == "printed":
        g_tex = sum(-_log(critic(x), eps) for critic, x in fakes_tex)
        g_img = sum(-_log(critic(x), eps) for critic, x in fakes_img)
    else:
        g_tex = sum(_log1m(critic(x), eps) for critic, x in fakes_tex)
        g_img = sum(_log1m(critic(x), eps) for critic, x in fakes_img)
    return g_tex, g_img


def adversarial_losses(d_tex_s, d_tex_r, d_img, batch: AdversarialBatch, eps: float = 1e-6,
                       form: str = "printed") -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """(L_D_tex, L_G_tex, L_D_img, L_G_img) with expectations as batch means."""
    l_d_tex, l_d_img = discriminator_adversarial(d_tex_s, d_tex_r, d_img, batch, eps)
    l_g_tex, l_g_img = generator_adversarial(d_tex_s, d_tex_r, d_img, batch, eps, form)
    return l_d_tex, l_g_tex, l_d_img, l_g_img


# ---------------------------------------------------------------------------
# Total

@dataclass
class LossComponents:
    g_tex: Number = 0.0
    g_img: Number = 0.0
    d_tex: Number = 0.0
    d_img: Number = 0.0
    makeup: Number = 0.0
    cycle: Number = 0.0
    perceptual: Number = 0.0

    def as_floats(self) -> Dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def total_loss(components: LossComponents, weights: LossWeights = LossWeights()) -> Tuple[Number, Number]:
    """L_G = la (G_tex + G_img) + lm makeup + lc cycle + lp per; L_D = la (D_tex + D_img)."""
    l_g = (weights.lambda_a * (components.g_tex + components.g_img)
           + weights.lambda_m * components.makeup
           + weights.lambda_c * components.cycle
           + weights.lambda_p * components.perceptual)
    l_d = weights.lambda_a * (components.d_tex + components.d_img)
    return l_g, l_d
