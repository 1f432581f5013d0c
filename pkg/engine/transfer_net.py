"""UV texture generator (encoders, flip attention, makeup transfer, decoder) and discriminators.

Tensors follow torch layout: textures are (B, 3, R, R) in [0, 1], feature maps
(B, C, R/4, R/4). The generator never normalizes across space, so makeup
restricted to one UV region cannot leak into distant regions.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from engine.errors import require
from engine.uv_pipeline import UVTexture, flip_uv

INIT_STD = 0.02


@dataclass(frozen=True, eq=False)
class TransferConfig:
    """Inference controls plus the two ablation switches."""
    w: float = 1.0  # shade weight
    region_mask: Optional[np.ndarray] = None  # UV mask for partial transfer
    interp_w: Optional[float] = None  # weight of reference 1 when interpolating
    mix_mask: Optional[np.ndarray] = None  # region taken from reference 1, rest from reference 2
    fam_off: bool = False
    mtm_off: bool = False

    def __post_init__(self):
        require(0.0 <= self.w <= 1.0, f"shade weight w must be in [0, 1], got {self.w}")
        if self.interp_w is not None:
            require(0.0 <= self.interp_w <= 1.0,
                    f"interpolation weight must be in [0, 1], got {self.interp_w}")


@dataclass
class GeneratorOutput:
    texture: torch.Tensor  # (B, 3, R, R)
    mask: torch.Tensor  # FAM mask upsampled to (B, 1, R, R)
    attention: Optional[torch.Tensor]  # (B, N, N), None when MTM is bypassed
    makeup: torch.Tensor  # F_m, (B, C, h, w)


def init_weights(module: nn.Module):
    """Normal(0, 0.02) weights and zero biases for every conv."""
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, INIT_STD)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class TextureEncoder(nn.Module):
    """Two stride-2 convolutions with ReLU: R x R texture -> R/4 x R/4 features."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.conv1 = nn.Conv2d(3, channels // 2, 4, 2, 1)
        self.conv2 = nn.Conv2d(channels // 2, channels, 4, 2, 1)

    def forward(self, texture: torch.Tensor) -> torch.Tensor:
        return F.relu(self.conv2(F.relu(self.conv1(texture))))


class FlipAttention(nn.Module):
    """Predicts a confidence mask M and blends features with their mirror image."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels // 2, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels // 2, 1, 3, 1, 1)

    def attention_mask(self, features: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv2(F.relu(self.conv1(features))))

    def forward(self, features: torch.Tensor,
                mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        if mask is None:
            mask = self.attention_mask(features)
        repaired = mask * features + (1.0 - mask) * flip_uv(features)
        return repaired, mask


class MakeupTransfer(nn.Module):
    """Spatial attention from source features onto the repaired reference features."""

    def __init__(self, channels: int = 64, attention_channels: int = 32):
        super().__init__()
        self.proj_p = nn.Conv2d(channels, attention_channels, 1)
        self.proj_q = nn.Conv2d(channels, attention_channels, 1)

    def attention(self, source: torch.Tensor) -> torch.Tensor:
        """F_a = row-softmax(F_p^T F_q) over flattened positions, (B, N, N)."""
        p = self.proj_p(source).flatten(2)
        q = self.proj_q(source).flatten(2)
        return torch.softmax(torch.bmm(p.transpose(1, 2), q), dim=-1)


def apply_attention(attention: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
    """F_a (x) F: every output position is a convex combination of input positions."""
    b, c, h, w = features.shape
    gathered = torch.bmm(attention, features.flatten(2).transpose(1, 2))
    return gathered.transpose(1, 2).reshape(b, c, h, w)


def downsample_mask(mask, size: Tuple[int, int], like: torch.Tensor) -> torch.Tensor:
    """Area-average a UV mask to feature resolution, shaped (1, 1, h, w)."""
    tensor = torch.as_tensor(np.asarray(mask, dtype=np.float64), dtype=like.dtype, device=like.device)
    tensor = tensor.reshape(1, 1, *tensor.shape[-2:])
    return F.adaptive_avg_pool2d(tensor, size)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv2(F.relu(self.conv1(x)))


class TextureDecoder(nn.Module):
    """Two stride-2 transposed convolutions back to an R x R texture in [0, 1]."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.up1 = nn.ConvTranspose2d(channels, channels // 2, 4, 2, 1)
        self.up2 = nn.ConvTranspose2d(channels // 2, 3, 4, 2, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.up2(F.relu(self.up1(x))))


class UVTextureGenerator(nn.Module):
    """G(T_src, T_ref): encode, repair, transfer, fuse, decode."""

    def __init__(self, channels: int = 64, attention_channels: int = 32, residual_blocks: int = 3):
        super().__init__()
        self.channels = channels
        self.enc_src = TextureEncoder(channels)
        self.enc_ref = TextureEncoder(channels)
        self.fam = FlipAttention(channels)
        self.mtm = MakeupTransfer(channels, attention_channels)
        self.fuse = nn.Conv2d(2 * channels, channels, 1)
        self.bottleneck = nn.Sequential(*[ResidualBlock(channels) for _ in range(residual_blocks)])
        self.decoder = TextureDecoder(channels)

    def decode(self, source: torch.Tensor, makeup: torch.Tensor) -> torch.Tensor:
        fused = F.relu(self.fuse(torch.cat([source, makeup], dim=1)))
        return self.decoder(self.bottleneck(fused))

    def forward(self, t_src: torch.Tensor, t_ref: torch.Tensor,
                config: TransferConfig = TransferConfig()) -> torch.Tensor:
        return generate(t_src, t_ref, self, config).texture


class PatchDiscriminator(nn.Module):
    """Patch-level real/fake classifier with sigmoid scores."""

    def __init__(self, channels: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, channels, 4, 2, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, 2 * channels, 4, 2, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * channels, 4 * channels, 4, 1, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(4 * channels, 1, 4, 1, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(x))


class Discriminators(nn.Module):
    """Source-domain and reference-domain texture critics plus the image critic."""

    def __init__(self, channels: int = 32):
        super().__init__()
        self.tex_s = PatchDiscriminator(channels)
        self.tex_r = PatchDiscriminator(channels)
        self.img = PatchDiscriminator(channels)


def build_networks(channels: int = 64, attention_channels: int = 32, residual_blocks: int = 3,
                   disc_channels: int = 32, seed: int = 0) -> Tuple[UVTextureGenerator, Discriminators]:
    """Construct and initialize G and the three discriminators from one seed."""
    require(channels % 2 == 0, f"feature_channels must be even, got {channels}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        generator = UVTextureGenerator(channels, attention_channels, residual_blocks)
        generator.apply(init_weights)
        discriminators = Discriminators(disc_channels)
        discriminators.apply(init_weights)
    return generator, discriminators


# ---------------------------------------------------------------------------
# Operations

def texture_tensor(texture, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """UVTexture or R x R x 3 array -> (1, 3, R, R) tensor."""
    pixels = texture.pixels if isinstance(texture, UVTexture) else np.asarray(texture)
    return torch.as_tensor(np.ascontiguousarray(pixels.transpose(2, 0, 1)), dtype=dtype).unsqueeze(0)


def tensor_texture(tensor: torch.Tensor) -> UVTexture:
    """(1, 3, R, R) or (3, R, R) tensor -> fully valid UVTexture."""
    array = tensor.detach().cpu().double().numpy()
    if array.ndim == 4:
        array = array[0]
    return UVTexture.full(array.transpose(1, 2, 0))


def _check_texture(t: torch.Tensor, name: str):
    require(t.dim() == 4 and t.shape[1] == 3 and t.shape[2] == t.shape[3],
            f"{name} must be (B, 3, R, R), got {tuple(t.shape)}")
    require(t.shape[2] % 4 == 0, f"{name} resolution must be divisible by 4, got {t.shape[2]}")


def encode_source(t_src: torch.Tensor, generator: UVTextureGenerator) -> torch.Tensor:
    _check_texture(t_src, "T_src")
    return generator.enc_src(t_src)


def encode_reference(t_ref: torch.Tensor, generator: UVTextureGenerator) -> torch.Tensor:
    _check_texture(t_ref, "T_ref")
    return generator.enc_ref(t_ref)


def fam_repair(f_ref: torch.Tensor, generator: UVTextureGenerator,
               mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """F_hat = M * F + (1 - M) * flip(F); `mask` overrides the predicted M."""
    require(f_ref.shape[-1] % 2 == 0, f"FAM needs an even feature width, got {f_ref.shape[-1]}")
    return generator.fam(f_ref, mask)


def mtm_transfer(f_src: torch.Tensor, f_hat_ref: torch.Tensor, generator: UVTextureGenerator,
                 w: float = 1.0, region_mask=None) -> Tuple[torch.Tensor, torch.Tensor]:
    """F_m = w * (F_a (x) F_hat_ref), optionally restricted to a UV region."""
    require(0.0 <= w <= 1.0, f"shade weight w must be in [0, 1], got {w}")
    require(f_src.shape == f_hat_ref.shape,
            f"source {tuple(f_src.shape)} and reference {tuple(f_hat_ref.shape)} features differ")
    attention = generator.mtm.attention(f_src)
    makeup = w * apply_attention(attention, f_hat_ref)
    if region_mask is not None:
        makeup = makeup * downsample_mask(region_mask, makeup.shape[-2:], makeup)
    return makeup, attention


def interpolate_makeup(attention: torch.Tensor, f_hat_ref1: torch.Tensor, f_hat_ref2: torch.Tensor,
                       w: float) -> torch.Tensor:
    """F_m = w * F_a (x) F_hat_ref1 + (1 - w) * F_a (x) F_hat_ref2."""
    require(0.0 <= w <= 1.0, f"interpolation weight must be in [0, 1], got {w}")
    return w * apply_attention(attention, f_hat_ref1) + (1.0 - w) * apply_attention(attention, f_hat_ref2)


def mix_makeup(attention: torch.Tensor, f_hat_ref1: torch.Tensor, f_hat_ref2: torch.Tensor,
               region_mask, w: float = 1.0) -> torch.Tensor:
    """Region of the UV mask from reference 1, everything else from reference 2."""
    require(0.0 <= w <= 1.0, f"shade weight w must be in [0, 1], got {w}")
    first = apply_attention(attention, f_hat_ref1)
    second = apply_attention(attention, f_hat_ref2)
    mask = downsample_mask(region_mask, first.shape[-2:], first)
    return w * (mask * first + (1.0 - mask) * second)


def _reference_features(t_ref: torch.Tensor, generator: UVTextureGenerator,
                        config: TransferConfig) -> Tuple[torch.Tensor, torch.Tensor]:
    f_ref = encode_reference(t_ref, generator)
    if config.fam_off:
        return f_ref, torch.ones_like(f_ref[:, :1])
    return fam_repair(f_ref, generator)


def generate(t_src: torch.Tensor, t_ref: torch.Tensor, generator: UVTextureGenerator,
             config: TransferConfig = TransferConfig(),
             t_ref2: Optional[torch.Tensor] = None) -> GeneratorOutput:
    """T_t = G(T_src, T_ref) with the diagnostics M and F_a."""
    _check_texture(t_src, "T_src")
    _check_texture(t_ref, "T_ref")
    require(t_src.shape == t_ref.shape,
            f"source {tuple(t_src.shape)} and reference {tuple(t_ref.shape)} resolutions differ")
    f_src = encode_source(t_src, generator)
    f_hat, mask = _reference_features(t_ref, generator, config)

    attention = None
    if config.mtm_off:
        makeup = config.w * f_hat
        if config.region_mask is not None:
            makeup = makeup * downsample_mask(config.region_mask, makeup.shape[-2:], makeup)
    elif t_ref2 is not None and (config.interp_w is not None or config.mix_mask is not None):
        require(t_ref2.shape == t_ref.shape, "second reference resolution differs")
        f_hat2, _ = _reference_features(t_ref2, generator, config)
        attention = generator.mtm.attention(f_src)
        if config.mix_mask is not None:
            makeup = mix_makeup(attention, f_hat, f_hat2, config.mix_mask, config.w)
        else:
            makeup = config.w * interpolate_makeup(attention, f_hat, f_hat2, config.interp_w)
            if config.region_mask is not None:
                makeup = makeup * downsample_mask(config.region_mask, makeup.shape[-2:], makeup)
    else:
        makeup, attention = mtm_transfer(f_src, f_hat, generator, config.w, config.region_mask)

    texture = generator.decode(f_src, makeup)
    scale = t_src.shape[-1] // mask.shape[-1]
    upsampled = F.interpolate(mask, scale_factor=scale, mode="bilinear", align_corners=False)
    return GeneratorOutput(texture=texture, mask=upsampled, attention=attention, makeup=makeup)


def discriminate_texture(texture: torch.Tensor, which: str, discriminators: Discriminators) -> torch.Tensor:
    """Score map of D_tex^S (which = 'S') or D_tex^R (which = 'R')."""
    critics: Dict[str, nn.Module] = {"S": discriminators.tex_s, "R": discriminators.tex_r}
    require(which in critics, f"texture discriminator must be 'S' or 'R', got {which!r}")
    return critics[which](texture)


def discriminate_image(image: torch.Tensor, discriminators: Discriminators) -> torch.Tensor:
    """Score map of the real/fake image discriminator."""
    return discriminators.img(image)
