"""Repair and round-trip metrics on held-out synthetic faces."""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch

from engine.debug import get_logger
from engine.errors import require
from engine.morphable_face import MorphableBasis, fit_face
from engine.regions import build_region_masks, makeup_mask
from engine.session import TrainState
from engine.synthetic import MAKEUP, PLAIN, SyntheticSample
from engine.trainer import FaceInput, basis_from_config, transfer_image, transfer_texture
from engine.transfer_net import TransferConfig, generate, texture_tensor
from engine.uv_pipeline import UVTexture, extract_uv_texture, rasterize, uv_footprint

logger = get_logger(__name__)


@dataclass
class RepairMetrics:
    mask_separation: float
    repair_gain: float  # mean of (fam_off L1 - full L1) on makeup regions
    win_fraction: float  # share of samples where the full model is closer to its oracle
    full_l1: float
    fam_off_l1: float
    samples: int
    per_sample_full: List[float] = field(default_factory=list, repr=False)
    per_sample_fam_off: List[float] = field(default_factory=list, repr=False)


@dataclass
class RoundTripMetrics:
    psnr: float  # extract o rasterize on valid texels
    cycle_l1: float
    self_transfer_l1: float
    samples: int


def psnr(a: np.ndarray, b: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Peak signal-to-noise ratio for signals in [0, 1]."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if mask is not None:
        diff = diff[mask]
    mse = float(np.mean(diff ** 2))
    return float("inf") if mse == 0.0 else 10.0 * np.log10(1.0 / mse)


def reobserve(sample: SyntheticSample, texture: UVTexture, basis: MorphableBasis,
              z_eps: float = 1e-3) -> UVTexture:
    """Render `texture` at the sample's pose and extract it back."""
    fitted = fit_face(basis, sample.coefficients)
    image = rasterize(fitted, texture, sample.image.shape[:2]).pixels
    return extract_uv_texture(image, fitted, texture.resolution, z_eps, fill_colors=basis.mean_texture)


def _split(samples: Sequence[SyntheticSample]):
    references = [s for s in samples if s.domain == MAKEUP and s.contaminated]
    sources = [s for s in samples if s.domain == PLAIN] or list(samples)
    return references, sources


def evaluate_repair(state: TrainState, samples: Sequence[SyntheticSample],
                    basis: Optional[MorphableBasis] = None,
                    ablation: Optional[TrainState] = None) -> RepairMetrics:
    """Mask separation and repair gain over the contaminated references in `samples`.

    Each contaminated reference is paired with a plain source. A model's error
    is the makeup-region L1 between its transfer from the contaminated
    reference and its own transfer from the clean version of that reference
    observed at the same pose. The fam_off model is `ablation` when given,
    otherwise the same weights with the flip attention bypassed.
    """
    config = state.config
    basis = basis if basis is not None else basis_from_config(config)
    references, sources = _split(samples)
    require(len(references) > 0, "evaluation needs contaminated makeup references")
    resolution = references[0].clean_texture.resolution
    footprint = uv_footprint(basis, resolution)
    region = makeup_mask(build_region_masks(resolution, footprint))

    full = TransferConfig()
    bypass = TransferConfig(fam_off=True)
    other = ablation if ablation is not None else state

    separations, errors_full, errors_off = [], [], []
    for i, reference in enumerate(references):
        source = sources[i % len(sources)]
        clean = reobserve(reference, reference.clean_texture, basis, config.render.z_eps)

        out = transfer_texture(state, source.observed_texture, reference.observed_texture, full)
        oracle = transfer_texture(state, source.observed_texture, clean, full)
        mask = out.mask[0, 0].numpy()
        dirty = reference.contamination_mask
        clean_texels = footprint & ~dirty
        separations.append(float(mask[clean_texels].mean() - mask[dirty].mean()))
        errors_full.append(_region_l1(out.texture, oracle.texture, region))

        out_off = transfer_texture(other, source.observed_texture, reference.observed_texture, bypass)
        oracle_off = transfer_texture(other, source.observed_texture, clean, bypass)
        errors_off.append(_region_l1(out_off.texture, oracle_off.texture, region))

    full_arr, off_arr = np.array(errors_full), np.array(errors_off)
    metrics = RepairMetrics(
        mask_separation=float(np.mean(separations)),
        repair_gain=float(np.mean(off_arr - full_arr)),
        win_fraction=float(np.mean(full_arr < off_arr)),
        full_l1=float(full_arr.mean()),
        fam_off_l1=float(off_arr.mean()),
        samples=len(references),
        per_sample_full=full_arr.tolist(),
        per_sample_fam_off=off_arr.tolist(),
    )
    logger.info("repair: separation %.4f, gain %.4f, wins %.2f over %d references",
                metrics.mask_separation, metrics.repair_gain, metrics.win_fraction, metrics.samples)
    return metrics


def _region_l1(a: torch.Tensor, b: torch.Tensor, region: np.ndarray) -> float:
    diff = (a - b).abs()[0].numpy()
    return float(diff[:, region].mean())


def evaluate_round_trip(state: TrainState, samples: Sequence[SyntheticSample],
                        basis: Optional[MorphableBasis] = None) -> RoundTripMetrics:
    """Extraction PSNR, cycle reconstruction L1 and self-transfer L1."""
    config = state.config
    basis = basis if basis is not None else basis_from_config(config)
    require(len(samples) > 0, "evaluation needs samples")
    _, sources = _split(samples)
    references = [s for s in samples if s.domain == MAKEUP] or list(samples)

    psnrs, cycles, selfs = [], [], []
    for i, sample in enumerate(samples):
        back = reobserve(sample, sample.clean_texture, basis, config.render.z_eps)
        psnrs.append(psnr(back.pixels, sample.clean_texture.pixels, back.validity))

        source = sources[i % len(sources)]
        reference = references[i % len(references)]
        t_src = texture_tensor(source.observed_texture)
        t_ref = texture_tensor(reference.observed_texture)
        with torch.no_grad():
            fake = generate(t_src, t_ref, state.generator).texture
            rec = generate(fake, t_src, state.generator).texture
        cycles.append(float((rec - t_src).abs().mean()))

        face = FaceInput(coefficients=source.coefficients, image=source.image)
        result = transfer_image(state, face, face, basis=basis)
        covered = result.rendered.face_mask
        selfs.append(float(np.abs(result.rendered.pixels[covered] - source.image[covered]).mean()))

    return RoundTripMetrics(
        psnr=float(np.mean(psnrs)),
        cycle_l1=float(np.mean(cycles)),
        self_transfer_l1=float(np.mean(selfs)),
        samples=len(samples),
    )


def report_lines(repair: RepairMetrics, round_trip: RoundTripMetrics) -> List[str]:
    """Plain-text `key = value` report."""
    values: Dict[str, Union[float, int]] = {}
    values.update({f"repair.{k}": v for k, v in asdict(repair).items() if not k.startswith("per_sample")})
    values.update({f"round_trip.{k}": v for k, v in asdict(round_trip).items()})
    return [f"{key} = {value}" for key, value in values.items()]


def write_report(path: Union[str, Path], repair: RepairMetrics, round_trip: RoundTripMetrics):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(report_lines(repair, round_trip)) + "\n", encoding="utf-8")
