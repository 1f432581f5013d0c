"""Adversarial training loop and image-level makeup transfer."""

import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from config.loader import Config
from engine import container
from engine.debug import get_logger
from engine.errors import TrainingError, require
from engine.morphable_face import (
    FaceCoefficients,
    MorphableBasis,
    build_basis,
    fit_face,
)
from engine.objectives import (
    AdversarialBatch,
    HistogramSpec,
    LossComponents,
    LossWeights,
    RandomFeatureExtractor,
    cycle_loss,
    discriminator_adversarial,
    generator_adversarial,
    makeup_loss,
    perceptual_loss,
    total_loss,
)
from engine.regions import build_region_masks
from engine.session import (
    LossLog,
    TrainState,
    load_checkpoint,
    prune_checkpoints,
    resume_point,
    save_checkpoint,
)
from engine.synthetic import (
    MAKEUP,
    PLAIN,
    SyntheticSample,
    SynthSettings,
    generate_dataset,
    load_dataset,
)
from engine.transfer_net import GeneratorOutput, TransferConfig, generate, tensor_texture, texture_tensor
from engine.uv_pipeline import (
    RenderedImage,
    RenderOperator,
    UVTexture,
    attach_uv,
    build_render_operator,
    extract_uv_texture,
    rasterize,
    uv_footprint,
    vertex_colors_to_uv,
)

logger = get_logger(__name__)

ProgressHook = Callable[[int, Dict[str, float]], None]


def basis_from_config(config: Config) -> MorphableBasis:
    face = config.face
    return attach_uv(build_basis(face.rows, face.cols, face.k_id, face.k_exp, face.k_tex, face.seed))


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """H x W x 3 array -> (1, 3, H, W) float32 tensor."""
    return torch.as_tensor(np.ascontiguousarray(np.asarray(image).transpose(2, 0, 1)),
                           dtype=torch.float32).unsqueeze(0)


# ---------------------------------------------------------------------------
# Data

@dataclass
class PreparedSample:
    """A sample with its render operator and image-space region masks."""
    index: int
    sample: SyntheticSample
    texture: torch.Tensor  # observed UV texture, (1, 3, R, R)
    image: torch.Tensor  # (1, 3, H, W)
    operator: RenderOperator
    region_masks: Dict[str, np.ndarray]


class TrainingData:
    """Lazily prepared samples plus the seeded (source, reference) schedule."""

    def __init__(self, samples: Sequence[SyntheticSample], basis: MorphableBasis, config: Config):
        require(len(samples) >= 1, "training needs at least one sample")
        self.samples = list(samples)
        self.basis = basis
        self.config = config
        self.uv_regions = build_region_masks(config.render.uv_resolution,
                                             uv_footprint(basis, config.render.uv_resolution))
        self.makeup = [i for i, s in enumerate(self.samples) if s.domain == MAKEUP]
        self.plain = [i for i, s in enumerate(self.samples) if s.domain == PLAIN]
        if not self.makeup:
            self.makeup = list(range(len(self.samples)))
        if not self.plain:
            self.plain = list(range(len(self.samples)))
        self._cache: Dict[int, PreparedSample] = {}
        self._lock = threading.Lock()

    def pair_indices(self, step: int) -> Tuple[int, int]:
        """Unpaired draw for `step`; depends only on the seed and the step."""
        rng = np.random.default_rng([self.config.trainer.seed, step])
        return int(rng.choice(self.plain)), int(rng.choice(self.makeup))

    def prepared(self, index: int) -> PreparedSample:
        with self._lock:
            if index in self._cache:
                return self._cache[index]
        sample = self.samples[index]
        fitted = fit_face(self.basis, sample.coefficients)
        size = sample.image.shape[:2]
        operator = build_render_operator(fitted, sample.observed_texture.resolution, size,
                                         self.config.render.background)
        prepared = PreparedSample(
            index=index,
            sample=sample,
            texture=texture_tensor(sample.observed_texture),
            image=image_to_tensor(sample.image),
            operator=operator,
            region_masks=operator.region_masks(self.uv_regions),
        )
        with self._lock:
            return self._cache.setdefault(index, prepared)

    def pair(self, step: int) -> Tuple[PreparedSample, PreparedSample]:
        src, ref = self.pair_indices(step)
        return self.prepared(src), self.prepared(ref)


class PairPrefetcher:
    """Prepare the pairs of upcoming steps on worker threads, yielded in step order."""

    def __init__(self, data: TrainingData, start: int, stop: int, depth: int = 2):
        self.data = data
        self.steps = iter(range(start, stop))
        self.depth = max(depth, 0)
        self.pool = ThreadPoolExecutor(max_workers=self.depth) if self.depth else None
        self.pending: deque = deque()

    def _submit(self):
        step = next(self.steps, None)
        if step is not None:
            self.pending.append((step, self.pool.submit(self.data.pair, step)))

    def __iter__(self):
        if self.pool is None:
            for step in self.steps:
                yield step, self.data.pair(step)
            return
        try:
            for _ in range(self.depth):
                self._submit()
            while self.pending:
                step, future = self.pending.popleft()
                self._submit()
                yield step, future.result()
        finally:
            self.pool.shutdown(wait=True, cancel_futures=True)


def load_training_samples(config: Config, basis: MorphableBasis) -> List[SyntheticSample]:
    if config.trainer.dataset:
        return load_dataset(config.trainer.dataset)
    synth = config.synth
    return generate_dataset(synth.n_makeup, synth.n_plain, synth.seed, basis,
                            SynthSettings.from_config(config))


# ---------------------------------------------------------------------------
# One step

@dataclass
class StepLosses:
    l_g: float
    l_d: float
    components: Dict[str, float]

    def row(self, step: int) -> Dict[str, float]:
        return {"step": step, "l_g": self.l_g, "l_d": self.l_d, **self.components}


class Trainer:
    """Alternating discriminator / generator updates on one pair at a time."""

    def __init__(self, state: TrainState, data: TrainingData):
        self.state = state
        self.data = data
        config = state.config
        self.weights = LossWeights.from_config(config.loss)
        self.spec = HistogramSpec(config.loss.hist_bins)
        self.eps = config.loss.score_eps
        self.form = config.loss.generator_form
        self.transfer = TransferConfig(fam_off=config.trainer.fam_off, mtm_off=config.trainer.mtm_off)
        self.extractor = RandomFeatureExtractor(config.network.extractor_seed)

    def translate(self, t_a: torch.Tensor, t_b: torch.Tensor) -> torch.Tensor:
        return generate(t_a, t_b, self.state.generator, self.transfer).texture

    def _forward(self, src: PreparedSample, ref: PreparedSample) -> AdversarialBatch:
        fake_sr = self.translate(src.texture, ref.texture)
        fake_rs = self.translate(ref.texture, src.texture)
        return AdversarialBatch(
            t_src=src.texture, t_ref=ref.texture,
            fake_src_ref=fake_sr, fake_ref_src=fake_rs,
            img_src=src.image, img_ref=ref.image,
            render_src_ref=src.operator.render_torch(fake_sr),
            render_ref_src=ref.operator.render_torch(fake_rs),
        )

    @staticmethod
    def _detached(batch: AdversarialBatch) -> AdversarialBatch:
        return AdversarialBatch(**{k: v.detach() for k, v in vars(batch).items()})

    def step(self, pairs: Sequence[Tuple[PreparedSample, PreparedSample]]) -> StepLosses:
        """One D update then one G update, gradients averaged over `pairs`."""
        state = self.state
        discs = state.discriminators
        scale = 1.0 / len(pairs)
        require(state.config.trainer.d_steps >= 1, "trainer.d_steps must be at least 1")
        batches = [self._forward(src, ref) for src, ref in pairs]

        for _ in range(state.config.trainer.d_steps):
            state.opt_d.zero_grad(set_to_none=True)
            d_parts = LossComponents()
            l_d_total = 0.0
            for batch in batches:
                d_tex, d_img = discriminator_adversarial(discs.tex_s, discs.tex_r, discs.img,
                                                         self._detached(batch), self.eps)
                _, l_d = total_loss(LossComponents(d_tex=d_tex, d_img=d_img), self.weights)
                self._check_finite(l_d, batch, pairs)
                (l_d * scale).backward()
                d_parts.d_tex += d_tex.item() * scale
                d_parts.d_img += d_img.item() * scale
                l_d_total += l_d.item() * scale
            state.opt_d.step()

        state.opt_g.zero_grad(set_to_none=True)
        parts = LossComponents(d_tex=d_parts.d_tex, d_img=d_parts.d_img)
        l_g_total = 0.0
        for batch, (src, ref) in zip(batches, pairs):
            g_tex, g_img = generator_adversarial(discs.tex_s, discs.tex_r, discs.img, batch,
                                                 self.eps, self.form)
            components = LossComponents(
                g_tex=g_tex,
                g_img=g_img,
                makeup=makeup_loss(batch.render_src_ref, batch.img_ref, src.region_masks,
                                   self.weights, ref.region_masks, self.spec),
                cycle=cycle_loss(self.translate, batch.t_src, batch.t_ref,
                                 fakes=(batch.fake_src_ref, batch.fake_ref_src)),
                perceptual=perceptual_loss(batch.fake_src_ref, batch.t_src, self.extractor),
            )
            l_g, _ = total_loss(components, self.weights)
            self._check_finite(l_g, batch, pairs)
            (l_g * scale).backward()
            for name in ("g_tex", "g_img", "makeup", "cycle", "perceptual"):
                setattr(parts, name, getattr(parts, name) + getattr(components, name).item() * scale)
            l_g_total += l_g.item() * scale
        state.opt_g.step()

        parts_dict = parts.as_floats()
        return StepLosses(l_g=l_g_total, l_d=l_d_total, components=parts_dict)

    def _check_finite(self, loss: torch.Tensor, batch: AdversarialBatch,
                      pairs: Sequence[Tuple[PreparedSample, PreparedSample]]):
        if torch.isfinite(loss).all():
            return
        out_dir = Path(self.state.config.trainer.out_dir)
        dump = out_dir / f"nonfinite_step_{self.state.step + 1:07d}.uvt"
        tensors = {name: value.detach().cpu().numpy() for name, value in vars(batch).items()}
        tensors["pair_indices"] = np.array([[s.index, r.index] for s, r in pairs], dtype=np.int32)
        container.save(dump, tensors)
        logger.error("non-finite loss at step %d, batch dumped to %s", self.state.step + 1, dump)
        raise TrainingError(f"non-finite loss at step {self.state.step + 1}", dump_path=str(dump))


# ---------------------------------------------------------------------------
# Loop

def train(config: Config, samples: Optional[Sequence[SyntheticSample]] = None,
          resume: Optional[str] = None, progress: Optional[ProgressHook] = None,
          basis: Optional[MorphableBasis] = None) -> TrainState:
    """Train for `config.trainer.steps` steps, checkpointing and logging every step.

    `resume` is a checkpoint path or "latest" (newest checkpoint in out_dir).
    """
    tcfg = config.trainer
    out_dir = Path(tcfg.out_dir)
    basis = basis if basis is not None else basis_from_config(config)
    if samples is None:
        samples = load_training_samples(config, basis)
    data = TrainingData(samples, basis, config)

    path, _ = resume_point(out_dir, resume)
    if path is not None:
        state = load_checkpoint(path, config)
        logger.info("resuming from %s at step %d", path, state.step)
    else:
        state = TrainState.fresh(config)

    log = LossLog(out_dir / "losses.csv")
    if path is not None:
        log.truncate_after(state.step)
    else:
        log.reset()
    trainer = Trainer(state, data)
    accumulate = max(tcfg.accumulate, 1)

    first = state.step * accumulate
    stop = tcfg.steps * accumulate
    pending: List[Tuple[PreparedSample, PreparedSample]] = []
    for _, pair in PairPrefetcher(data, first, stop, tcfg.prefetch):
        pending.append(pair)
        if len(pending) < accumulate:
            continue
        losses = trainer.step(pending)
        pending = []
        state.step += 1
        log.append(losses.row(state.step))
        if progress is not None and state.step % max(tcfg.log_every, 1) == 0:
            progress(state.step, losses.row(state.step))
        if state.step % tcfg.checkpoint_every == 0 or state.step == tcfg.steps:
            save_checkpoint(state, out_dir)
            prune_checkpoints(out_dir, tcfg.keep_checkpoints)
    return state


# ---------------------------------------------------------------------------
# Transfer

@dataclass(frozen=True)
class FaceInput:
    """A face given by coefficients, optionally with the photo they were fitted to."""
    coefficients: FaceCoefficients
    image: Optional[np.ndarray] = None


@dataclass
class TransferResult:
    rendered: RenderedImage
    texture: UVTexture
    mask: np.ndarray  # upsampled FAM mask, R x R
    attention: Optional[np.ndarray]  # F_a of the first batch item, N x N


def observe(face: FaceInput, basis: MorphableBasis, config: Config) -> Tuple[np.ndarray, UVTexture]:
    """The face's image (rendered from the model texture when absent) and its extracted texture."""
    render = config.render
    fitted = fit_face(basis, face.coefficients)
    image = face.image
    if image is None:
        texture = vertex_colors_to_uv(fitted.vertex_colors, basis.uv_coords, basis.triangles,
                                      render.uv_resolution)
        size = (render.image_size, render.image_size)
        image = rasterize(fitted, UVTexture.full(np.clip(texture, 0.0, 1.0)), size,
                          render.background).pixels
    observed = extract_uv_texture(image, fitted, render.uv_resolution, render.z_eps,
                                  fill_colors=basis.mean_texture)
    return np.asarray(image, dtype=np.float64), observed


def transfer_texture(state: TrainState, t_src: UVTexture, t_ref: UVTexture,
                     transfer: TransferConfig = TransferConfig(),
                     t_ref2: Optional[UVTexture] = None) -> GeneratorOutput:
    with torch.no_grad():
        return generate(texture_tensor(t_src), texture_tensor(t_ref), state.generator, transfer,
                        texture_tensor(t_ref2) if t_ref2 is not None else None)


def transfer_image(state: TrainState, source: FaceInput, reference: FaceInput,
                   transfer: TransferConfig = TransferConfig(), basis: Optional[MorphableBasis] = None,
                   reference2: Optional[FaceInput] = None) -> TransferResult:
    """I_t = R(S_src, G(T_src, T_ref)) composited over the source background."""
    config = state.config
    basis = basis if basis is not None else basis_from_config(config)
    image_src, t_src = observe(source, basis, config)
    _, t_ref = observe(reference, basis, config)
    t_ref2 = observe(reference2, basis, config)[1] if reference2 is not None else None
    output = transfer_texture(state, t_src, t_ref, transfer, t_ref2)

    texture = tensor_texture(output.texture)
    fitted = fit_face(basis, source.coefficients)
    operator = build_render_operator(fitted, t_src.resolution, image_src.shape[:2],
                                     config.render.background)
    pixels = operator.apply(texture.pixels)
    face = operator.face_mask
    pixels[~face] = image_src[~face]
    uv_regions = build_region_masks(t_src.resolution, uv_footprint(basis, t_src.resolution))
    rendered = RenderedImage(pixels=pixels, face_mask=face,
                             region_masks=operator.region_masks(uv_regions))
    attention = output.attention[0].numpy() if output.attention is not None else None
    return TransferResult(
        rendered=rendered,
        texture=texture,
        mask=output.mask[0, 0].numpy().astype(np.float64),
        attention=attention,
    )
