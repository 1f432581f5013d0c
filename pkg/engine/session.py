"""Training session state: networks, optimizers, checkpoints and the loss log."""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import torch
from dotenv import dotenv_values

from config.loader import Config
from engine import container
from engine.debug import get_logger
from engine.errors import ContainerError, require
from engine.transfer_net import Discriminators, UVTextureGenerator, build_networks

logger = get_logger(__name__)

CHECKPOINT_PREFIX = "step_"
MANIFEST_SECTION = "checkpoint"
LOG_COLUMNS = ("step", "l_g", "l_d", "g_tex", "g_img", "d_tex", "d_img", "makeup", "cycle", "perceptual")
ADAM_BUFFERS = ("exp_avg", "exp_avg_sq", "step")


def make_optimizer(params: Iterable[torch.nn.Parameter], config: Config) -> torch.optim.Adam:
    """Adam with the configured constant learning rate and betas."""
    trainer = config.trainer
    return torch.optim.Adam(params, lr=trainer.learning_rate, betas=(trainer.beta1, trainer.beta2))


@dataclass
class TrainState:
    """Everything needed to continue training bit-exactly."""
    generator: UVTextureGenerator
    discriminators: Discriminators
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    config: Config
    step: int = 0

    @property
    def seed(self) -> int:
        return self.config.trainer.seed

    @classmethod
    def fresh(cls, config: Config) -> "TrainState":
        net = config.network
        generator, discriminators = build_networks(
            net.feature_channels, net.attention_channels, net.residual_blocks,
            net.disc_channels, seed=config.trainer.seed)
        return cls(
            generator=generator,
            discriminators=discriminators,
            opt_g=make_optimizer(generator.parameters(), config),
            opt_d=make_optimizer(discriminators.parameters(), config),
            config=config,
        )


# ---------------------------------------------------------------------------
# Tensor packing

def _module_tensors(prefix: str, module: torch.nn.Module) -> Dict[str, np.ndarray]:
    return {f"{prefix}/{name}": value.detach().cpu().numpy()
            for name, value in module.state_dict().items()}


def _optimizer_tensors(prefix: str, optimizer: torch.optim.Optimizer) -> Dict[str, np.ndarray]:
    tensors = {}
    for index, buffers in optimizer.state_dict()["state"].items():
        for key in ADAM_BUFFERS:
            value = buffers[key]
            value = value.detach().cpu().numpy() if torch.is_tensor(value) else np.float32(value)
            tensors[f"{prefix}/{index}/{key}"] = np.asarray(value, dtype=np.float32)
    return tensors


def _restore_module(prefix: str, module: torch.nn.Module, tensors: Dict[str, np.ndarray]):
    state = {name: torch.from_numpy(container.pick(tensors, f"{prefix}/{name}").copy()).to(ref.dtype)
             for name, ref in module.state_dict().items()}
    module.load_state_dict(state)


def _restore_optimizer(prefix: str, optimizer: torch.optim.Optimizer, tensors: Dict[str, np.ndarray]):
    template = optimizer.state_dict()
    n_params = len(template["param_groups"][0]["params"])
    state = {}
    for index in range(n_params):
        if f"{prefix}/{index}/step" not in tensors:
            continue
        state[index] = {key: torch.from_numpy(container.pick(tensors, f"{prefix}/{index}/{key}").copy())
                        for key in ADAM_BUFFERS}
    template["state"] = state
    optimizer.load_state_dict(template)


# ---------------------------------------------------------------------------
# Checkpoints

def checkpoint_path(out_dir: Union[str, Path], step: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"{CHECKPOINT_PREFIX}{step:07d}.uvt"


def manifest_path(checkpoint: Union[str, Path]) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.stem + ".manifest")


def save_checkpoint(state: TrainState, out_dir: Union[str, Path]) -> Path:
    """Write `step_NNNNNNN.uvt` and its manifest (effective config plus step)."""
    path = checkpoint_path(out_dir, state.step)
    tensors = {}
    tensors.update(_module_tensors("generator", state.generator))
    tensors.update(_module_tensors("discriminators", state.discriminators))
    tensors.update(_optimizer_tensors("opt_g", state.opt_g))
    tensors.update(_optimizer_tensors("opt_d", state.opt_d))
    container.save(path, tensors)
    lines = [f"{MANIFEST_SECTION}.step = {state.step}", f"{MANIFEST_SECTION}.seed = {state.seed}"]
    lines += state.config.to_lines()
    manifest_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("checkpoint written: %s", path)
    return path


def read_manifest(checkpoint: Union[str, Path]) -> Tuple[Dict[str, str], Dict[str, str]]:
    """(checkpoint fields, config entries) of a checkpoint manifest."""
    target = manifest_path(checkpoint)
    if not target.exists():
        raise ContainerError(f"checkpoint manifest not found: {target}")
    values = {k: v for k, v in dotenv_values(target).items() if v is not None}
    own = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(MANIFEST_SECTION + ".")}
    rest = {k: v for k, v in values.items() if not k.startswith(MANIFEST_SECTION + ".")}
    return own, rest


def load_checkpoint(checkpoint: Union[str, Path], config: Optional[Config] = None) -> TrainState:
    """Rebuild a TrainState; `config` replaces the stored one (network shape must match)."""
    own, stored = read_manifest(checkpoint)
    config = config if config is not None else Config().override(stored)
    tensors = container.load(checkpoint)
    state = TrainState.fresh(config)
    _restore_module("generator", state.generator, tensors)
    _restore_module("discriminators", state.discriminators, tensors)
    _restore_optimizer("opt_g", state.opt_g, tensors)
    _restore_optimizer("opt_d", state.opt_d, tensors)
    state.step = int(own.get("step", 0))
    logger.debug("restored %s at step %d", checkpoint, state.step)
    return state


def list_checkpoints(out_dir: Union[str, Path]) -> List[Path]:
    folder = Path(out_dir) / "checkpoints"
    if not folder.exists():
        return []
    return sorted(folder.glob(f"{CHECKPOINT_PREFIX}*.uvt"))


def latest_checkpoint(out_dir: Union[str, Path]) -> Optional[Path]:
    found = list_checkpoints(out_dir)
    return found[-1] if found else None


def resume_point(out_dir: Union[str, Path], resume: Optional[str]) -> Tuple[Optional[Path], int]:
    """(checkpoint, step) a run continues from; `resume` is a path or "latest"."""
    if not resume:
        return None, 0
    path = latest_checkpoint(out_dir) if resume == "latest" else Path(resume)
    require(path is not None, f"no checkpoint to resume from in {out_dir}")
    own, _ = read_manifest(path)
    return path, int(own.get("step", 0))


def prune_checkpoints(out_dir: Union[str, Path], keep: int):
    """Delete all but the newest `keep` checkpoints."""
    for old in list_checkpoints(out_dir)[:-keep] if keep > 0 else []:
        old.unlink()
        manifest_path(old).unlink(missing_ok=True)
        logger.debug("pruned %s", old)


# ---------------------------------------------------------------------------
# Loss log

class LossLog:
    """Append-only CSV of per-step loss values."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def truncate_after(self, step: int):
        """Drop rows past `step` so a resumed run continues the log seamlessly."""
        if not self.path.exists():
            return
        kept = [row for row in self.rows() if int(row["step"]) <= step]
        self._write(kept, mode="w")

    def reset(self):
        self._write([], mode="w")

    def append(self, row: Dict[str, float]):
        self._write([row], mode="a")

    def _write(self, rows: List[Dict], mode: str):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        new_file = mode == "w" or not self.path.exists() or self.path.stat().st_size == 0
        with open(self.path, mode, newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=LOG_COLUMNS)
            if new_file:
                writer.writeheader()
            for row in rows:
                writer.writerow({k: row[k] for k in LOG_COLUMNS})

    def rows(self) -> List[Dict[str, str]]:
        if not self.path.exists():
            return []
        with open(self.path, newline="", encoding="utf-8") as handle:
            return list(csv.DictReader(handle))

    def column(self, name: str) -> np.ndarray:
        return np.array([float(row[name]) for row in self.rows()])
