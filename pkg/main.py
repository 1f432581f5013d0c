#!/usr/bin/env python3
"""
UV Makeup - pose- and occlusion-robust makeup transfer in UV texture space.

Commands:
  synth     generate a synthetic face dataset (container + manifest + PNGs)
  train     adversarial training with checkpoints and a CSV loss log
  transfer  put the makeup of a reference face onto a source face
  eval      repair and round-trip metrics of a checkpoint

Exit codes: 0 success, 2 contract or config error, 3 I/O error, 4 training error.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from config.loader import Config, load_config
from engine import container
from engine.debug import DebugManager, get_logger
from engine.display import Display
from engine.errors import ContractError, UVMakeupError, require
from engine.evaluation import evaluate_repair, evaluate_round_trip, report_lines, write_report
from engine.imaging import load_image, save_image, save_mask
from engine.morphable_face import (
    MorphableBasis,
    default_landmarks,
    evaluate_shape,
    fit_landmark_file,
    load_basis,
    load_coefficients,
    save_basis,
    save_coefficients,
    save_landmarks,
)
from engine.regions import build_region_masks
from engine.session import load_checkpoint, resume_point
from engine.synthetic import SynthSettings, generate_dataset, load_dataset, save_dataset
from engine.trainer import FaceInput, TransferResult, basis_from_config, train, transfer_image
from engine.transfer_net import TransferConfig
from engine.uv_pipeline import attach_uv, uv_footprint

logger = get_logger(__name__)

REGIONS = ("lips", "eye", "face", "all", "none")
IO_EXIT_CODE = 3


class App:
    """Command implementations sharing one display."""

    def __init__(self, display: Optional[Display] = None):
        self.display = display or Display()

    # -- synth --------------------------------------------------------------

    def cmd_synth(self, args: argparse.Namespace) -> List[Path]:
        config = load_config(args.config)
        n_makeup = config.synth.n_makeup if args.n_makeup is None else args.n_makeup
        n_plain = config.synth.n_plain if args.n_plain is None else args.n_plain
        seed = config.synth.seed if args.seed is None else args.seed
        basis = basis_from_config(config)
        with self.display.status(f"generating {n_makeup + n_plain} faces"):
            samples = generate_dataset(n_makeup, n_plain, seed, basis, SynthSettings.from_config(config))

        out = Path(args.out)
        save_dataset(out, samples, seed, n_makeup, n_plain)
        basis_path = out.with_name(out.stem + ".basis.uvt")
        save_basis(basis_path, basis)
        written = [out, out.with_name(out.stem + ".manifest"), basis_path]
        folder = out.with_name(out.stem + "_samples")
        landmarks = default_landmarks(basis)
        for i, sample in enumerate(samples):
            coef = folder / f"sample_{i:04d}.coef"
            image = folder / f"sample_{i:04d}.png"
            save_coefficients(coef, sample.coefficients)
            save_landmarks(folder / f"sample_{i:04d}.landmarks",
                           evaluate_shape(basis, sample.coefficients)[landmarks], landmarks,
                           sample.coefficients.projection)
            save_image(image, sample.image)
            if sample.contaminated:
                save_mask(folder / f"sample_{i:04d}_contamination.png", sample.contamination_mask)
        written.append(folder)
        self.display.show_written(written)
        return written

    # -- train --------------------------------------------------------------

    def cmd_train(self, args: argparse.Namespace):
        config = load_config(args.config)
        flags = {}
        if args.fam_off:
            flags["trainer.fam_off"] = True
        if args.mtm_off:
            flags["trainer.mtm_off"] = True
        config = config.override(flags)
        logger.info("training %d steps into %s (fam_off=%s, mtm_off=%s)", config.trainer.steps,
                    config.trainer.out_dir, config.trainer.fam_off, config.trainer.mtm_off)
        _, start = resume_point(config.trainer.out_dir, args.resume)
        with self.display.training_progress(config.trainer.steps, start) as hook:
            state = train(config, resume=args.resume, progress=hook)
        self.display.show_metrics("training finished", {"step": state.step,
                                                        "out_dir": config.trainer.out_dir})
        return state

    # -- transfer -----------------------------------------------------------

    @staticmethod
    def _face(path: str, image: Optional[str], basis: MorphableBasis, config: Config) -> FaceInput:
        """A face from a coefficient file, or fitted from a `.landmarks` file."""
        face = config.face
        if Path(path).suffix == ".landmarks":
            coefficients = fit_landmark_file(path, basis, face.fit_regularizer, face.coeff_clamp)
        else:
            coefficients = load_coefficients(path, face.coeff_clamp)
        return FaceInput(coefficients=coefficients, image=load_image(image) if image else None)

    def cmd_transfer(self, args: argparse.Namespace) -> List[Path]:
        state = load_checkpoint(args.ckpt)
        config = state.config
        basis = load_basis(args.basis) if args.basis else basis_from_config(config)
        if basis.uv_coords is None:
            basis = attach_uv(basis)
        resolution = config.render.uv_resolution
        regions = build_region_masks(resolution, uv_footprint(basis, resolution))
        region_mask = region_for(args.region, regions)

        source = self._face(args.src, args.src_image, basis, config)
        reference = self._face(args.ref, args.ref_image, basis, config)
        second = None
        if args.mix_ref2 and args.interp_ref2:
            raise ContractError("--mix-ref2 and --interp-ref2 are exclusive")
        if args.mix_ref2:
            require(args.region in ("lips", "eye", "face"), "--mix-ref2 needs --region lips, eye or face")
            second = self._face(args.mix_ref2, None, basis, config)
        elif args.interp_ref2:
            second = self._face(args.interp_ref2, None, basis, config)
        if args.interp_sweep is not None:
            require(args.interp_ref2 is not None, "--interp-sweep needs --interp-ref2")

        out = Path(args.out)
        written: List[Path] = []

        def run(w: float, interp_w: Optional[float], suffix: str) -> TransferResult:
            transfer = TransferConfig(
                w=w,
                region_mask=None if args.mix_ref2 else region_mask,
                interp_w=interp_w if args.interp_ref2 else None,
                mix_mask=region_mask if args.mix_ref2 else None,
            )
            result = transfer_image(state, source, reference, transfer, basis=basis, reference2=second)
            path = out / f"transfer{suffix}.png"
            save_image(path, result.rendered.pixels)
            written.append(path)
            return result

        interp_w = args.interp_w if args.interp_w is not None else 1.0
        with self.display.status("transferring makeup"):
            result = run(args.w, interp_w, "")
            if args.w_sweep:
                for k in range(args.w_sweep + 1):
                    w = k / args.w_sweep
                    run(w, interp_w, f"_w{w:.3f}")
            if args.interp_sweep:
                for k in range(args.interp_sweep + 1):
                    v = k / args.interp_sweep
                    run(args.w, v, f"_interp{v:.3f}")

        mask_path = out / "fam_mask.png"
        save_mask(mask_path, result.mask)
        tensors = {"texture": result.texture.pixels, "fam_mask": result.mask}
        if result.attention is not None:
            tensors["attention"] = result.attention
        texture_path = out / "texture.uvt"
        container.save(texture_path, tensors)
        summary = attention_summary(result.attention)
        summary_path = out / "attention.txt"
        summary_path.write_text("".join(f"{k} = {v}\n" for k, v in summary.items()), encoding="utf-8")
        written += [mask_path, texture_path, summary_path]
        self.display.show_metrics("attention", summary)
        self.display.show_written(written)
        return written

    # -- eval ---------------------------------------------------------------

    def cmd_eval(self, args: argparse.Namespace) -> List[str]:
        state = load_checkpoint(args.ckpt)
        ablation = load_checkpoint(args.ablation_ckpt) if args.ablation_ckpt else None
        config = state.config
        basis = basis_from_config(config)
        if args.dataset:
            samples = load_dataset(args.dataset)
        else:
            samples = held_out_set(config, basis)
        with self.display.status(f"evaluating on {len(samples)} faces"):
            repair = evaluate_repair(state, samples, basis, ablation)
            round_trip = evaluate_round_trip(state, samples, basis)
        lines = report_lines(repair, round_trip)
        if args.report:
            write_report(args.report, repair, round_trip)
            self.display.show_written([args.report])
        self.display.show_metrics("evaluation", dict(line.split(" = ", 1) for line in lines))
        return lines


def region_for(name: str, regions) -> Optional[np.ndarray]:
    """UV mask for a --region choice; `all` means unrestricted, `none` transfers nothing."""
    require(name in REGIONS, f"unknown region {name!r}")
    if name == "all":
        return None
    resolution = next(iter(regions.values())).shape[0]
    if name == "none":
        return np.zeros((resolution, resolution), dtype=bool)
    return regions[name]


def attention_summary(attention: Optional[np.ndarray]) -> dict:
    if attention is None:
        return {"attention": "bypassed"}
    weights = np.asarray(attention, dtype=np.float64)
    entropy = -(weights * np.log(np.clip(weights, 1e-12, None))).sum(axis=1)
    return {
        "positions": int(weights.shape[0]),
        "mean_max_weight": float(weights.max(axis=1).mean()),
        "mean_entropy": float(entropy.mean()),
        "uniform_entropy": float(np.log(weights.shape[1])),
    }


def held_out_set(config: Config, basis):
    """Contaminated makeup references plus plain sources drawn from the eval seed."""
    settings = SynthSettings.from_config(config.override({"synth.contamination_rate": 1.0}))
    n_plain = max(config.synth.n_plain, 1)
    return generate_dataset(config.eval.n_test, n_plain, config.eval.seed, basis, settings)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uvmakeup", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--debug", action="store_true", help="verbose logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--out", required=True, help="dataset container path (.uvt)")
    synth.add_argument("--n-makeup", type=int)
    synth.add_argument("--n-plain", type=int)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--config")

    trainp = sub.add_parser("train", help="train the transfer network")
    trainp.add_argument("--config")
    trainp.add_argument("--resume", help="checkpoint path, or 'latest'")
    trainp.add_argument("--fam-off", action="store_true", help="bypass flip attention")
    trainp.add_argument("--mtm-off", action="store_true", help="bypass makeup attention")

    transfer = sub.add_parser("transfer", help="transfer makeup between faces")
    transfer.add_argument("--ckpt", required=True)
    transfer.add_argument("--src", required=True, help="source .coef file, or a .landmarks file to fit")
    transfer.add_argument("--ref", required=True, help="reference .coef or .landmarks file")
    transfer.add_argument("--basis", help="face model written by synth (default: built from config)")
    transfer.add_argument("--src-image", help="source PNG (rendered from coefficients if absent)")
    transfer.add_argument("--ref-image", help="reference PNG")
    transfer.add_argument("--w", type=float, default=1.0, help="shade weight in [0, 1]")
    transfer.add_argument("--region", choices=REGIONS, default="all")
    transfer.add_argument("--interp-ref2", help="second reference coefficient file to interpolate with")
    transfer.add_argument("--interp-w", type=float, help="weight of the first reference")
    transfer.add_argument("--mix-ref2", help="reference for everything outside --region")
    transfer.add_argument("--w-sweep", type=int, help="also write N+1 outputs for w = 0..1")
    transfer.add_argument("--interp-sweep", type=int, help="also write N+1 interpolation outputs")
    transfer.add_argument("--out", required=True, help="output directory")

    evalp = sub.add_parser("eval", help="evaluate a checkpoint")
    evalp.add_argument("--ckpt", required=True)
    evalp.add_argument("--dataset", help="held-out dataset container (generated when absent)")
    evalp.add_argument("--ablation-ckpt", help="separately trained fam_off checkpoint")
    evalp.add_argument("--report", help="plain-text report path")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    DebugManager.configure()
    if args.debug:
        DebugManager.enable()
    app = App()
    commands = {
        "synth": app.cmd_synth,
        "train": app.cmd_train,
        "transfer": app.cmd_transfer,
        "eval": app.cmd_eval,
    }
    try:
        commands[args.command](args)
    except UVMakeupError as exc:
        app.display.show_error(str(exc), exc.exit_code)
        return exc.exit_code
    except OSError as exc:
        app.display.show_error(str(exc), IO_EXIT_CODE)
        return IO_EXIT_CODE
    return 0


if __name__ == "__main__":
    sys.exit(main())
