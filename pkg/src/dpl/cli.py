"""Command-line harness: dataset generation, extractor pretraining,
transformation training, evaluation, and standalone distortion.

Exit codes: 0 success, 1 usage/config error, 2 pretraining accuracy gate,
3 numerical halt during training.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import SCHEMA, ConfigError, ExperimentConfig, emit_config, parse_config
from .image import Image, ImageError, from_tensor, load_image, save_image, to_tensor
from .metrics import feature_distance, ms_ssim, psnr
from .networks import FeatureNetPsi, GeneratorF, NetworkError, SelectionPhi, pretrain_psi
from .rng import Rng
from .synth import generate_synthetic
from .trainer import TrainingDiverged, run_training

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PRETRAIN_GATE = 2
EXIT_NUMERIC_HALT = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="config file (key = value lines, # comments)")
    for key, spec in SCHEMA.items():
        text = spec.help or "config override"
        parser.add_argument(f"--{key}", metavar="VALUE", default=None, dest=key,
                            help=f"{text} (default: {spec.default})")


def _load_config(args) -> ExperimentConfig:
    overrides = {key: getattr(args, key) for key in SCHEMA
                 if getattr(args, key, None) is not None}
    return parse_config(args.config, overrides)


def _pair_paths(directory: Path, index: int) -> tuple[Path, Path]:
    return directory / f"{index:04d}_x.ppm", directory / f"{index:04d}_y.ppm"


def _write_pairs(directory: Path, pairs, seed: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"seed {seed}"]
    for i, (x, y) in enumerate(pairs, start=1):
        xp, yp = _pair_paths(directory, i)
        save_image(x, xp)
        save_image(y, yp)
        lines.append(f"{xp.name} {yp.name}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def _read_pairs(directory: Path) -> list[tuple[Image, Image]]:
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise ConfigError(f"no manifest at {manifest}; run gen-data first")
    pairs = []
    for line in manifest.read_text().splitlines()[1:]:
        xname, yname = line.split()
        pairs.append((load_image(directory / xname), load_image(directory / yname)))
    return pairs


def cmd_gen_data(config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    rng = Rng(config.seed)
    train = generate_synthetic(config.task, config["train_count"], config.size,
                               rng.child(10))
    val = generate_synthetic(config.task, config["val_count"], config.size,
                             rng.child(20))
    _write_pairs(out / "train", train, config.seed)
    _write_pairs(out / "val", val, config.seed)
    print(f"wrote {len(train)} train and {len(val)} val pairs under {out}")
    return EXIT_OK


def cmd_pretrain(config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(config.seed)
    data = generate_synthetic("textures", config["pretrain.samples"], config.size,
                              rng.child(30))
    psi = FeatureNetPsi(rng.child(31))
    log_lines: list[str] = []

    def log(msg):
        log_lines.append(msg)
        print(msg)

    try:
        pretrain_psi(psi, data, config["pretrain.epochs"], rng.child(32),
                     lr=config["pretrain.lr"], log=log)
    except NetworkError as e:
        log(f"gate failed: {e}")
        (out / "pretrain_accuracy.log").write_text("\n".join(log_lines) + "\n")
        return EXIT_PRETRAIN_GATE
    (out / "pretrain_accuracy.log").write_text("\n".join(log_lines) + "\n")
    save_checkpoint(psi.state_dict(), out / "psi.dplc")
    if psi.final_accuracy < 0.80:
        print(f"accuracy gate unmet: {psi.final_accuracy:.2%} < 80%")
        return EXIT_PRETRAIN_GATE
    print(f"saved extractor checkpoint, held-out accuracy {psi.final_accuracy:.2%}")
    return EXIT_OK


def _fmt(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.12g}"


HISTORY_COLUMNS = ("iteration", "generator_loss", "perceptual", "contextual",
                   "pixel_l1", "color", "texture", "d_c", "f_norm", "phi_norm")


def _write_history(path: Path, history) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([
                row.iteration, _fmt(row.generator_loss),
                *(_fmt(row.components.get(name, 0.0))
                  for name in ("perceptual", "contextual", "pixel_l1", "color", "texture")),
                _fmt(row.d_c), _fmt(row.f_norm), _fmt(row.phi_norm),
            ])


def cmd_train(config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    pairs = _read_pairs(out / "train")
    psi = FeatureNetPsi(Rng(0))
    psi.load_state_dict(load_checkpoint(out / "psi.dplc"))
    psi.set_trainable(False)
    rng = Rng(config.seed)
    f = GeneratorF(rng.child(40))
    phi = SelectionPhi(rng.child(41))
    dpl_config = config.dpl_config()
    samples_dir = out / "samples"
    sample_every = config["train.sample_every"]

    def sample_hook(it, gen, x_img, y_img):
        if (it + 1) % sample_every:
            return
        samples_dir.mkdir(parents=True, exist_ok=True)
        x_gen = from_tensor(gen(to_tensor(x_img)).detach())
        save_image(x_img, samples_dir / f"iter{it + 1:06d}_x.ppm")
        save_image(x_gen, samples_dir / f"iter{it + 1:06d}_gen.ppm")
        save_image(y_img, samples_dir / f"iter{it + 1:06d}_y.ppm")

    history = []
    try:
        _, history = run_training(dpl_config, pairs, f, psi, phi, rng.child(42),
                                  sample_hook=sample_hook)
    except TrainingDiverged as e:
        print(f"numerical halt: {e}")
        _write_history(out / "history.csv", history)
        return EXIT_NUMERIC_HALT
    _write_history(out / "history.csv", history)
    save_checkpoint(f.state_dict(), out / "f.dplc")
    print(f"trained {dpl_config.iterations} iterations; wrote f.dplc and history.csv")
    return EXIT_OK


def cmd_eval(config: ExperimentConfig, checkpoint_path=None) -> int:
    out = Path(config.out_dir)
    pairs = _read_pairs(out / "val")
    psi = FeatureNetPsi(Rng(0))
    psi.load_state_dict(load_checkpoint(out / "psi.dplc"))
    psi.set_trainable(False)
    f = GeneratorF(Rng(0))
    f.load_state_dict(load_checkpoint(checkpoint_path or out / "f.dplc"))
    metric_names = config["metrics"]
    rows = []
    sums = {name: 0.0 for name in metric_names}
    for i, (x, y) in enumerate(pairs, start=1):
        x_gen = from_tensor(f(to_tensor(x)).detach())
        row = {"id": f"{i:04d}"}
        for name in metric_names:
            if name == "psnr":
                row[name] = psnr(x_gen, y)
            elif name == "ms_ssim":
                row[name] = ms_ssim(x_gen, y)
            else:
                row[name] = feature_distance(x_gen, y, psi)
            sums[name] += row[name]
        rows.append(row)
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *metric_names])
        for row in rows:
            writer.writerow([row["id"], *(_fmt(row[name]) for name in metric_names)])
        writer.writerow(["mean", *(_fmt(sums[name] / len(rows)) for name in metric_names)])
    print(f"evaluated {len(rows)} pairs; wrote report.csv")
    return EXIT_OK


def cmd_distort(config: ExperimentConfig, input_path, output_path) -> int:
    spec = config.distortion_spec()
    if spec is None:
        raise ConfigError("distort requires dpl.distortion != none")
    image = load_image(input_path)
    save_image(spec.apply(image, Rng(config.seed)), output_path)
    print(f"wrote {output_path}")
    return EXIT_OK


def cmd_show_config(config: ExperimentConfig) -> int:
    sys.stdout.write(emit_config(config))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _Parser(prog="dpl", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen-data", "write paired PPM datasets for the configured task"),
        ("pretrain", "train the texture classifier and save psi.dplc"),
        ("train", "run transformation training and save f.dplc + history.csv"),
        ("eval", "evaluate a generator checkpoint on the validation set"),
        ("distort", "apply the configured distortion to one image"),
        ("show-config", "print the fully resolved configuration"),
    ]:
        p = sub.add_parser(name, help=help_text, parents=[])
        _add_common(p)
        if name == "eval":
            p.add_argument("--f-checkpoint", default=None,
                           help="generator checkpoint (default <out_dir>/f.dplc)")
        if name == "distort":
            p.add_argument("--input", required=True, help="input PPM")
            p.add_argument("--output", required=True, help="output PPM")

    try:
        args = parser.parse_args(argv)
        config = _load_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(config)
        if args.command == "pretrain":
            return cmd_pretrain(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "eval":
            return cmd_eval(config, args.f_checkpoint)
        if args.command == "distort":
            return cmd_distort(config, args.input, args.output)
        return cmd_show_config(config)
    except (_UsageError, ConfigError, CheckpointError, ImageError, NetworkError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
