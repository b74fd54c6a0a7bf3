"""Command-line entry point.

Commands::

    train  --config PATH
    eval   --checkpoint PATH [--split PATH] [--tau F] [--out DIR]
    sweep  --checkpoint PATH --pools LIST [--tau F] [--out DIR]
    ablate --config PATH --baselines LIST --seeds LIST
    synth  --kind noise|noised --count N --out DIR [--seed S] [--data PATH]
    plot   --in CSV --out PNG

Failures exit nonzero after printing one JSON line ``{"error": ..., "message": ...}``
to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import torch

from . import __version__
from .baselines import BASELINES, run_ablation, write_ablation_csv
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_dict, load_config
from .datasets import (
    OpenSetData,
    SplitSpec,
    export_png_folder,
    fit_to_32,
    load_dataset,
    make_split,
    noised_copy,
    prepare_open_set,
    synth_noise,
    to_channels,
    unknown_pools,
)
from .errors import ConfigError
from .evaluation import macro_f1, openness, sweep_openness, write_curve_csv
from .inference import UNKNOWN, predict, write_predictions_csv
from .trainer import Trainer, TrainingError, build_model, write_history_csv


def _load_data(cfg: RunConfig):
    return load_dataset(cfg.paths.data_dir, cfg.paths.data_format)


def _split_for(cfg: RunConfig, labels: torch.Tensor, trial_seed: Optional[int] = None) -> SplitSpec:
    classes = sorted(set(labels.tolist()))
    seed = cfg.split.trial_seed if trial_seed is None else trial_seed
    return make_split(cfg.split.dataset, classes, cfg.split.num_known, seed)


def _prepare(cfg: RunConfig, images, labels, split: SplitSpec) -> OpenSetData:
    if split.num_known != cfg.encoder.num_known:
        raise ConfigError(
            f"split has {split.num_known} known classes but the model expects {cfg.encoder.num_known}"
        )
    return prepare_open_set(
        images,
        labels,
        split,
        channels=cfg.encoder.input_shape[0],
        test_fraction=cfg.split.test_fraction,
        max_train_per_class=cfg.split.max_train_per_class,
        resize_mode=cfg.split.resize_mode,
    )


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    images, labels = _load_data(cfg)
    split = _split_for(cfg, labels)
    data = _prepare(cfg, images, labels, split)
    model = build_model(
        cfg.encoder,
        cfg.train.seed,
        disc_hidden=cfg.discriminator.hidden,
        adapter_channels=cfg.discriminator.adapter_channels,
    )
    snapshot = {"run": cfg.to_dict(), "split_spec": split.to_dict(), "version": __version__}
    ckpt_dir = out / "checkpoint"

    def checkpoint(epoch: int, trainer: Trainer) -> None:
        save_checkpoint(trainer.model, ckpt_dir, config=snapshot, epoch=epoch + 1, rng=trainer.noise_rng)

    trainer = Trainer(model, cfg.train)
    try:
        history = trainer.train(data.train_x, data.train_y, on_epoch_end=checkpoint)
    except TrainingError as exc:
        write_history_csv(exc.history, out / "loss_history.csv")
        raise
    if cfg.train.epochs == 0:
        save_checkpoint(model, ckpt_dir, config=snapshot, epoch=0, rng=trainer.noise_rng)
    write_history_csv(history, out / "loss_history.csv")
    split.save(out / "split.json")
    final = asdict(history[-1]) if history else {}
    _write_json(
        out / "run_report.json",
        {
            "config": cfg.to_dict(),
            "split": split.to_dict(),
            "split_hash": split.digest(),
            "n_train": int(data.train_x.shape[0]),
            "iterations": len(history),
            "final_losses": final,
            "version": __version__,
        },
    )
    return 0


def _config_from_checkpoint(manifest: dict) -> RunConfig:
    snapshot = manifest.get("config", {})
    if "run" not in snapshot:
        raise ConfigError("checkpoint carries no run configuration snapshot")
    return config_from_dict(snapshot["run"])


def _split_from(manifest: dict, split_path: Optional[str]) -> SplitSpec:
    if split_path:
        return SplitSpec.load(split_path)
    if "split_spec" not in manifest.get("config", {}):
        raise ConfigError("no --split given and the checkpoint records no split")
    return SplitSpec.from_dict(manifest["config"]["split_spec"])


def cmd_eval(args) -> int:
    model, manifest = load_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(manifest)
    split = _split_from(manifest, args.split)
    tau = cfg.eval.tau if args.tau is None else args.tau
    out = Path(args.out) if args.out else cfg.out_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    images, labels = _load_data(cfg)
    data = _prepare(cfg, images, labels, split)
    x = torch.cat([data.known_test_x, data.unknown_test_x])
    truth = data.known_test_y.tolist() + [UNKNOWN] * data.unknown_test_x.shape[0]
    preds = predict(model, x, tau)
    k = split.num_known
    report = macro_f1(preds, truth, k, openness_value=openness(k, k + len(split.unknown_classes)))
    report.extra = {
        "tau": tau,
        "split_hash": split.digest(),
        "known_to_unknown_ratio": report.n_known / max(report.n_unknown, 1),
    }
    (out / "eval_report.json").write_text(report.to_json() + "\n")
    write_predictions_csv(preds, out / "predictions.csv")
    from .plotting import plot_confusion

    plot_confusion(report.confusion, out / "confusion.png", title=f"macro-F1 {report.macro_f1:.3f}")
    print(f"macro_f1={report.macro_f1:.4f} openness={report.openness:.4f} n={report.n_samples}")
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def cmd_sweep(args) -> int:
    model, manifest = load_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(manifest)
    split = _split_from(manifest, args.split)
    tau = cfg.eval.tau if args.tau is None else args.tau
    pool_sizes = _int_list(args.pools) if args.pools else list(cfg.eval.pool_sizes)
    out = Path(args.out) if args.out else cfg.out_dir / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    images, labels = _load_data(cfg)
    data = _prepare(cfg, images, labels, split)
    pools = unknown_pools(data, pool_sizes, seed=split.trial_seed)
    curve = sweep_openness(
        model, data.known_test_x, data.known_test_y, pools, tau, known_class_ids=split.known_classes
    )
    write_curve_csv(curve, out / "sweep.csv")
    from .plotting import plot_curves

    plot_curves({"model": [(p.openness, p.macro_f1) for p in curve]}, out / "sweep.png")
    for p in curve:
        print(f"unknown_classes={p.n_unknown_classes} openness={p.openness:.4f} macro_f1={p.macro_f1:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    baselines = [b for b in args.baselines.split(",") if b] if args.baselines else list(BASELINES)
    seeds = _int_list(args.seeds)
    out = cfg.out_dir / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    images, labels = _load_data(cfg)
    runs = []
    for seed in seeds:
        split = _split_for(cfg, labels, trial_seed=seed)
        runs.append((seed, _prepare(cfg, images, labels, split)))
    rows = run_ablation(
        runs,
        baselines,
        cfg.encoder,
        cfg.train,
        pool_sizes=cfg.eval.pool_sizes,
        tau=cfg.eval.tau,
        disc_hidden=cfg.discriminator.hidden,
        adapter_channels=cfg.discriminator.adapter_channels,
    )
    write_ablation_csv(rows, out / "ablation.csv")
    _write_json(
        out / "ablation_report.json",
        {
            "note": "baseline III uses no statistical constraint; adversarial prior matching is not reproduced",
            "baselines": {b: BASELINES[b].description for b in baselines},
            "splits": {str(seed): data.split.to_dict() for seed, data in runs},
            "config": cfg.to_dict(),
        },
    )
    from .plotting import plot_curves, read_curves

    plot_curves(read_curves(out / "ablation.csv"), out / "ablation.png")
    return 0


def cmd_synth(args) -> int:
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    shape = tuple(_int_list(args.shape))
    if args.kind == "noise":
        batch = synth_noise(args.count, shape, args.seed)
    elif args.kind == "noised":
        if not args.data:
            raise ConfigError("--kind noised needs --data PATH with source images")
        images, _ = load_dataset(args.data, args.format)
        images = to_channels(fit_to_32(images).pixels, shape[0])
        if images.shape[0] < args.count:
            raise ConfigError(f"--count {args.count} exceeds the {images.shape[0]} source images")
        batch = noised_copy(images[: args.count], args.seed)
    else:
        raise ConfigError(f"unknown synth kind {args.kind!r}")
    paths = export_png_folder(batch, args.out)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_curves, read_curves

    src = Path(getattr(args, "in"))
    if not src.exists():
        raise ConfigError(f"input CSV not found: {src}")
    plot_curves(read_curves(src), args.out)
    return 0


class _Parser(argparse.ArgumentParser):
    """Reports usage errors through the same one-line JSON channel."""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="m2iosr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the full method from a run config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="open-set evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split")
    p.add_argument("--tau", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="macro-F1 over growing unknown pools")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pools", help="comma-separated unknown class counts")
    p.add_argument("--split")
    p.add_argument("--tau", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="train and sweep a list of baselines")
    p.add_argument("--config", required=True)
    p.add_argument("--baselines", help=f"comma-separated ids from {','.join(BASELINES)}")
    p.add_argument("--seeds", default="0")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="write synthetic unknown images as PNGs")
    p.add_argument("--kind", choices=("noise", "noised"), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", default="1,32,32")
    p.add_argument("--data")
    p.add_argument("--format", default="auto")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plot", help="F1-versus-openness plot from a curve CSV")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except Exception as exc:
        message = " ".join(str(exc).split())
        print(json.dumps({"error": type(exc).__name__, "message": message}), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
