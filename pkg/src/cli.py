"""Command-line surface: gen, train, eval and plot subcommands."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from src.config import (
    RunConfig,
    apply_env_overrides,
    config_hash,
    load_run_config,
    run_config_from_dict,
)
from src.constants import EXIT_OK, SPLIT_NAMES
from src.errors import CanetError, ConfigError
from src.models import NmseRow
from src.network import load_checkpoint
from src.reporting import (
    format_nmse_table,
    plot_nmse,
    read_nmse_csv,
    render_html_report,
    write_nmse_csv,
)
from src.storage import Manifest, generate_dataset, load_manifest, load_split
from src.training import (
    Extrapolator,
    NetworkExtrapolator,
    OracleExtrapolator,
    ZeroExtrapolator,
    evaluate,
    resolve_device,
    train,
)
from src.utils import parse_aperture, parse_grid, parse_number_list


def _base_config(path: Path | None, target: str = "train") -> RunConfig:
    if path is not None:
        config = load_run_config(path)
        return apply_env_overrides(config, "dataset") if target == "dataset" else config
    return apply_env_overrides(RunConfig(), target)


def _with_dataset(config: RunConfig, manifest: Manifest) -> RunConfig:
    """Replace the dataset section with the one the dataset was generated from."""
    raw = manifest.config.get("dataset")
    if raw is None:
        return config
    dataset = run_config_from_dict({"dataset": raw}).dataset
    if dataset != config.dataset and config.dataset != RunConfig().dataset:
        logging.warning("Config dataset section differs from the dataset manifest; using the manifest")
    return dataclasses.replace(config, dataset=dataset)


def cmd_gen(args: argparse.Namespace) -> int:
    for split in SPLIT_NAMES:
        count = getattr(args, split)
        if count is not None and count <= 0:
            raise ConfigError(f"empty split: --{split} must be positive, got {count}")
    config = _base_config(args.config, "dataset")
    changes = {
        name: getattr(args, name)
        for name in ("train", "val", "test", "m_t", "delta", "freq_ghz")
        if getattr(args, name) is not None
    }
    if args.grid is not None:
        changes["n_y"], changes["n_x"] = parse_grid(args.grid)
    if args.aperture is not None:
        changes["w_x_cm"], changes["w_y_cm"] = parse_aperture(args.aperture)
    if args.seed is not None:
        changes["master_seed"] = args.seed
    config = config.replace("dataset", **changes)
    for split, count in config.dataset.split_sizes().items():
        if count <= 0:
            raise ConfigError(f"empty split: {split} has {count} samples")

    manifest = generate_dataset(config, args.out, workers=args.workers, force=args.force)
    grid = manifest.grid
    print(f"dataset   {args.out}")
    print(f"grid      {grid.n_y}x{grid.n_x} ports, M_t={manifest.m_t}, wavelength={grid.wavelength:.6f} m")
    print("samples   " + ", ".join(f"{name}={entry['count']}" for name, entry in manifest.splits.items()))
    print(f"hash      {manifest.config_hash}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.dataset)
    config = _with_dataset(_base_config(args.config), manifest)

    optim = {
        key: value
        for key, value in (
            ("epochs", args.epochs),
            ("batch_size", args.batch_size),
            ("learning_rate", args.lr),
            ("lr_schedule", args.lr_schedule),
            ("grad_clip", args.grad_clip),
        )
        if value is not None
    }
    train_changes = {
        key: value
        for key, value in (
            ("ablation", args.ablation),
            ("seed", args.seed),
            ("device", args.device),
            ("workers", args.workers),
        )
        if value is not None
    }
    if args.snr is not None:
        train_changes["snrs_db"] = tuple(parse_number_list(args.snr, float))
    model = {
        key: value
        for key, value in (
            ("width_divisor", args.width_divisor),
            ("convnext_depth", args.convnext_depth),
            ("dropout", args.dropout),
            ("csca_flag_rule", args.csca_flag_rule),
        )
        if value is not None
    }
    if args.no_flag_channel:
        model["flag_channel"] = False
    if args.no_perturb:
        config = config.replace("perturb", enabled=False)
    config = config.replace("optim", **optim).replace("train", **train_changes).replace("model", **model)

    run_dir = args.runs_dir / config_hash(config)
    result = train(config, args.dataset, run_dir)
    print(f"run         {result.run_dir}")
    print(f"config      {result.config_hash} ({config.train.ablation})")
    print(f"checkpoint  {result.last_checkpoint}")
    if result.best_checkpoint is not None:
        print(f"best        {result.best_checkpoint}")
    if result.history:
        first, last = result.history[0], result.history[-1]
        print(f"loss        {first.total:.4e} -> {last.total:.4e} over {last.step} steps")
    return EXIT_OK


def _checkpoint_extrapolator(
    path: Path, manifest: Manifest, config_path: Path | None, device: str
) -> tuple[Extrapolator, RunConfig, str]:
    expected = None
    if config_path is not None:
        expected = config_hash(_with_dataset(load_run_config(config_path), manifest))
    checkpoint = load_checkpoint(path, expected_hash=expected)
    if checkpoint.arch.m_t != manifest.m_t:
        raise ConfigError(
            f"checkpoint {path} expects M_t={checkpoint.arch.m_t}, dataset has M_t={manifest.m_t}"
        )
    raw = checkpoint.metadata.get("config")
    config = run_config_from_dict(raw) if raw else RunConfig()
    if checkpoint.arch.flag_channel != config.model.flag_channel:
        raise ConfigError(f"checkpoint {path} architecture disagrees with its recorded config")
    target = resolve_device(device)
    checkpoint.model.to(target)
    label = "CANet-B" if config.is_ablation else "CANet"
    return NetworkExtrapolator(checkpoint.model, target), config, label


def cmd_eval(args: argparse.Namespace) -> int:
    sources = sum(bool(x) for x in (args.checkpoint, args.oracle, args.zero))
    if sources != 1:
        raise ConfigError("eval needs exactly one of --checkpoint, --oracle or --zero")
    manifest = load_manifest(args.dataset)
    split = load_split(args.dataset, args.split, manifest)

    if args.checkpoint is not None:
        extrapolator, config, label = _checkpoint_extrapolator(args.checkpoint, manifest, args.config, args.device)
    else:
        config = _base_config(args.config)
        extrapolator = OracleExtrapolator() if args.oracle else ZeroExtrapolator()
        label = "oracle" if args.oracle else "zero"

    changes = {}
    if args.observed is not None:
        changes["observed_counts"] = tuple(parse_number_list(args.observed, int))
    if args.snr is not None:
        changes["snrs_db"] = tuple(parse_number_list(args.snr, float))
    for name in ("seed", "noise_placement", "batch_size"):
        if getattr(args, name) is not None:
            changes[name] = getattr(args, name)
    if args.overwrite_observed:
        changes["overwrite_observed"] = True
    eval_cfg = config.replace("eval", **changes).eval

    def run(extrapolator: Extrapolator, flag_channel: bool) -> list[NmseRow]:
        return evaluate(
            extrapolator,
            split,
            eval_cfg.observed_counts,
            eval_cfg.snrs_db,
            eval_cfg.seed,
            grid=manifest.grid,
            sentinel=config.train.sentinel,
            noise_placement=eval_cfg.noise_placement,
            overwrite_observed=eval_cfg.overwrite_observed,
            flag_channel=flag_channel,
            batch_size=eval_cfg.batch_size,
            reduction=args.reduction,
        )

    tables = {label: run(extrapolator, config.model.flag_channel)}
    if args.baseline is not None:
        baseline, baseline_config, baseline_label = _checkpoint_extrapolator(
            args.baseline, manifest, None, args.device
        )
        if baseline_label in tables:
            baseline_label = f"{baseline_label} (baseline)"
        tables[baseline_label] = run(baseline, baseline_config.model.flag_channel)

    print(format_nmse_table(tables))
    if args.csv is not None:
        for index, (name, rows) in enumerate(tables.items()):
            path = args.csv if index == 0 else args.csv.with_name(f"{args.csv.stem}-baseline{args.csv.suffix}")
            count = write_nmse_csv(path, rows)
            logging.info("Wrote %d NMSE rows for %s to %s", count, name, path)
    figure = plot_nmse(args.plot, tables) if args.plot is not None else None
    if args.html is not None:
        grid = manifest.grid
        render_html_report(
            args.html,
            tables,
            title=f"NMSE on the {args.split} split",
            grid=f"{grid.n_y}x{grid.n_x}",
            m_t=manifest.m_t,
            config_hash=config_hash(config),
            figure=figure,
        )
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    labels = args.labels.split(",") if args.labels else [path.stem for path in args.csv]
    if len(labels) != len(args.csv):
        raise ConfigError(f"{len(labels)} labels for {len(args.csv)} tables")
    tables = {label: read_nmse_csv(path) for label, path in zip(labels, args.csv)}
    plot_nmse(args.out, tables, title=args.title)
    print(f"figure    {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fas-canet", description="FAS channel synthesis and CANet extrapolation")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="synthesize a channel dataset")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--config", type=Path)
    gen.add_argument("--train", type=int)
    gen.add_argument("--val", type=int)
    gen.add_argument("--test", type=int)
    gen.add_argument("--grid", help="port grid NyxNx, e.g. 32x16")
    gen.add_argument("--aperture", help="WxxWy in cm (e.g. 2x4) or a preset name")
    gen.add_argument("--freq-ghz", dest="freq_ghz", type=float)
    gen.add_argument("--m-t", dest="m_t", type=int)
    gen.add_argument("--delta", type=float)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--workers", type=int, default=1)
    gen.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    gen.set_defaults(handler=cmd_gen)

    tr = commands.add_parser("train", help="train CANet or CANet-B")
    tr.add_argument("--dataset", type=Path, required=True)
    tr.add_argument("--config", type=Path)
    tr.add_argument("--runs-dir", dest="runs_dir", type=Path, default=Path("runs"))
    tr.add_argument("--ablation", choices=["full", "canet-b"])
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--lr-schedule", dest="lr_schedule", choices=["constant", "cosine"])
    tr.add_argument("--grad-clip", dest="grad_clip", type=float)
    tr.add_argument("--dropout", type=float)
    tr.add_argument("--snr", help="comma-separated training SNRs in dB")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--device", choices=["cpu", "cuda", "auto"])
    tr.add_argument("--workers", type=int)
    tr.add_argument("--width-divisor", dest="width_divisor", type=int)
    tr.add_argument("--convnext-depth", dest="convnext_depth", type=int)
    tr.add_argument(
        "--csca-flag-rule", dest="csca_flag_rule", choices=["nearest", "maxpool"],
        help="how CSCA downsamples the observed-port map",
    )
    tr.add_argument("--no-flag-channel", dest="no_flag_channel", action="store_true")
    tr.add_argument("--no-perturb", dest="no_perturb", action="store_true")
    tr.set_defaults(handler=cmd_train)

    ev = commands.add_parser("eval", help="NMSE table over observed ports and SNR")
    ev.add_argument("--dataset", type=Path, required=True)
    ev.add_argument("--checkpoint", type=Path)
    ev.add_argument("--baseline", type=Path, help="second checkpoint evaluated side by side")
    ev.add_argument("--oracle", action="store_true", help="ground-truth predictor self-test")
    ev.add_argument("--zero", action="store_true", help="zero predictor self-test")
    ev.add_argument("--config", type=Path, help="check the checkpoint against this config's hash")
    ev.add_argument("--split", choices=list(SPLIT_NAMES), default="test")
    ev.add_argument("--observed", help="comma-separated observed port counts")
    ev.add_argument("--snr", help="comma-separated SNRs in dB")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--noise-placement", dest="noise_placement", choices=["input", "target", "both"])
    ev.add_argument("--overwrite-observed", dest="overwrite_observed", action="store_true")
    ev.add_argument("--batch-size", dest="batch_size", type=int)
    ev.add_argument(
        "--reduction", choices=["pooled", "median"], default="pooled",
        help="pooled NMSE over the split or the median of per-sample NMSE",
    )
    ev.add_argument("--device", choices=["cpu", "cuda", "auto"], default="cpu")
    ev.add_argument("--csv", type=Path)
    ev.add_argument("--plot", type=Path)
    ev.add_argument("--html", type=Path)
    ev.set_defaults(handler=cmd_eval)

    pl = commands.add_parser("plot", help="figure from one or two NMSE CSV tables")
    pl.add_argument("csv", type=Path, nargs="+")
    pl.add_argument("--out", type=Path, required=True)
    pl.add_argument("--labels", help="comma-separated curve labels")
    pl.add_argument("--title", default="NMSE vs observed ports")
    pl.set_defaults(handler=cmd_plot)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        return int(args.handler(args))
    except CanetError as exc:
        logging.debug("Command %s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
