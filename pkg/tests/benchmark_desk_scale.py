#!/usr/bin/env python3
"""Desk-scale acceptance run: train CANet and CANet-B, check the trends, check reproducibility.

Run from the repository root:

    python tests/benchmark_desk_scale.py [--device auto] [--scale 0.25]

``--scale`` shrinks the sample counts for a quick smoke run; the pass/fail
thresholds are only meaningful at scale 1.
"""

import argparse
import shutil
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.config import DatasetConfig, EvalConfig, OptimConfig, RunConfig, TrainConfig  # noqa: E402
from src.network import load_checkpoint  # noqa: E402
from src.reporting import format_nmse_table, read_metrics  # noqa: E402
from src.storage import generate_dataset, load_split  # noqa: E402
from src.training import NetworkExtrapolator, evaluate, train  # noqa: E402

OBSERVED_COUNTS = (26, 51, 102, 256)
SNRS_DB = (0.0, 10.0, 20.0)


def desk_config(scale: float, device: str, ablation: str = "full") -> RunConfig:
    return RunConfig(
        dataset=DatasetConfig(
            train=max(32, int(4096 * scale)), val=max(8, int(512 * scale)), test=8, master_seed=2024
        ),
        optim=OptimConfig(batch_size=32, epochs=10),
        train=TrainConfig(ablation=ablation, snrs_db=SNRS_DB, seed=11, device=device, workers=0),
        eval=EvalConfig(observed_counts=OBSERVED_COUNTS, snrs_db=SNRS_DB, batch_size=64),
    )


def timed(label: str, fn, *args):
    start = time.perf_counter()
    result = fn(*args)
    print(f"   {label:<28} {time.perf_counter() - start:8.1f} s")
    return result


def validation_table(checkpoint: Path, dataset_dir: Path, config: RunConfig, reduction: str = "pooled"):
    loaded = load_checkpoint(checkpoint)
    return evaluate(
        NetworkExtrapolator(loaded.model),
        load_split(dataset_dir, "val"),
        OBSERVED_COUNTS,
        SNRS_DB,
        config.eval.seed,
        batch_size=config.eval.batch_size,
        reduction=reduction,
    )


def check(passed: bool, text: str) -> bool:
    print(f"   [{'PASS' if passed else 'FAIL'}] {text}")
    return passed


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--device", default="cpu", choices=["cpu", "cuda", "auto"])
    parser.add_argument("--scale", type=float, default=1.0)
    parser.add_argument("--keep", action="store_true", help="keep the scratch directory")
    args = parser.parse_args()
    warnings.simplefilter("ignore", RuntimeWarning)

    print("=" * 70)
    print("FAS-CANET Desk-Scale Acceptance Run")
    print("=" * 70)
    print()

    tmpdir = Path(tempfile.mkdtemp())
    results = []
    try:
        config = desk_config(args.scale, args.device)
        ablated_config = desk_config(args.scale, args.device, "canet-b")
        data = tmpdir / "data"

        print("Timings:")
        timed("dataset generation", generate_dataset, config, data)
        full = timed("CANet training", train, config, data, tmpdir / "full")
        ablated = timed("CANet-B training", train, ablated_config, data, tmpdir / "ablated")
        repeat = timed("CANet repeat training", train, config, data, tmpdir / "repeat")
        full_rows = timed("CANet validation", validation_table, full.last_checkpoint, data, config)
        ablated_rows = timed("CANet-B validation", validation_table, ablated.last_checkpoint, data, config)
        print()

        print(format_nmse_table({"CANet": full_rows, "CANet-B": ablated_rows}))
        print()

        print("Checks:")
        history = full.history
        initial = history[0].total
        final = float(np.mean([record.total for record in history if record.epoch == history[-1].epoch]))
        results.append(check(final < 0.5 * initial, f"final train loss {final:.4e} < 0.5 x initial {initial:.4e}"))

        at_256 = {row.snr_db: row.nmse for row in full_rows if row.observed_count == 256}
        results.append(
            check(
                all(value < 1.0 for value in at_256.values()),
                "NMSE at 256 observed ports beats the zero predictor at every SNR "
                + ", ".join(f"{snr:g} dB: {value:.3f}" for snr, value in sorted(at_256.items())),
            )
        )

        median_rows = timed("CANet per-sample medians", validation_table, full.last_checkpoint, data, config, "median")
        at_20 = [row.nmse for row in median_rows if row.snr_db == 20.0]
        results.append(
            check(
                all(later <= earlier for earlier, later in zip(at_20, at_20[1:])),
                "median per-sample NMSE non-increasing over observed ports at 20 dB "
                + " >= ".join(f"{v:.3f}" for v in at_20),
            )
        )

        init_full = train(config.replace("optim", epochs=0), data, tmpdir / "init-full")
        init_ablated = train(ablated_config.replace("optim", epochs=0), data, tmpdir / "init-ablated")
        a = load_checkpoint(init_full.last_checkpoint).model.state_dict()
        b = load_checkpoint(init_ablated.last_checkpoint).model.state_dict()
        results.append(
            check(all(torch.equal(a[name], b[name]) for name in a), "CANet and CANet-B start from identical parameters")
        )

        def strip(records):
            return [{k: v for k, v in record.items() if k != "wall_clock"} for record in records]

        same = strip(read_metrics(tmpdir / "full" / "metrics.jsonl")) == strip(
            read_metrics(tmpdir / "repeat" / "metrics.jsonl")
        )
        results.append(check(same, "repeat run reproduces the metrics history bitwise"))
        print()
    finally:
        if args.keep:
            print(f"Scratch directory kept at {tmpdir}")
        else:
            shutil.rmtree(tmpdir, ignore_errors=True)

    print("=" * 70)
    print(f"{sum(results)}/{len(results)} checks passed")
    print("=" * 70)
    return 0 if results and all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
