"""Training and evaluation loops for CANet and its CANet-B ablation."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Protocol

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from src import augmentation
from src.channel_model import apply_awgn
from src.config import PerturbConfig, RunConfig, config_hash, save_run_config
from src.constants import METRICS_NAME
from src.errors import ConfigError, DataError, NumericalAbort
from src.masking import (
    apply_mask,
    observed_count_for_ratio,
    sample_mask,
    stack_flags,
    tensorize,
    with_flag_channel,
)
from src.models import ChannelSample, CsiBatch, MaskSpec, MetricsRecord, NmseRow, PortGrid
from src.network import (
    ArchConfig,
    CANet,
    build_canet,
    layer_shape_trace,
    save_checkpoint,
)
from src.objectives import nmse, sample_nmse, total_loss
from src.reporting import MetricsLog, make_row
from src.storage import Manifest, Shard, load_manifest, load_split
from src.utils import derive_seed, numpy_rng, torch_generator

NoisePlacement = Literal["input", "target", "both"]
NmseReduction = Literal["pooled", "median"]


def snr_key(snr_db: float) -> int:
    """Integer seed key for an SNR value (milli-dB; +inf maps to a fixed key)."""
    if math.isinf(snr_db):
        return 2**31 - 1
    return int(round(snr_db * 1000))


def split_noise(sample: ChannelSample, placement: NoisePlacement) -> tuple[np.ndarray, np.ndarray]:
    """Return (observed CSI, target CSI) for a sample that already carries noise."""
    noisy = sample.g_noisy if sample.g_noisy is not None else sample.g_clean
    if placement == "input":
        return noisy, sample.g_clean
    if placement == "target":
        return sample.g_clean, noisy
    return noisy, noisy


def assemble_batch(
    observed: np.ndarray,
    targets: np.ndarray,
    masks: Sequence[MaskSpec],
    grid: PortGrid,
    *,
    flag_channel: bool,
    seeds: Sequence[int] = (),
    snr_db: float = math.inf,
    perturb: PerturbConfig | None = None,
    generator: torch.Generator | None = None,
) -> CsiBatch:
    """Complex (B, N_s, M_t) observed/target CSI plus masks → network-ready batch."""
    u_observed = tensorize(observed.astype(np.complex64), grid)
    u_target = tensorize(targets.astype(np.complex64), grid)
    flags = stack_flags(masks)
    u_masked = apply_mask(u_observed, flags, masks[0].sentinel)
    if perturb is not None:
        u_masked = augmentation.amplitude_perturb(u_masked, perturb, generator)
    inputs = with_flag_channel(u_masked, flags) if flag_channel else u_masked
    return CsiBatch(
        inputs=inputs,
        flags=flags,
        targets=u_target,
        observed=u_observed,
        seeds=[int(s) for s in seeds],
        snr_db=snr_db,
    )


class TrainingBatches(Dataset):
    """One item per batch of an epoch; every batch draws from its own derived seed.

    The batch at ``(seed, epoch, index)`` is identical whether it is built in
    the main process or in a DataLoader worker.
    """

    def __init__(self, shard: Shard, grid: PortGrid, config: RunConfig, epoch: int) -> None:
        self.shard = shard
        self.grid = grid
        self.config = config
        self.epoch = epoch
        self.batch_size = config.optim.batch_size
        order_rng = numpy_rng(config.train.seed, epoch)
        self.order = order_rng.permutation(len(shard))

    def __len__(self) -> int:
        return math.ceil(len(self.order) / self.batch_size)

    def batch_seed(self, index: int) -> int:
        return derive_seed(self.config.train.seed, self.epoch, index)

    def __getitem__(self, index: int) -> CsiBatch:
        cfg = self.config
        rng = np.random.default_rng(self.batch_seed(index))
        members = self.order[index * self.batch_size : (index + 1) * self.batch_size]
        snr_db = float(rng.choice(np.asarray(cfg.train.snrs_db, dtype=np.float64)))
        low, high = cfg.train.mask_ratio_band

        observed, targets, masks = [], [], []
        for member in members:
            clean = ChannelSample(g_clean=self.shard.g_clean[member], delta=self.shard.header.delta)
            g_obs, g_target = split_noise(apply_awgn(clean, snr_db, rng), cfg.eval.noise_placement)
            observed.append(g_obs)
            targets.append(g_target)
            count = observed_count_for_ratio(self.grid.n_s, rng.uniform(low, high))
            masks.append(sample_mask(self.grid, count, rng, cfg.train.sentinel))

        return assemble_batch(
            np.stack(observed),
            np.stack(targets),
            masks,
            self.grid,
            flag_channel=cfg.model.flag_channel,
            seeds=self.shard.seeds[members],
            snr_db=snr_db,
            perturb=cfg.perturb if cfg.perturb_active else None,
            generator=torch_generator(cfg.train.seed, self.epoch, index, 1),
        )


class Extrapolator(Protocol):
    def __call__(self, batch: CsiBatch) -> torch.Tensor: ...


@dataclass
class NetworkExtrapolator:
    model: CANet
    device: torch.device = field(default_factory=lambda: torch.device("cpu"))

    def __call__(self, batch: CsiBatch) -> torch.Tensor:
        self.model.eval()
        batch = batch.to(self.device)
        with torch.no_grad():
            return self.model(batch.inputs, batch.flags).cpu()


class OracleExtrapolator:
    """Returns the target itself; the harness must report zero NMSE."""

    def __call__(self, batch: CsiBatch) -> torch.Tensor:
        return batch.targets.clone()


class ZeroExtrapolator:
    """Predicts all-zero CSI; the harness must report NMSE 1 (0 dB)."""

    def __call__(self, batch: CsiBatch) -> torch.Tensor:
        return torch.zeros_like(batch.targets)


def evaluate(
    extrapolator: Extrapolator,
    split: Shard,
    observed_counts: Sequence[int],
    snrs: Sequence[float],
    seed: int,
    *,
    grid: PortGrid | None = None,
    sentinel: float = -10.0,
    noise_placement: NoisePlacement = "input",
    overwrite_observed: bool = False,
    flag_channel: bool = True,
    batch_size: int = 64,
    reduction: NmseReduction = "pooled",
) -> list[NmseRow]:
    """NMSE over the whole split for every (observed_count, snr) pair.

    ``pooled`` divides the summed error by the summed power of the split;
    ``median`` takes the median of the per-sample NMSE.

    Masks depend on ``(seed, observed_count, sample)`` and noise on
    ``(seed, sample seed, snr)``, so every cell sees the same channels and
    repeated calls give the same table.
    """
    grid = grid or split.header.grid()
    if len(split) == 0:
        raise DataError("cannot evaluate on an empty split")
    if reduction not in ("pooled", "median"):
        raise ConfigError(f"unknown NMSE reduction {reduction!r}")
    for count in observed_counts:
        if not 1 <= count <= grid.n_s:
            raise ConfigError(f"observed_count {count} is outside [1, {grid.n_s}]")

    rows: list[NmseRow] = []
    for count in observed_counts:
        masks = [
            sample_mask(grid, count, numpy_rng(seed, count, index), sentinel)
            for index in range(len(split))
        ]
        for snr_db in snrs:
            predictions: list[np.ndarray] = []
            references: list[np.ndarray] = []
            for start in range(0, len(split), batch_size):
                stop = min(start + batch_size, len(split))
                observed, targets = [], []
                for index in range(start, stop):
                    sample_seed = int(split.seeds[index])
                    clean = ChannelSample(g_clean=split.g_clean[index], delta=split.header.delta)
                    rng = numpy_rng(seed, sample_seed, snr_key(snr_db))
                    g_obs, g_target = split_noise(apply_awgn(clean, snr_db, rng), noise_placement)
                    observed.append(g_obs)
                    targets.append(g_target)
                targets_arr = np.stack(targets).astype(np.complex64)
                batch = assemble_batch(
                    np.stack(observed),
                    targets_arr,
                    masks[start:stop],
                    grid,
                    flag_channel=flag_channel,
                    seeds=split.seeds[start:stop],
                    snr_db=snr_db,
                )
                u_hat = extrapolator(batch).detach().cpu().to(batch.observed.dtype)
                if overwrite_observed:
                    u_hat = torch.where(batch.flags > 0.5, batch.observed, u_hat)
                predictions.extend(_to_complex(u_hat, grid))
                references.extend(targets_arr)
            if reduction == "median":
                value = float(np.median(sample_nmse(predictions, references)))
            else:
                value = nmse(predictions, references)
            rows.append(make_row(count, snr_db, value))
            logging.debug("NMSE observed=%d snr=%g dB: %.3e", count, snr_db, value)
    return rows


def _to_complex(u_hat: torch.Tensor, grid: PortGrid) -> list[np.ndarray]:
    m_t = u_hat.shape[1] // 2
    planes = u_hat[:, :m_t].numpy() + 1j * u_hat[:, m_t:].numpy()
    return list(np.swapaxes(planes.reshape(u_hat.shape[0], m_t, grid.n_s), 1, 2))


@dataclass
class TrainResult:
    run_dir: Path
    config_hash: str
    last_checkpoint: Path
    best_checkpoint: Path | None
    history: list[MetricsRecord]
    best_val_nmse: float | None = None


def resolve_device(name: str) -> torch.device:
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    if name == "cuda" and not torch.cuda.is_available():
        raise ConfigError("train.device is cuda but no CUDA device is available")
    return torch.device(name)


def arch_for(config: RunConfig, m_t: int) -> ArchConfig:
    model = config.model
    return ArchConfig.reference(
        m_t=m_t,
        flag_channel=model.flag_channel,
        dropout=model.dropout,
        width_divisor=model.width_divisor,
        convnext_depth=model.convnext_depth,
        csca_patch=model.csca_patch,
        csca_softmax_scale=model.csca_softmax_scale,
        csca_flag_rule=model.csca_flag_rule,
    )


def _validation_counts(config: RunConfig, grid: PortGrid) -> list[int]:
    counts = [count for count in config.eval.observed_counts if count <= grid.n_s]
    return counts or [observed_count_for_ratio(grid.n_s, sum(config.train.mask_ratio_band) / 2)]


def _write_nan_dump(run_dir: Path, payload: dict) -> Path:
    path = run_dir / "nan_dump.json"
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str), encoding="utf-8")
    except OSError:
        logging.exception("Failed to write NaN diagnostic dump %s", path)
    return path


def train(config: RunConfig, dataset_dir: Path, run_dir: Path) -> TrainResult:
    """Train CANet (or CANet-B) on the dataset's train split.

    Writes ``config.json``, ``metrics.jsonl`` and checkpoints
    (``epoch-NNN.ckpt``, ``best.ckpt``, ``last.ckpt``) into ``run_dir``.
    """
    manifest: Manifest = load_manifest(dataset_dir)
    train_shard = load_split(dataset_dir, "train", manifest)
    if len(train_shard) == 0:
        raise DataError(f"dataset {dataset_dir} has an empty train split")
    val_shard = load_split(dataset_dir, "val", manifest) if manifest.splits.get("val", {}).get("count") else None
    grid = manifest.grid

    run_hash = config_hash(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_run_config(config, run_dir / "config.json")

    arch = arch_for(config, manifest.m_t)
    model = build_canet(arch, config.train.seed)
    for entry in layer_shape_trace(model, grid.n_y, grid.n_x):
        logging.debug(
            "layer %2d %-11s %s -> %s x%d", entry.index, entry.kind, entry.in_size, entry.out_size, entry.out_channels
        )
    device = resolve_device(config.train.device)
    model.to(device)
    torch.manual_seed(derive_seed(config.train.seed, 0xD0))

    optim = config.optim
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=optim.learning_rate, betas=optim.betas, weight_decay=optim.weight_decay
    )
    steps_per_epoch = math.ceil(len(train_shard) / optim.batch_size)
    scheduler = (
        torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=max(1, optim.epochs * steps_per_epoch))
        if optim.lr_schedule == "cosine"
        else None
    )

    def metadata(epoch: int, step: int, val: float | None) -> dict:
        return {
            "config_hash": run_hash,
            "dataset_hash": manifest.config_hash,
            "ablation": config.train.ablation,
            "epoch": epoch,
            "step": step,
            "val_nmse": val,
            "grid": [grid.n_y, grid.n_x],
            "m_t": manifest.m_t,
            "config": config.to_dict(),
        }

    last_path = run_dir / "last.ckpt"
    best_path: Path | None = None
    best_val: float | None = None
    history: list[MetricsRecord] = []
    logging.info(
        "Training %s run %s: %d samples, %d epochs, %d steps/epoch on %s",
        config.train.ablation, run_hash, len(train_shard), optim.epochs, steps_per_epoch, device,
    )

    if optim.epochs == 0:
        save_checkpoint(last_path, model, metadata(0, 0, None))
        return TrainResult(run_dir, run_hash, last_path, None, history)

    started = time.perf_counter()
    step = 0
    with MetricsLog(run_dir / METRICS_NAME) as log:
        for epoch in range(optim.epochs):
            batches = TrainingBatches(train_shard, grid, config, epoch)
            loader = DataLoader(batches, batch_size=None, shuffle=False, num_workers=config.train.workers)
            pending: MetricsRecord | None = None
            for index, batch in enumerate(loader):
                batch_seed = batches.batch_seed(index)
                batch = batch.to(device)
                model.train()
                u_hat = model(batch.inputs, batch.flags)
                losses = total_loss(u_hat, batch.targets, batch.flags < 0.5, config.effective_beta)
                if not bool(torch.isfinite(losses.total)):
                    dump = _write_nan_dump(
                        run_dir,
                        {
                            "batch_seed": batch_seed,
                            "epoch": epoch,
                            "batch": index,
                            "step": step,
                            "snr_db": batch.snr_db,
                            "sample_seeds": batch.seeds,
                            "losses": losses.as_floats(),
                        },
                    )
                    logging.error("Non-finite loss at step %d (batch seed %d); dump at %s", step, batch_seed, dump)
                    raise NumericalAbort(f"non-finite training loss at step {step}", batch_seed=batch_seed)

                optimizer.zero_grad(set_to_none=True)
                losses.total.backward()
                if optim.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), optim.grad_clip)
                optimizer.step()
                if scheduler is not None:
                    scheduler.step()
                step += 1

                if pending is not None:
                    log.write(pending)
                    history.append(pending)
                values = losses.as_floats()
                pending = MetricsRecord(
                    step=step,
                    epoch=epoch,
                    total=values["total"],
                    mse=values["mse"],
                    fft=values["fft"],
                    beta=values["beta"],
                    perturbed=config.perturb_active,
                    snr_db=batch.snr_db,
                    batch_seed=batch_seed,
                    wall_clock=time.perf_counter() - started,
                )
                if step % max(1, config.train.log_every) == 0:
                    logging.info(
                        "epoch %d step %d: total=%.4e mse=%.4e fft=%.4e", epoch, step,
                        values["total"], values["mse"], values["fft"],
                    )

            val_table: dict[str, float] | None = None
            score = pending.total if pending is not None else math.inf
            if val_shard is not None:
                rows = evaluate(
                    NetworkExtrapolator(model, device),
                    val_shard,
                    _validation_counts(config, grid),
                    config.eval.snrs_db,
                    config.eval.seed,
                    grid=grid,
                    sentinel=config.train.sentinel,
                    noise_placement=config.eval.noise_placement,
                    flag_channel=config.model.flag_channel,
                    batch_size=config.eval.batch_size,
                )
                val_table = {row.key: row.nmse for row in rows}
                score = float(np.mean([row.nmse for row in rows]))
                logging.info("epoch %d validation mean NMSE %.3e", epoch, score)
            if pending is not None:
                pending = dataclasses.replace(pending, val_nmse=val_table)
                log.write(pending)
                history.append(pending)

            meta = metadata(epoch + 1, step, score if val_shard is not None else None)
            save_checkpoint(run_dir / f"epoch-{epoch + 1:03d}.ckpt", model, meta)
            save_checkpoint(last_path, model, meta)
            if best_val is None or score < best_val:
                best_val = score
                best_path = save_checkpoint(run_dir / "best.ckpt", model, meta)

    logging.info("Finished run %s after %d steps; best score %.3e", run_hash, step, best_val)
    return TrainResult(
        run_dir=run_dir,
        config_hash=run_hash,
        last_checkpoint=last_path,
        best_checkpoint=best_path,
        history=history,
        best_val_nmse=best_val if val_shard is not None else None,
    )
