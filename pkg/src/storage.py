"""Dataset persistence: FASD binary shards and the JSON manifest.

Shard layout (all little-endian):

    header   magic "FASD" | version u32 | N_s u32 | M_t u32 | N_y u32 | N_x u32
             | count u32 | master seed u64 | wavelength f64 | w_x f64 | w_y f64
             | delta f64
    payload  count × (seed u64 | N_s·M_t complex values as interleaved re/im f32,
             port-major, antenna-minor)

Only clean channels are stored; noise is applied at load time so one dataset
serves every SNR sweep.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from src.channel_model import correlation_for_grid, sample_channel
from src.config import DatasetConfig, RunConfig, config_hash
from src.constants import (
    MANIFEST_NAME,
    SHARD_FORMAT_VERSION,
    SHARD_MAGIC,
    SHARD_SUFFIX,
    SPLIT_NAMES,
)
from src.errors import DataError
from src.models import CorrelationModel, PortGrid
from src.utils import derive_seed, utc_timestamp

HEADER_STRUCT = struct.Struct("<4sIIIIIIQdddd")
SEED_DTYPE = np.dtype("<u8")
VALUE_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class ShardHeader:
    n_s: int
    m_t: int
    n_y: int
    n_x: int
    count: int
    master_seed: int
    wavelength: float
    w_x: float
    w_y: float
    delta: float
    version: int = SHARD_FORMAT_VERSION

    @property
    def sample_bytes(self) -> int:
        return SEED_DTYPE.itemsize + self.n_s * self.m_t * 2 * VALUE_DTYPE.itemsize

    @property
    def payload_bytes(self) -> int:
        return self.count * self.sample_bytes

    def grid(self) -> PortGrid:
        return PortGrid(
            n_x=self.n_x, n_y=self.n_y, w_x=self.w_x, w_y=self.w_y, wavelength=self.wavelength
        )

    def pack(self) -> bytes:
        return HEADER_STRUCT.pack(
            SHARD_MAGIC,
            self.version,
            self.n_s,
            self.m_t,
            self.n_y,
            self.n_x,
            self.count,
            self.master_seed,
            self.wavelength,
            self.w_x,
            self.w_y,
            self.delta,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> ShardHeader:
        if len(raw) < HEADER_STRUCT.size:
            raise DataError("shard is shorter than its header")
        (magic, version, n_s, m_t, n_y, n_x, count, master_seed,
         wavelength, w_x, w_y, delta) = HEADER_STRUCT.unpack_from(raw)
        if magic != SHARD_MAGIC:
            raise DataError(f"bad shard magic {magic!r}")
        if version != SHARD_FORMAT_VERSION:
            raise DataError(f"unsupported shard format version {version}")
        if n_s != n_y * n_x:
            raise DataError(f"shard header grid {n_y}x{n_x} does not match N_s={n_s}")
        return cls(
            n_s=n_s, m_t=m_t, n_y=n_y, n_x=n_x, count=count, master_seed=master_seed,
            wavelength=wavelength, w_x=w_x, w_y=w_y, delta=delta, version=version,
        )


@dataclass
class Shard:
    header: ShardHeader
    seeds: np.ndarray
    g_clean: np.ndarray  # complex64, (count, N_s, M_t)

    def __len__(self) -> int:
        return self.header.count


@dataclass(frozen=True)
class Manifest:
    grid: PortGrid
    m_t: int
    delta: float
    master_seed: int
    splits: dict[str, dict[str, Any]]
    config: dict[str, Any]
    config_hash: str
    created_at: str

    @property
    def total_samples(self) -> int:
        return sum(int(entry["count"]) for entry in self.splits.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": "FASD",
            "version": SHARD_FORMAT_VERSION,
            "grid": self.grid.to_dict(),
            "m_t": self.m_t,
            "delta": self.delta,
            "master_seed": self.master_seed,
            "splits": self.splits,
            "total_samples": self.total_samples,
            "config": self.config,
            "config_hash": self.config_hash,
            "created_at": self.created_at,
        }


def write_shard(path: Path, header: ShardHeader, seeds: np.ndarray, g_clean: np.ndarray) -> None:
    """Write one shard; ``g_clean`` is (count, N_s, M_t) complex."""
    if g_clean.shape != (header.count, header.n_s, header.m_t) or len(seeds) != header.count:
        raise DataError(
            f"shard payload shape {g_clean.shape} does not match header "
            f"({header.count}, {header.n_s}, {header.m_t})"
        )
    record = np.dtype(
        [("seed", SEED_DTYPE), ("values", VALUE_DTYPE, (header.n_s, header.m_t, 2))]
    )
    payload = np.empty(header.count, dtype=record)
    payload["seed"] = np.asarray(seeds, dtype=np.uint64)
    payload["values"][..., 0] = g_clean.real
    payload["values"][..., 1] = g_clean.imag

    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with path.open("wb") as handle:
            handle.write(header.pack())
            handle.write(payload.tobytes())
    except OSError as exc:
        logging.exception("Failed to write shard %s", path)
        raise DataError(f"cannot write shard {path}: {exc}") from exc


def read_shard(path: Path) -> Shard:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        logging.exception("Failed to read shard %s", path)
        raise DataError(f"cannot read shard {path}: {exc}") from exc

    header = ShardHeader.unpack(raw)
    body = memoryview(raw)[HEADER_STRUCT.size:]
    if len(body) != header.payload_bytes:
        raise DataError(
            f"shard {path} payload is {len(body)} bytes, header implies {header.payload_bytes}"
        )
    if header.count == 0:
        empty = np.zeros((0, header.n_s, header.m_t), dtype=np.complex64)
        return Shard(header=header, seeds=np.zeros(0, dtype=np.uint64), g_clean=empty)
    record = np.dtype(
        [("seed", SEED_DTYPE), ("values", VALUE_DTYPE, (header.n_s, header.m_t, 2))]
    )
    payload = np.frombuffer(body, dtype=record, count=header.count)
    values = payload["values"]
    g_clean = (values[..., 0] + 1j * values[..., 1]).astype(np.complex64)
    return Shard(header=header, seeds=payload["seed"].astype(np.uint64), g_clean=g_clean)


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _draw_sample(corr: CorrelationModel, cfg: DatasetConfig, index: int) -> tuple[int, np.ndarray]:
    seed = derive_seed(cfg.master_seed, index)
    sample = sample_channel(corr, cfg.m_t, cfg.delta, np.random.default_rng(seed), seed=seed)
    return seed, sample.g_clean


def generate_dataset(
    config: RunConfig, out_dir: Path, *, workers: int = 1, force: bool = False
) -> Manifest:
    """Synthesize every split into ``out_dir`` and write the manifest.

    Sample ``i`` (numbered across splits in train/val/test order) always uses
    the seed derived from ``(master_seed, i)``, so the output does not depend
    on ``workers``.
    """
    cfg = config.dataset
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists() and not force:
        raise DataError(f"{out_dir} already contains a dataset; pass force to overwrite")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        logging.exception("Failed to create dataset directory %s", out_dir)
        raise DataError(f"cannot create {out_dir}: {exc}") from exc

    grid = cfg.grid()
    corr = correlation_for_grid(grid)
    logging.info(
        "Generating %d samples on a %dx%d grid (lambda=%.6f m, M_t=%d) with %d worker(s)",
        sum(cfg.split_sizes().values()), grid.n_y, grid.n_x, grid.wavelength, cfg.m_t, workers,
    )

    splits: dict[str, dict[str, Any]] = {}
    first_index = 0
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for split in SPLIT_NAMES:
            count = cfg.split_sizes()[split]
            indices = range(first_index, first_index + count)
            drawn = list(pool.map(lambda i: _draw_sample(corr, cfg, i), indices))
            seeds = np.array([seed for seed, _ in drawn], dtype=np.uint64)
            g_clean = (
                np.stack([g for _, g in drawn])
                if drawn
                else np.zeros((0, grid.n_s, cfg.m_t), dtype=np.complex64)
            )
            header = ShardHeader(
                n_s=grid.n_s, m_t=cfg.m_t, n_y=grid.n_y, n_x=grid.n_x, count=count,
                master_seed=cfg.master_seed, wavelength=grid.wavelength,
                w_x=grid.w_x, w_y=grid.w_y, delta=cfg.delta,
            )
            shard_path = out_dir / f"{split}{SHARD_SUFFIX}"
            write_shard(shard_path, header, seeds, g_clean)
            splits[split] = {
                "file": shard_path.name,
                "count": count,
                "first_index": first_index,
                "sha256": _file_digest(shard_path),
            }
            first_index += count

    manifest = Manifest(
        grid=grid,
        m_t=cfg.m_t,
        delta=cfg.delta,
        master_seed=cfg.master_seed,
        splits=splits,
        config={"dataset": config.to_dict()["dataset"]},
        config_hash=_dataset_hash(cfg),
        created_at=utc_timestamp(),
    )
    try:
        with manifest_path.open("w", encoding="utf-8") as handle:
            json.dump(manifest.to_dict(), handle, indent=2, sort_keys=True)
    except OSError as exc:
        logging.exception("Failed to write manifest %s", manifest_path)
        raise DataError(f"cannot write manifest {manifest_path}: {exc}") from exc
    logging.info("Wrote %d samples in %d splits to %s", manifest.total_samples, len(splits), out_dir)
    return manifest


def _dataset_hash(cfg: DatasetConfig) -> str:
    return config_hash(RunConfig(dataset=cfg))


def load_manifest(dataset_dir: Path) -> Manifest:
    """Read the manifest and check every listed shard against it."""
    manifest_path = dataset_dir / MANIFEST_NAME
    try:
        with manifest_path.open("r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except FileNotFoundError as exc:
        raise DataError(f"no dataset manifest at {manifest_path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        logging.exception("Failed to read manifest %s", manifest_path)
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc

    try:
        grid = PortGrid(**raw["grid"])
        manifest = Manifest(
            grid=grid,
            m_t=int(raw["m_t"]),
            delta=float(raw["delta"]),
            master_seed=int(raw["master_seed"]),
            splits=dict(raw["splits"]),
            config=dict(raw.get("config", {})),
            config_hash=str(raw["config_hash"]),
            created_at=str(raw.get("created_at", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed manifest {manifest_path}: {exc}") from exc

    for split, entry in manifest.splits.items():
        shard_path = dataset_dir / entry["file"]
        if not shard_path.exists():
            raise DataError(f"manifest lists missing shard {shard_path} for split {split}")
        with shard_path.open("rb") as handle:
            header = ShardHeader.unpack(handle.read(HEADER_STRUCT.size))
        if (header.n_y, header.n_x, header.m_t) != (grid.n_y, grid.n_x, manifest.m_t):
            raise DataError(
                f"shard {shard_path} grid {header.n_y}x{header.n_x}/M_t={header.m_t} "
                f"does not match manifest {grid.n_y}x{grid.n_x}/M_t={manifest.m_t}"
            )
    return manifest


def load_split(dataset_dir: Path, split: str, manifest: Manifest | None = None) -> Shard:
    manifest = manifest or load_manifest(dataset_dir)
    if split not in manifest.splits:
        raise DataError(f"dataset has no split {split!r}; available: {sorted(manifest.splits)}")
    shard = read_shard(dataset_dir / manifest.splits[split]["file"])
    if shard.header.count != int(manifest.splits[split]["count"]):
        raise DataError(f"split {split} has {shard.header.count} samples, manifest says {manifest.splits[split]['count']}")
    return shard
