"""Utility functions for seeding, hashing, parsing and formatting."""

from __future__ import annotations

import hashlib
import json
import math
from datetime import datetime
from typing import Any

import numpy as np
import torch

from src.constants import APERTURE_PRESETS_CM, NMSE_DB_FLOOR
from src.errors import ConfigError


def derive_seed(*keys: int) -> int:
    """Derive an independent 63-bit seed from a tuple of integer keys.

    Used for (master_seed, sample_index), (run_seed, epoch, batch) and so on so
    that results never depend on the order or number of workers.
    """
    sequence = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def numpy_rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*keys))


def torch_generator(*keys: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(*keys))
    return generator


def stable_hash(payload: Any, length: int = 16) -> str:
    """SHA-256 over canonical JSON, truncated to ``length`` hex characters."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:length]


def to_db(value: float, floor: float = NMSE_DB_FLOOR) -> float:
    """10·log10(value), clamped from below so a perfect fit stays printable."""
    if value <= 0:
        return floor
    return max(floor, 10.0 * math.log10(value))


def parse_pair(text: str, what: str, cast=float) -> tuple:
    """Parse ``AxB`` into a 2-tuple."""
    parts = text.lower().replace("×", "x").split("x")
    if len(parts) != 2:
        raise ConfigError(f"{what} must look like AxB, got {text!r}")
    try:
        return cast(parts[0]), cast(parts[1])
    except ValueError as exc:
        raise ConfigError(f"{what} must look like AxB, got {text!r}") from exc


def parse_grid(text: str) -> tuple[int, int]:
    """``32x16`` → (N_y, N_x)."""
    return parse_pair(text, "grid", int)


def parse_aperture(text: str) -> tuple[float, float]:
    """``2x4`` (cm) → (W_x, W_y); preset names are accepted too."""
    if text in APERTURE_PRESETS_CM:
        return APERTURE_PRESETS_CM[text]
    return parse_pair(text, "aperture", float)


def parse_number_list(text: str, cast=float) -> list:
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise ConfigError(f"expected a comma-separated list, got {text!r}")
    try:
        return [cast(item) for item in items]
    except ValueError as exc:
        raise ConfigError(f"invalid list entry in {text!r}") from exc


def format_nmse_cell(nmse_db: float) -> str:
    return f"{nmse_db:.2f}"


def utc_timestamp() -> str:
    return datetime.now().astimezone().isoformat(timespec="seconds")
