"""Data models for channel samples, masks, losses and metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import torch

from src.constants import DEFAULT_SENTINEL, SPEED_OF_LIGHT
from src.errors import ConfigError, ShapeError


@dataclass(frozen=True)
class PortGrid:
    """Geometry of the planar FAS port lattice and the carrier wavelength.

    Flat port index is row-major over (n_y, n_x): ``p = y * n_x + x``.
    """

    n_x: int
    n_y: int
    w_x: float
    w_y: float
    wavelength: float

    def __post_init__(self) -> None:
        if self.n_x < 2 or self.n_y < 2:
            raise ConfigError(
                f"invalid grid: need at least 2 ports per axis, got {self.n_y}x{self.n_x}"
            )
        for name in ("w_x", "w_y", "wavelength"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"invalid grid: {name} must be positive, got {value}")

    @classmethod
    def from_carrier(
        cls, n_y: int, n_x: int, w_x_cm: float, w_y_cm: float, freq_ghz: float
    ) -> PortGrid:
        """Build a grid from apertures in centimetres and a carrier in GHz."""
        if freq_ghz <= 0:
            raise ConfigError(f"carrier frequency must be positive, got {freq_ghz} GHz")
        return cls(
            n_x=n_x,
            n_y=n_y,
            w_x=w_x_cm / 100.0,
            w_y=w_y_cm / 100.0,
            wavelength=SPEED_OF_LIGHT / (freq_ghz * 1e9),
        )

    @property
    def n_s(self) -> int:
        return self.n_x * self.n_y

    @property
    def spacing(self) -> tuple[float, float]:
        """Port pitch along (x, y) in metres."""
        return self.w_x / (self.n_x - 1), self.w_y / (self.n_y - 1)

    def port_index(self, y: int, x: int) -> int:
        return y * self.n_x + x

    def port_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (y, x) lattice indices of every port in flat order."""
        ys, xs = np.divmod(np.arange(self.n_s), self.n_x)
        return ys, xs

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_x": self.n_x,
            "n_y": self.n_y,
            "w_x": self.w_x,
            "w_y": self.w_y,
            "wavelength": self.wavelength,
        }


@dataclass
class CorrelationModel:
    """Spatial correlation matrix J and, once decomposed, J = U diag(Λ) Uᵀ."""

    grid: PortGrid
    j_matrix: np.ndarray
    eigvecs: np.ndarray | None = None
    eigvals: np.ndarray | None = None

    @property
    def is_decomposed(self) -> bool:
        return self.eigvecs is not None and self.eigvals is not None

    def reconstruction_error(self) -> float:
        """Max-entry error of U diag(Λ) Uᵀ against J."""
        if not self.is_decomposed:
            raise ConfigError("correlation model has not been eigendecomposed")
        rebuilt = (self.eigvecs * self.eigvals) @ self.eigvecs.T
        return float(np.max(np.abs(rebuilt - self.j_matrix)))


@dataclass
class ChannelSample:
    """One user's CSI, ports × BS antennas, clean and (optionally) noisy."""

    g_clean: np.ndarray
    g_noisy: np.ndarray | None = None
    snr_db: float = math.inf
    delta: float = 1.0
    seed: int | None = None

    @property
    def n_s(self) -> int:
        return int(self.g_clean.shape[0])

    @property
    def m_t(self) -> int:
        return int(self.g_clean.shape[1])


@dataclass(frozen=True)
class MaskSpec:
    """Observed/unobserved flag map. ``e_flag`` is 1 where a port is observed."""

    e_flag: np.ndarray
    sentinel: float = DEFAULT_SENTINEL

    def __post_init__(self) -> None:
        if self.e_flag.ndim != 2:
            raise ShapeError(f"e_flag must be (N_y, N_x), got shape {self.e_flag.shape}")
        object.__setattr__(self, "e_flag", self.e_flag.astype(bool, copy=False))

    @property
    def omega(self) -> list[tuple[int, int]]:
        """Masked (y, x) positions in row-major order."""
        ys, xs = np.nonzero(~self.e_flag)
        return list(zip(ys.tolist(), xs.tolist()))

    @property
    def n_a(self) -> int:
        return int(self.e_flag.size - np.count_nonzero(self.e_flag))

    @property
    def observed_count(self) -> int:
        return int(np.count_nonzero(self.e_flag))

    def flag_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Flag map as a (1, N_y, N_x) tensor of 0/1."""
        return torch.from_numpy(self.e_flag.astype(np.float32)).to(dtype).unsqueeze(0)


@dataclass
class LossBreakdown:
    """Loss terms of one step; ``total = mse + beta * fft``."""

    mse: torch.Tensor
    fft: torch.Tensor
    total: torch.Tensor
    beta: float

    def as_floats(self) -> dict[str, float]:
        return {
            "total": float(self.total.detach()),
            "mse": float(self.mse.detach()),
            "fft": float(self.fft.detach()),
            "beta": float(self.beta),
        }


@dataclass
class CsiBatch:
    """Network-ready batch.

    ``inputs`` is the masked (and possibly perturbed) tensor with the optional
    flag channel appended, ``observed`` is the unmasked input before sentinel
    fill, ``targets`` is what the loss and NMSE score against.
    """

    inputs: torch.Tensor
    flags: torch.Tensor
    targets: torch.Tensor
    observed: torch.Tensor
    seeds: list[int] = field(default_factory=list)
    snr_db: float = math.inf

    def to(self, device: torch.device | str) -> CsiBatch:
        return CsiBatch(
            inputs=self.inputs.to(device),
            flags=self.flags.to(device),
            targets=self.targets.to(device),
            observed=self.observed.to(device),
            seeds=self.seeds,
            snr_db=self.snr_db,
        )


@dataclass(frozen=True)
class MetricsRecord:
    """One line of the step log."""

    step: int
    epoch: int
    total: float
    mse: float
    fft: float
    beta: float
    perturbed: bool
    snr_db: float
    batch_seed: int
    wall_clock: float
    val_nmse: dict[str, float] | None = None

    def to_dict(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "step": self.step,
            "epoch": self.epoch,
            "total": self.total,
            "mse": self.mse,
            "fft": self.fft,
            "beta": self.beta,
            "perturbed": self.perturbed,
            "snr_db": self.snr_db,
            "batch_seed": self.batch_seed,
            "wall_clock": self.wall_clock,
        }
        if self.val_nmse is not None:
            record["val_nmse"] = dict(self.val_nmse)
        return record


@dataclass(frozen=True)
class NmseRow:
    """One cell of the evaluation grid."""

    observed_count: int
    snr_db: float
    nmse: float
    nmse_db: float

    @property
    def key(self) -> str:
        return f"{self.observed_count}@{self.snr_db:g}dB"
