"""Training losses (masked MSE, FFT amplitude loss) and the NMSE metric."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import torch

from src.errors import NumericalError, ShapeError
from src.models import LossBreakdown
from src.utils import to_db


def _as_batch(t: torch.Tensor) -> torch.Tensor:
    return t.unsqueeze(0) if t.dim() == 3 else t


def _omega_map(omega: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Normalize Ω to a (B, H, W) bool map; True marks a masked position."""
    omega = omega.to(like.device).bool()
    while omega.dim() < 3:
        omega = omega.unsqueeze(0)
    if omega.dim() == 4:
        omega = omega[:, 0]
    return omega.expand(like.shape[0], -1, -1)


def masked_mse(u_hat: torch.Tensor, u_true: torch.Tensor, omega: torch.Tensor) -> torch.Tensor:
    """Mean over Ω of the squared L2 norm of the channel difference vector, batch-averaged.

    ``omega`` is a bool map (True = masked) of shape (H, W), (B, H, W) or
    (B, 1, H, W); use ``flags < 0.5`` to derive it from E_flag.
    """
    u_hat, u_true = _as_batch(u_hat), _as_batch(u_true)
    if u_hat.shape != u_true.shape:
        raise ShapeError(f"prediction {tuple(u_hat.shape)} and target {tuple(u_true.shape)} differ")
    masked = _omega_map(omega, u_hat)
    counts = masked.flatten(1).sum(dim=1)
    if bool((counts == 0).any()):
        raise NumericalError("masked MSE is undefined for an empty unobserved set")
    squared = (u_hat - u_true).pow(2).sum(dim=1)
    per_sample = (squared * masked.to(squared.dtype)).flatten(1).sum(dim=1) / counts.to(squared.dtype)
    return per_sample.mean()


def complex_planes(u: torch.Tensor) -> torch.Tensor:
    """Pair real channel c with imaginary channel c + M_t → (B, M_t, H, W) complex."""
    channels = u.shape[-3]
    if channels % 2:
        raise ShapeError(f"cannot pair {channels} channels into real/imaginary planes")
    m_t = channels // 2
    return torch.complex(u[..., :m_t, :, :], u[..., m_t:, :, :])


def fft_amplitude_loss(u_hat: torch.Tensor, u_true: torch.Tensor) -> torch.Tensor:
    """Mean squared difference of 2D DFT amplitude spectra over bins, planes and batch.

    ``torch.abs`` on a complex zero has subgradient 0.
    """
    u_hat, u_true = _as_batch(u_hat), _as_batch(u_true)
    if u_hat.shape != u_true.shape:
        raise ShapeError(f"prediction {tuple(u_hat.shape)} and target {tuple(u_true.shape)} differ")
    amp_hat = torch.fft.fft2(complex_planes(u_hat)).abs()
    amp_true = torch.fft.fft2(complex_planes(u_true)).abs()
    return (amp_hat - amp_true).pow(2).mean()


def total_loss(
    u_hat: torch.Tensor, u_true: torch.Tensor, omega: torch.Tensor, beta: float
) -> LossBreakdown:
    mse = masked_mse(u_hat, u_true, omega)
    fft = fft_amplitude_loss(u_hat, u_true)
    return LossBreakdown(mse=mse, fft=fft, total=mse + beta * fft, beta=beta)


def nmse(g_hat_set: Sequence[np.ndarray] | np.ndarray, g_set: Sequence[np.ndarray] | np.ndarray) -> float:
    """Σ‖g - ĝ‖² / Σ‖g‖² over a set of CSI matrices."""
    if len(g_hat_set) != len(g_set):
        raise ShapeError(f"{len(g_hat_set)} predictions for {len(g_set)} targets")
    error = 0.0
    power = 0.0
    for g_hat, g in zip(g_hat_set, g_set):
        g_hat = np.asarray(g_hat, dtype=np.complex128)
        g = np.asarray(g, dtype=np.complex128)
        if g_hat.shape != g.shape:
            raise ShapeError(f"prediction {g_hat.shape} and target {g.shape} differ")
        error += float(np.sum(np.abs(g - g_hat) ** 2))
        power += float(np.sum(np.abs(g) ** 2))
    if power <= 0.0:
        raise NumericalError("NMSE is undefined for zero-power targets")
    return error / power


def sample_nmse(g_hat_set: Sequence[np.ndarray] | np.ndarray, g_set: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """‖g - ĝ‖² / ‖g‖² for each CSI matrix of the set."""
    if len(g_hat_set) != len(g_set):
        raise ShapeError(f"{len(g_hat_set)} predictions for {len(g_set)} targets")
    values = np.empty(len(g_set), dtype=np.float64)
    for index, (g_hat, g) in enumerate(zip(g_hat_set, g_set)):
        values[index] = nmse([g_hat], [g])
    return values


def nmse_db(value: float) -> float:
    """NMSE in dB with a -100 dB floor for a perfect fit."""
    return to_db(value)
