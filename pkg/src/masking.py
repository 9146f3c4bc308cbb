"""CSI tensor layout and random port masking.

Tensor layout: ``(2·M_t, N_y, N_x)``; channels ``0..M_t-1`` hold real parts
per BS antenna, ``M_t..2·M_t-1`` the imaginary parts. Position ``(y, x)``
holds flat port ``y * N_x + x``, the same order the correlation matrix uses.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import Literal

import numpy as np
import torch

from src.constants import DEFAULT_SENTINEL
from src.errors import ConfigError, ShapeError
from src.models import ChannelSample, MaskSpec, PortGrid


def tensorize(
    sample: ChannelSample | np.ndarray,
    grid: PortGrid,
    which: Literal["clean", "noisy"] = "clean",
) -> torch.Tensor:
    """Complex ``(..., N_s, M_t)`` CSI → real ``(..., 2·M_t, N_y, N_x)`` tensor."""
    if isinstance(sample, ChannelSample):
        g = sample.g_clean if which == "clean" else sample.g_noisy
        if g is None:
            raise ShapeError(f"channel sample has no {which} CSI")
    else:
        g = np.asarray(sample)
    if g.ndim < 2 or g.shape[-2] != grid.n_s:
        raise ShapeError(f"CSI shape {g.shape} does not match N_s={grid.n_s} ports")

    real_dtype = np.float64 if g.dtype == np.complex128 else np.float32
    m_t = g.shape[-1]
    planes = np.swapaxes(g, -1, -2).reshape(*g.shape[:-2], m_t, grid.n_y, grid.n_x)
    stacked = np.concatenate([planes.real, planes.imag], axis=-3).astype(real_dtype, copy=False)
    return torch.from_numpy(np.ascontiguousarray(stacked))


def detensorize(u_hat: torch.Tensor | np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`tensorize`."""
    if isinstance(u_hat, torch.Tensor):
        u_hat = u_hat.detach().cpu().numpy()
    if u_hat.ndim < 3 or u_hat.shape[-3] % 2:
        raise ShapeError(f"tensor shape {u_hat.shape} cannot be split into real/imaginary halves")
    m_t = u_hat.shape[-3] // 2
    n_y, n_x = u_hat.shape[-2:]
    planes = u_hat[..., :m_t, :, :] + 1j * u_hat[..., m_t:, :, :]
    return np.swapaxes(planes.reshape(*u_hat.shape[:-3], m_t, n_y * n_x), -1, -2)


def sample_mask(
    grid: PortGrid,
    observed_count: int,
    rng: np.random.Generator,
    sentinel: float = DEFAULT_SENTINEL,
) -> MaskSpec:
    """Observe exactly ``observed_count`` ports chosen uniformly without replacement."""
    if not 1 <= observed_count <= grid.n_s:
        raise ConfigError(f"observed_count must be in [1, {grid.n_s}], got {observed_count}")
    flat = np.zeros(grid.n_s, dtype=bool)
    flat[rng.choice(grid.n_s, size=observed_count, replace=False)] = True
    return MaskSpec(e_flag=flat.reshape(grid.n_y, grid.n_x), sentinel=sentinel)


def apply_mask(
    u: torch.Tensor, mask: MaskSpec | torch.Tensor, sentinel: float | None = None
) -> torch.Tensor:
    """Fill every channel at unobserved positions with the sentinel.

    ``mask`` is a MaskSpec or a 0/1 flag tensor broadcastable to ``u``
    (``(H, W)``, ``(1, H, W)`` or ``(B, 1, H, W)``).
    """
    if isinstance(mask, MaskSpec):
        flags = torch.from_numpy(mask.e_flag).to(u.device)
        fill = mask.sentinel if sentinel is None else sentinel
    else:
        flags = mask.to(u.device) > 0.5
        fill = DEFAULT_SENTINEL if sentinel is None else sentinel
    if flags.shape[-2:] != u.shape[-2:]:
        raise ShapeError(f"mask shape {tuple(flags.shape)} does not match tensor {tuple(u.shape)}")
    return torch.where(flags.bool(), u, torch.full_like(u, fill))


def observed_count_for_ratio(n_s: int, mask_ratio: float) -> int:
    """Number of observed ports for a masking ratio, kept within [1, N_s]."""
    return int(min(n_s, max(1, n_s - round(mask_ratio * n_s))))


def stack_flags(masks: Sequence[MaskSpec], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Batch of masks → ``(B, 1, H, W)`` flag tensor."""
    return torch.stack([mask.flag_tensor(dtype) for mask in masks])


def with_flag_channel(u_masked: torch.Tensor, flags: torch.Tensor) -> torch.Tensor:
    """Append E_flag as one extra input channel."""
    return torch.cat([u_masked, flags.to(u_masked.dtype)], dim=-3)
