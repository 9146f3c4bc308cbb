"""Spatial amplitude perturbation of the masked input in the 2D DFT domain."""

from __future__ import annotations

import torch

from src.config import PerturbConfig


def conjugate_partner_index(height: int, width: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Index grids (rows, cols) of the bin ``(-k mod H, -l mod W)`` for every bin ``(k, l)``."""
    rows = (-torch.arange(height)) % height
    cols = (-torch.arange(width)) % width
    return rows[:, None].expand(height, width), cols[None, :].expand(height, width)


def perturbation_factors(
    shape: torch.Size | tuple[int, ...],
    cfg: PerturbConfig,
    generator: torch.Generator,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Real factor field ``1 + γ·ξ·b`` per plane, Hermitian-symmetric over (H, W).

    ``ξ = min(|N(0,1)|, 1)`` and ``b ~ Bernoulli(μ)`` per bin; the value drawn
    for the lexicographically smaller bin of each conjugate pair is copied to
    its partner so the inverse transform stays real.
    """
    height, width = shape[-2], shape[-1]
    xi = torch.randn(shape, generator=generator, dtype=torch.float64).abs().clamp_max(1.0)
    hit = torch.rand(shape, generator=generator, dtype=torch.float64) < cfg.mu
    factors = 1.0 + cfg.gamma * xi * hit.to(torch.float64)

    rows, cols = conjugate_partner_index(height, width)
    flat = torch.arange(height * width).reshape(height, width)
    canonical = flat <= rows * width + cols
    mirrored = factors[..., rows, cols]
    return torch.where(canonical, factors, mirrored).to(dtype)


def amplitude_perturb(u_masked: torch.Tensor, cfg: PerturbConfig, generator: torch.Generator) -> torch.Tensor:
    """Perturb DFT amplitudes of every (H, W) plane independently, phase untouched.

    ``z̃ = u - mean``, ``ẑ = IDFT(DFT(z̃) · factors) + mean``.
    """
    if not cfg.enabled:
        return u_masked
    mean = u_masked.mean(dim=(-2, -1), keepdim=True)
    centered = u_masked - mean
    spectrum = torch.fft.fft2(centered)
    factors = perturbation_factors(u_masked.shape, cfg, generator, u_masked.dtype).to(u_masked.device)
    restored = torch.fft.ifft2(spectrum * factors).real
    return restored + mean
