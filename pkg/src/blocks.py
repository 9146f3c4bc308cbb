"""CANet building blocks: CAB, CSCA, GRN, ConvNeXt-v2 block, bilinear upsampling."""

from __future__ import annotations

import logging
import math
import warnings
from typing import Literal, NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from src.constants import GRN_EPS, LAYER_NORM_EPS
from src.errors import ConfigError, ShapeError


class CabBranches(NamedTuple):
    mask: torch.Tensor  # (B, 1, Ho, Wo), soft confidence m
    conv: torch.Tensor  # (B, C_out, Ho, Wo), x^c
    attention: torch.Tensor  # (B, C_out, Ho, Wo), x^a
    weights: torch.Tensor  # (B, k*k, Ho*Wo), softmax over the window


class ContextAdaptiveBlock(nn.Module):
    """Context adaptive block: soft-mask fusion of a conv and a local attention branch.

    The soft mask ``m = σ(w^m * x)`` is one scalar per position. Queries are
    scaled by the mask at the output position, keys and values by the mask at
    each neighbour, attention runs over the same k×k window the conv branch
    sees, and the output is ``m·x^c + (1-m)·x^a``.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        qk_channels: int | None = None,
    ) -> None:
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigError(f"CAB kernel size must be odd, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = kernel_size // 2
        self.qk_channels = qk_channels or max(out_channels // 8, 4)

        self.mask_conv = nn.Conv2d(in_channels, 1, kernel_size, padding=self.padding)
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size, stride=stride, padding=self.padding)
        self.query = nn.Conv2d(in_channels, self.qk_channels, 1, stride=stride)
        self.key = nn.Conv2d(in_channels, self.qk_channels, 1)
        self.value = nn.Conv2d(in_channels, out_channels, 1)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"CAB expects {self.in_channels} channels, got {x.shape[1]}")
        height, width = x.shape[-2:]
        if min(height, width) + 2 * self.padding < self.kernel_size:
            raise ShapeError(f"CAB kernel {self.kernel_size} larger than padded input {height}x{width}")

    def branches(self, x: torch.Tensor) -> CabBranches:
        self._check_input(x)
        batch, _, height, width = x.shape
        k, s, p = self.kernel_size, self.stride, self.padding

        m_full = torch.sigmoid(self.mask_conv(x))
        # stride-s conv with k//2 padding samples exactly positions 0, s, 2s, ...
        m_out = m_full[..., ::s, ::s]
        x_c = self.conv(x)
        out_h, out_w = x_c.shape[-2:]
        positions = out_h * out_w

        q = (self.query(x) * m_out).reshape(batch, self.qk_channels, 1, positions)
        keys = F.unfold(self.key(x) * m_full, k, padding=p, stride=s)
        keys = keys.reshape(batch, self.qk_channels, k * k, positions)
        values = F.unfold(self.value(x) * m_full, k, padding=p, stride=s)
        values = values.reshape(batch, self.out_channels, k * k, positions)

        inside = F.unfold(x.new_ones(1, 1, height, width), k, padding=p, stride=s) > 0.5
        logits = (q * keys).sum(dim=1) / math.sqrt(self.qk_channels)
        logits = logits.masked_fill(~inside, float("-inf"))
        weights = torch.softmax(logits, dim=1)

        x_a = (weights.unsqueeze(1) * values).sum(dim=2).reshape(batch, self.out_channels, out_h, out_w)
        return CabBranches(mask=m_out, conv=x_c, attention=x_a, weights=weights)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        parts = self.branches(x)
        return parts.mask * parts.conv + (1.0 - parts.mask) * parts.attention


def patch_similarity(
    patches: torch.Tensor, key_valid: torch.Tensor, softmax_scale: float = 1.0
) -> tuple[torch.Tensor, torch.Tensor]:
    """Cosine similarity between all patches and softmax over valid keys.

    ``patches`` is (B, D, L) as produced by ``F.unfold``; ``key_valid`` is a
    (B, L) bool map. Returns (similarity, weights), both (B, L_query, L_key).
    Samples with no valid key get uniform finite weights and must be masked
    out by the caller.
    """
    normed = F.normalize(patches, dim=1)
    similarity = normed.transpose(1, 2) @ normed
    has_key = key_valid.any(dim=1, keepdim=True)
    allowed = (key_valid | ~has_key).unsqueeze(1)
    logits = (similarity * softmax_scale).masked_fill(~allowed, float("-inf"))
    return similarity, torch.softmax(logits, dim=-1)


def patch_attention(
    x: torch.Tensor,
    flags: torch.Tensor,
    patch_size: int = 3,
    softmax_scale: float = 1.0,
) -> torch.Tensor:
    """Fill masked regions from fully observed patches at one scale.

    Queries are patches touching any flag-0 position, keys/values are patches
    lying entirely on flag-1 positions. Reconstructed query patches are folded
    back with overlap averaging; flag-1 positions pass through unchanged.
    """
    batch, channels, height, width = x.shape
    if patch_size > min(height, width):
        warnings.warn(
            f"CSCA patch {patch_size} exceeds feature size {height}x{width}; scale skipped",
            RuntimeWarning,
            stacklevel=2,
        )
        return x

    patches = F.unfold(x, patch_size)
    flag_patches = F.unfold(flags.to(x.dtype), patch_size)
    patch_min = flag_patches.min(dim=1).values
    key_valid = patch_min > 0.5
    is_query = patch_min < 0.5
    has_key = key_valid.any(dim=1)

    if not bool(has_key.all()):
        degenerate = int((~has_key).sum())
        logging.debug("CSCA: %d/%d samples have no fully observed patch", degenerate, batch)
        warnings.warn(
            "CSCA found no fully observed patch for some samples; those samples pass through unchanged",
            RuntimeWarning,
            stacklevel=2,
        )

    _, weights = patch_similarity(patches, key_valid, softmax_scale)
    rebuilt = (weights @ patches.transpose(1, 2)).transpose(1, 2)

    query_weight = is_query.to(x.dtype).unsqueeze(1)
    folded = F.fold(rebuilt * query_weight, (height, width), patch_size)
    coverage = F.fold(
        query_weight.expand(batch, patch_size * patch_size, -1).contiguous(),
        (height, width),
        patch_size,
    )
    filled = folded / coverage.clamp_min(1.0)

    keep = (flags > 0.5) | ~has_key.view(batch, 1, 1, 1)
    return torch.where(keep, x, filled)


FlagRule = Literal["nearest", "maxpool"]


def downsample_flags(flags: torch.Tensor, size: tuple[int, int], rule: FlagRule = "nearest") -> torch.Tensor:
    """Resize a 0/1 flag map: ``nearest`` keeps sampled ports, ``maxpool`` marks a cell observed if any port is."""
    if not flags.is_floating_point():
        flags = flags.float()
    if tuple(flags.shape[-2:]) == tuple(size):
        return flags
    if rule == "maxpool":
        return F.adaptive_max_pool2d(flags, size)
    return F.interpolate(flags, size=size, mode="nearest")


class CrossScaleContextualAttention(nn.Module):
    """Cross-scale contextual attention.

    Channels are halved, then one branch runs patch attention at full scale
    and the other on a bilinearly downsampled copy that is upsampled back.
    The coarse flags follow ``flag_rule``. The two halves are concatenated
    and fused by a 1×1 projection.
    """

    def __init__(
        self,
        channels: int,
        patch_size: int = 3,
        softmax_scale: float = 1.0,
        flag_rule: FlagRule = "nearest",
    ) -> None:
        super().__init__()
        if channels % 2:
            raise ConfigError(f"CSCA needs an even channel count, got {channels}")
        if flag_rule not in ("nearest", "maxpool"):
            raise ConfigError(f"unknown CSCA flag rule {flag_rule!r}")
        self.channels = channels
        self.patch_size = patch_size
        self.softmax_scale = softmax_scale
        self.flag_rule = flag_rule
        self.reduce = nn.Conv2d(channels, channels // 2, 1)
        self.fuse = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor, flags: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"CSCA expects {self.channels} channels, got {x.shape[1]}")
        if flags.shape[-2:] != x.shape[-2:]:
            raise ShapeError(f"CSCA flag map {tuple(flags.shape[-2:])} does not match features {tuple(x.shape[-2:])}")
        height, width = x.shape[-2:]
        reduced = self.reduce(x)
        same_scale = patch_attention(reduced, flags, self.patch_size, self.softmax_scale)

        half = (max(1, height // 2), max(1, width // 2))
        coarse = F.interpolate(reduced, size=half, mode="bilinear", align_corners=False)
        coarse_flags = downsample_flags(flags.to(x.dtype), half, self.flag_rule)
        coarse = patch_attention(coarse, coarse_flags, self.patch_size, self.softmax_scale)
        cross_scale = F.interpolate(coarse, size=(height, width), mode="bilinear", align_corners=False)

        return self.fuse(torch.cat([same_scale, cross_scale], dim=1))


def grn(
    x: torch.Tensor,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    eps: float = GRN_EPS,
    channels_last: bool = True,
) -> torch.Tensor:
    """Global response normalization: ``γ·(x·N) + β + x`` with N = G / mean_c(G)."""
    spatial_dim, channel_dim = ((1, 2), -1) if channels_last else ((2, 3), 1)
    shape = (1, 1, 1, -1) if channels_last else (1, -1, 1, 1)
    energy = x.norm(p=2, dim=spatial_dim, keepdim=True)
    normalized = energy / (energy.mean(dim=channel_dim, keepdim=True) + eps)
    return x + torch.addcmul(beta.view(shape), gamma.view(shape), x * normalized)


class GlobalResponseNorm(nn.Module):
    def __init__(self, dim: int, eps: float = GRN_EPS, channels_last: bool = True) -> None:
        super().__init__()
        self.eps = eps
        self.channels_last = channels_last
        self.weight = nn.Parameter(torch.zeros(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return grn(x, self.weight, self.bias, self.eps, self.channels_last)


class ConvNeXtV2Block(nn.Module):
    """Depthwise 7×7 → LayerNorm → 4× MLP with GELU and GRN → dropout → residual."""

    def __init__(self, dim: int, kernel_size: int = 7, dropout: float = 0.0) -> None:
        super().__init__()
        self.dim = dim
        self.dwconv = nn.Conv2d(dim, dim, kernel_size, padding=kernel_size // 2, groups=dim)
        self.norm = nn.LayerNorm(dim, eps=LAYER_NORM_EPS)
        self.pwconv1 = nn.Linear(dim, 4 * dim)
        self.act = nn.GELU()
        self.grn = GlobalResponseNorm(4 * dim)
        self.pwconv2 = nn.Linear(4 * dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.dim:
            raise ShapeError(f"ConvNeXt block expects {self.dim} channels, got {x.shape[1]}")
        shortcut = x
        x = self.dwconv(x).permute(0, 2, 3, 1)
        x = self.norm(x)
        x = self.pwconv1(x)
        x = self.act(x)
        x = self.grn(x)
        x = self.pwconv2(x)
        x = self.dropout(x)
        return shortcut + x.permute(0, 3, 1, 2)


def cab_forward(x: torch.Tensor, block: ContextAdaptiveBlock) -> torch.Tensor:
    return block(x)


def csca_forward(x: torch.Tensor, flags: torch.Tensor, block: CrossScaleContextualAttention) -> torch.Tensor:
    """Apply CSCA with a flag map at the feature resolution, (B, 1, H, W) or (H, W)."""
    while flags.dim() < 4:
        flags = flags.unsqueeze(0)
    return block(x, flags.expand(x.shape[0], -1, -1, -1))


def convnext_v2_block(x: torch.Tensor, block: ConvNeXtV2Block, training: bool) -> torch.Tensor:
    """Run ``block`` in train or eval mode (dropout active only in training)."""
    block.train(training)
    return block(x)


def bilinear_upsample(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """Bilinear resize by ``factor`` with corner alignment off; accepts (C,H,W) or (B,C,H,W)."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    out = F.interpolate(x, scale_factor=factor, mode="bilinear", align_corners=False)
    return out.squeeze(0) if squeeze else out


class BilinearUp(nn.Module):
    def __init__(self, factor: int = 2) -> None:
        super().__init__()
        self.factor = factor

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return bilinear_upsample(x, self.factor)
