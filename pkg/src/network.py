"""CANet assembly (the 22-layer reference stack), shape tracing and checkpoint archives."""

from __future__ import annotations

import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from src.blocks import (
    BilinearUp,
    ContextAdaptiveBlock,
    ConvNeXtV2Block,
    CrossScaleContextualAttention,
    downsample_flags,
)
from src.constants import DEFAULT_DROPOUT, LEAKY_RELU_SLOPE
from src.errors import ConfigError, DataError, ShapeError

LayerKind = Literal["cab", "csca", "convnext", "bilinear_up", "conv"]
Nonlinearity = Literal["leaky_relu", "gelu", "none"]

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    out_channels: int
    kernel: int | None = None
    stride: int = 1
    nonlinearity: Nonlinearity = "none"


@dataclass(frozen=True)
class ArchConfig:
    in_channels: int
    out_channels: int
    layers: tuple[LayerSpec, ...]
    dropout: float = DEFAULT_DROPOUT
    csca_patch: int = 3
    csca_softmax_scale: float = 1.0
    csca_flag_rule: Literal["nearest", "maxpool"] = "nearest"

    def __post_init__(self) -> None:
        channels = self.in_channels
        for index, layer in enumerate(self.layers, start=1):
            if layer.kind in ("csca", "convnext", "bilinear_up") and layer.out_channels != channels:
                raise ConfigError(
                    f"inconsistent channel chain at layer {index} ({layer.kind}): "
                    f"{channels} in, {layer.out_channels} out"
                )
            if layer.kind == "csca" and channels % 2:
                raise ConfigError(f"layer {index}: CSCA needs an even channel count, got {channels}")
            channels = layer.out_channels
        if channels != self.out_channels:
            raise ConfigError(
                f"inconsistent channel chain: last layer emits {channels}, expected {self.out_channels}"
            )

    @classmethod
    def reference(
        cls,
        m_t: int = 8,
        flag_channel: bool = True,
        dropout: float = DEFAULT_DROPOUT,
        width_divisor: int = 1,
        convnext_depth: int = 10,
        csca_patch: int = 3,
        csca_softmax_scale: float = 1.0,
        csca_flag_rule: Literal["nearest", "maxpool"] = "nearest",
    ) -> ArchConfig:
        """The 22-layer CANet; ``width_divisor`` and ``convnext_depth`` shrink it for tests."""

        def width(channels: int) -> int:
            return max(2, 2 * (channels // width_divisor // 2))

        cab = lambda out, k, s=1: LayerSpec("cab", width(out), k, s, "leaky_relu")  # noqa: E731
        # layers 1-2 keep full resolution; layer 3 halves it
        layers = [
            cab(64, 5),
            cab(128, 3),
            cab(128, 3, 2),
            cab(256, 3),
            cab(256, 3),
            LayerSpec("csca", width(256)),
            *[LayerSpec("convnext", width(256), 7, 1, "gelu") for _ in range(convnext_depth)],
            LayerSpec("bilinear_up", width(256), None, 1),
            cab(128, 3),
            cab(128, 3),
            cab(64, 3),
            cab(64, 3),
            LayerSpec("conv", 2 * m_t, 7, 1, "none"),
        ]
        return cls(
            in_channels=2 * m_t + (1 if flag_channel else 0),
            out_channels=2 * m_t,
            layers=tuple(layers),
            dropout=dropout,
            csca_patch=csca_patch,
            csca_softmax_scale=csca_softmax_scale,
            csca_flag_rule=csca_flag_rule,
        )

    @property
    def m_t(self) -> int:
        return self.out_channels // 2

    @property
    def flag_channel(self) -> bool:
        return self.in_channels == self.out_channels + 1

    @property
    def downsample_factor(self) -> int:
        return math.prod(layer.stride for layer in self.layers if layer.kind == "cab")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> ArchConfig:
        try:
            layers = tuple(LayerSpec(**layer) for layer in raw["layers"])
            return cls(**{**raw, "layers": layers})
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed architecture description: {exc}") from exc


@dataclass(frozen=True)
class LayerTrace:
    index: int
    kind: str
    in_size: tuple[int, int]
    out_size: tuple[int, int]
    out_channels: int


class CANet(nn.Module):
    """Masked CSI tensor (+flag channel) → extrapolated CSI tensor."""

    def __init__(self, arch: ArchConfig) -> None:
        super().__init__()
        self.arch = arch
        self.layers = nn.ModuleList()
        channels = arch.in_channels
        for spec in arch.layers:
            self.layers.append(self._make_layer(spec, channels))
            channels = spec.out_channels

    def _make_layer(self, spec: LayerSpec, in_channels: int) -> nn.Module:
        match spec.kind:
            case "cab":
                return ContextAdaptiveBlock(in_channels, spec.out_channels, spec.kernel, spec.stride)
            case "csca":
                return CrossScaleContextualAttention(
                    in_channels, self.arch.csca_patch, self.arch.csca_softmax_scale, self.arch.csca_flag_rule
                )
            case "convnext":
                return ConvNeXtV2Block(in_channels, spec.kernel or 7, self.arch.dropout)
            case "bilinear_up":
                return BilinearUp(2)
            case "conv":
                kernel = spec.kernel or 3
                return nn.Conv2d(in_channels, spec.out_channels, kernel, padding=kernel // 2)
        raise ConfigError(f"unknown layer kind {spec.kind!r}")

    def run(
        self, x: torch.Tensor, flags: torch.Tensor, trace: list[LayerTrace] | None = None
    ) -> torch.Tensor:
        if x.shape[1] != self.arch.in_channels:
            raise ShapeError(f"CANet expects {self.arch.in_channels} input channels, got {x.shape[1]}")
        factor = self.arch.downsample_factor
        if x.shape[-2] % factor or x.shape[-1] % factor:
            raise ShapeError(
                f"spatial size {tuple(x.shape[-2:])} is not divisible by the downsampling factor {factor}"
            )
        flags = flags.to(x.dtype)
        for index, (spec, layer) in enumerate(zip(self.arch.layers, self.layers), start=1):
            in_size = tuple(x.shape[-2:])
            if spec.kind == "csca":
                x = layer(x, downsample_flags(flags, in_size, self.arch.csca_flag_rule))
            else:
                x = layer(x)
            if spec.nonlinearity == "leaky_relu":
                x = F.leaky_relu(x, LEAKY_RELU_SLOPE)
            if trace is not None:
                trace.append(LayerTrace(index, spec.kind, in_size, tuple(x.shape[-2:]), x.shape[1]))
        return x

    def forward(self, x: torch.Tensor, flags: torch.Tensor) -> torch.Tensor:
        return self.run(x, flags)


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        weight = module.weight
        fan_in = weight[0].numel()
        std = 1.0 / math.sqrt(fan_in)
        nn.init.trunc_normal_(weight, std=std, a=-2.0 * std, b=2.0 * std)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def build_canet(arch: ArchConfig, seed: int) -> CANet:
    """Instantiate CANet with deterministic fan-in scaled truncated-normal weights."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = CANet(arch)
        model.apply(_init_weights)
    logging.info(
        "Built CANet: %d layers, %d parameters, in=%d out=%d",
        len(arch.layers),
        sum(p.numel() for p in model.parameters()),
        arch.in_channels,
        arch.out_channels,
    )
    return model


def forward(
    model: CANet, u_masked: torch.Tensor, flags: torch.Tensor, training: bool = False
) -> torch.Tensor:
    """End-to-end mapping; accepts single (C,H,W) or batched inputs."""
    single = u_masked.dim() == 3
    if single:
        u_masked = u_masked.unsqueeze(0)
    while flags.dim() < 4:
        flags = flags.unsqueeze(0)
    if flags.shape[0] != u_masked.shape[0]:
        flags = flags.expand(u_masked.shape[0], -1, -1, -1)
    model.train(training)
    if training:
        out = model(u_masked, flags)
    else:
        with torch.no_grad():
            out = model(u_masked, flags)
    return out.squeeze(0) if single else out


def layer_shape_trace(model: CANet, n_y: int, n_x: int) -> list[LayerTrace]:
    """Record every layer's input and output size for an all-observed dummy input."""
    param = next(model.parameters())
    x = torch.zeros(1, model.arch.in_channels, n_y, n_x, dtype=param.dtype, device=param.device)
    flags = torch.ones(1, 1, n_y, n_x, dtype=param.dtype, device=param.device)
    trace: list[LayerTrace] = []
    was_training = model.training
    model.eval()
    with torch.no_grad():
        model.run(x, flags, trace)
    model.train(was_training)
    return trace


@dataclass
class Checkpoint:
    model: CANet
    arch: ArchConfig
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def config_hash(self) -> str | None:
        return self.metadata.get("config_hash")


def _write_member(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    archive.writestr(info, payload)


def save_checkpoint(path: Path, model: CANet, metadata: dict[str, Any]) -> Path:
    """Single zip: arch.json, metadata.json and one little-endian f32 blob per parameter."""
    state = model.state_dict()
    shapes = {name: list(tensor.shape) for name, tensor in state.items()}
    meta = {**metadata, "parameters": shapes}
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as archive:
        _write_member(archive, "arch.json", json.dumps(model.arch.to_dict(), indent=2, sort_keys=True).encode())
        _write_member(archive, "metadata.json", json.dumps(meta, indent=2, sort_keys=True).encode())
        for name, tensor in state.items():
            blob = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes()
            _write_member(archive, f"params/{name}.f32", blob)
    try:
        path.write_bytes(buffer.getvalue())
    except OSError as exc:
        logging.exception("Failed to write checkpoint %s", path)
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path: Path, expected_hash: str | None = None) -> Checkpoint:
    try:
        archive = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        logging.exception("Failed to open checkpoint %s", path)
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc

    with archive:
        try:
            arch = ArchConfig.from_dict(json.loads(archive.read("arch.json")))
            metadata = json.loads(archive.read("metadata.json"))
            model = CANet(arch)
            state = {}
            for name, shape in metadata["parameters"].items():
                blob = np.frombuffer(archive.read(f"params/{name}.f32"), dtype="<f4")
                state[name] = torch.from_numpy(blob.astype(np.float32).reshape(shape))
        except ConfigError:
            raise
        except (KeyError, ValueError) as exc:
            raise DataError(f"corrupt checkpoint {path}: {exc}") from exc

    if expected_hash is not None and metadata.get("config_hash") != expected_hash:
        raise ConfigError(
            f"checkpoint {path} was trained with config {metadata.get('config_hash')}, expected {expected_hash}"
        )
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint {path} does not match its architecture: {exc}") from exc
    model.eval()
    return Checkpoint(model=model, arch=arch, metadata=metadata)
