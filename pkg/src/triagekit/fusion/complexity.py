"""Parameter counts and multiply-accumulate estimates for a fusion model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .model import FusionModel


@dataclass(frozen=True)
class ComplexityReport:
    parameters: int
    macs_per_clip: int
    breakdown: tuple[tuple[str, int, int], ...]  # (layer, params, macs)

    def pretty(self) -> str:
        lines = [f"{'layer':<28}{'params':>12}{'MACs':>16}"]
        for name, p, m in self.breakdown:
            lines.append(f"{name:<28}{p:>12,}{m:>16,}")
        lines.append(f"{'total':<28}{self.parameters:>12,}{self.macs_per_clip:>16,}")
        lines.append(
            f"total parameters: {self.parameters:,} "
            f"({self.parameters / 1e6:.3f}M), "
            f"~{self.macs_per_clip / 1e9:.3f} GMACs per clip"
        )
        return "\n".join(lines)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _conv3d_out_shape(shape, conv: nn.Conv3d):
    t, h, w = shape
    kt, kh, kw = conv.kernel_size
    pt, ph, pw = conv.padding
    st, sh, sw = conv.stride
    return ((t + 2 * pt - kt) // st + 1,
            (h + 2 * ph - kh) // sh + 1,
            (w + 2 * pw - kw) // sw + 1)


def _pool_out_shape(shape, pool: nn.MaxPool3d):
    k = pool.kernel_size if isinstance(pool.kernel_size, tuple) else (pool.kernel_size,) * 3
    op = math.ceil if pool.ceil_mode else math.floor
    return tuple(int(op(s / kk)) for s, kk in zip(shape, k))


def complexity_report(model: FusionModel, clip_shape: tuple[int, int, int],
                      sensor_timesteps: int) -> ComplexityReport:
    """Exact parameter enumeration plus shape-derived MAC estimates.

    ``clip_shape`` is (T, H, W); MACs are for a single clip plus its sensor
    window through the enabled branches and the head.
    """
    rows = []

    def add(name, params, macs):
        rows.append((name, int(params), int(macs)))

    shape = clip_shape
    conv1, conv2 = model.video.conv1, model.video.conv2
    out1 = _conv3d_out_shape(shape, conv1)
    k1 = math.prod(conv1.kernel_size) * conv1.in_channels
    add("video.conv1", count_parameters(conv1), conv1.out_channels * math.prod(out1) * k1)
    pooled1 = _pool_out_shape(out1, model.video.pool)
    out2 = _conv3d_out_shape(pooled1, conv2)
    k2 = math.prod(conv2.kernel_size) * conv2.in_channels
    add("video.conv2", count_parameters(conv2), conv2.out_channels * math.prod(out2) * k2)
    proj = model.video.proj
    add("video.proj", count_parameters(proj), proj.in_features * proj.out_features)

    lstm = model.sensor.lstm
    h, d = lstm.hidden_size, lstm.input_size
    lstm_macs_per_step = 4 * h * (d + h)
    add("sensor.lstm", count_parameters(lstm), lstm_macs_per_step * sensor_timesteps)

    fc, out = model.head.fc, model.head.out
    add("head.fc", count_parameters(fc), fc.in_features * fc.out_features)
    add("head.out", count_parameters(out), out.in_features * out.out_features)

    total_params = count_parameters(model)
    assert total_params == sum(p for _, p, _ in rows), "layer walk missed parameters"
    total_macs = sum(m for _, _, m in rows)
    return ComplexityReport(parameters=total_params, macs_per_clip=total_macs,
                            breakdown=tuple(rows))


def linear_layer_parameters(n_in: int, n_out: int, bias: bool = True) -> int:
    """Closed form for a single linear layer, kept for cross-checking."""
    return n_in * n_out + (n_out if bias else 0)
