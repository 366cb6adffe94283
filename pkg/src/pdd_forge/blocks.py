"""Gated dilated residual stacks and the conditioning upsampler."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nn import Module, uniform_init


@dataclass(frozen=True)
class ResidualStackSpec:
    n_layers: int
    n_cycles: int
    residual_channels: int
    skip_channels: int
    filter_size: int = 3
    causal: bool = True
    conditioning_channels: int = 80

    def __post_init__(self):
        if self.n_layers <= 0 or self.n_cycles <= 0 or self.n_layers % self.n_cycles:
            raise ValueError(f"n_layers ({self.n_layers}) must be a positive multiple of n_cycles ({self.n_cycles})")
        if self.filter_size % 2 == 0:
            raise ValueError(f"filter_size must be odd, got {self.filter_size}")

    @property
    def dilations(self) -> list[int]:
        per_cycle = self.n_layers // self.n_cycles
        return [2 ** (i % per_cycle) for i in range(self.n_layers)]

    @property
    def receptive_field(self) -> int:
        return 1 + (self.filter_size - 1) * sum(self.dilations)

    def to_record(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_record(cls, rec: dict[str, float]) -> "ResidualStackSpec":
        return cls(
            n_layers=int(rec["n_layers"]),
            n_cycles=int(rec["n_cycles"]),
            residual_channels=int(rec["residual_channels"]),
            skip_channels=int(rec["skip_channels"]),
            filter_size=int(rec["filter_size"]),
            causal=bool(rec["causal"]),
            conditioning_channels=int(rec["conditioning_channels"]),
        )


class ResidualStack(Module):
    """WaveNet body: 1x1 input projection, gated dilated layers, summed skips.

    Each layer computes tanh(filter) * sigmoid(gate) where both halves mix a
    dilated convolution of the running residual with a 1x1 projection of the
    conditioning features. The last layer has no residual projection since
    nothing consumes it.
    """

    def __init__(self, spec: ResidualStackSpec, rng: np.random.Generator, in_channels: int = 1):
        super().__init__()
        self.spec = spec
        R, S, K, C = spec.residual_channels, spec.skip_channels, spec.filter_size, spec.conditioning_channels
        self.add_param("in_w", uniform_init(rng, (1, in_channels, R), in_channels))
        self.add_param("in_b", np.zeros(R))
        for i in range(spec.n_layers):
            layer = Module()
            layer.add_param("conv_w", uniform_init(rng, (K, R, 2 * R), K * R))
            layer.add_param("conv_b", np.zeros(2 * R))
            if C:
                layer.add_param("cond_w", uniform_init(rng, (C, 2 * R), C))
            if i < spec.n_layers - 1:
                layer.add_param("res_w", uniform_init(rng, (R, R), R))
                layer.add_param("res_b", np.zeros(R))
            layer.add_param("skip_w", uniform_init(rng, (R, S), R))
            layer.add_param("skip_b", np.zeros(S))
            self.add_child(f"layer{i}", layer)

    @property
    def layers(self) -> list[Module]:
        return [self._children[f"layer{i}"] for i in range(self.spec.n_layers)]

    def __call__(self, x: Tensor, cond: Tensor | None = None) -> Tensor:
        """x: (B, T, in_channels), cond: (B, T, C) -> skip sum (B, T, skip_channels)."""
        spec = self.spec
        if cond is not None and cond.shape[:2] != x.shape[:2]:
            raise ShapeError(f"residual stack: waveform {x.shape} and condition {cond.shape} lengths differ")
        if cond is None and spec.conditioning_channels:
            raise ShapeError("residual stack: condition required")
        R = spec.residual_channels
        padding = "causal" if spec.causal else "same"
        p = self._params
        h = ad.conv1d(x, p["in_w"], p["in_b"], padding="valid")
        skips = None
        for layer, d in zip(self.layers, spec.dilations):
            lp = layer._params
            a = ad.conv1d(h, lp["conv_w"], lp["conv_b"], dilation=d, padding=padding)
            if cond is not None:
                a = a + cond @ lp["cond_w"]
            gated = ad.tanh(a[..., :R]) * ad.sigmoid(a[..., R:])
            s = gated @ lp["skip_w"] + lp["skip_b"]
            skips = s if skips is None else skips + s
            if "res_w" in lp:
                h = h + (gated @ lp["res_w"] + lp["res_b"])
        return skips


class GaussianHead(Module):
    """relu -> 1x1 -> relu -> 1x1 producing (mu, log_sigma) channels."""

    def __init__(self, channels: int, rng: np.random.Generator, zero_init: bool = False):
        super().__init__()
        self.add_param("w1", uniform_init(rng, (channels, channels), channels))
        self.add_param("b1", np.zeros(channels))
        w2 = np.zeros((channels, 2)) if zero_init else uniform_init(rng, (channels, 2), channels)
        self.add_param("w2", w2)
        self.add_param("b2", np.zeros(2))

    def __call__(self, skips: Tensor) -> tuple[Tensor, Tensor]:
        p = self._params
        h = ad.relu(ad.relu(skips) @ p["w1"] + p["b1"])
        out = h @ p["w2"] + p["b2"]
        return out[..., 0], out[..., 1]


def shift_right(x: Tensor) -> Tensor:
    """(B, T) -> (B, T, 1) delayed by one sample with a zero at t = 0."""
    T = x.shape[1]
    return ad.reshape(ad.pad(x, ((0, 0), (1, 0)))[:, :T], (x.shape[0], T, 1))


# ---------------------------------------------------------------- upsampler


@dataclass(frozen=True)
class UpsamplerSpec:
    scales: tuple[int, ...] = (2, 2, 2, 3, 5)
    kernel_sizes: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.scales or any(s < 1 for s in self.scales):
            raise ValueError(f"scales must be positive integers, got {self.scales}")
        if not self.kernel_sizes:
            object.__setattr__(self, "kernel_sizes", tuple(2 * s + 1 for s in self.scales))
        if len(self.kernel_sizes) != len(self.scales):
            raise ValueError("one kernel size per upsampling stage required")

    @property
    def total_scale(self) -> int:
        return int(np.prod(self.scales))

    def check_hop(self, hop: int) -> None:
        if self.total_scale != hop:
            raise ValueError(f"upsampling scales {list(self.scales)} multiply to {self.total_scale}, hop is {hop}")


class Upsampler(Module):
    """Nearest-neighbour repetition along time, then a single-channel 2-D
    convolution over the (time, band) image, once per stage.

    Edge padding plus kernels initialised to a normalised box keeps constant
    inputs constant at every stage.
    """

    def __init__(self, spec: UpsamplerSpec, hop: int | None = None):
        super().__init__()
        if hop is not None:
            spec.check_hop(hop)
        self.spec = spec
        for i, k in enumerate(spec.kernel_sizes):
            self.add_param(f"stage{i}_w", np.full((k, k), 1.0 / (k * k)))
            self.add_param(f"stage{i}_b", np.zeros(1))

    def __call__(self, mel: Tensor) -> Tensor:
        """(B, N_frame, bands) -> (B, N_frame * prod(scales), bands)."""
        h = mel
        for i, (s, k) in enumerate(zip(self.spec.scales, self.spec.kernel_sizes)):
            h = ad.repeat(h, s, axis=1)
            r = k // 2
            h = ad.pad(h, ((0, 0), (r, r), (r, r)), mode="edge")
            h = ad.conv2d(h, self._params[f"stage{i}_w"], self._params[f"stage{i}_b"], padding="valid")
        return h
