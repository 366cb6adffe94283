"""Non-causal dilated 1-D convolution discriminator with per-sample scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nn import Module, uniform_init


def linear_dilations(n_layers: int, max_dilation: int) -> tuple[int, ...]:
    """Dilation 1 on the first and last layers, a rounded linear ramp 1..max in between."""
    if n_layers < 3:
        return (1,) * n_layers
    ramp = np.rint(np.linspace(1, max_dilation, n_layers - 2)).astype(int)
    return (1, *ramp.tolist(), 1)


@dataclass(frozen=True)
class DiscriminatorSpec:
    n_layers: int = 10
    channels: int = 64
    filter_size: int = 3
    dilations: tuple[int, ...] = linear_dilations(10, 8)
    leaky_alpha: float = 0.2

    def __post_init__(self):
        if len(self.dilations) != self.n_layers:
            raise ValueError(f"{self.n_layers} layers but {len(self.dilations)} dilations")
        if self.filter_size % 2 == 0:
            raise ValueError("filter_size must be odd for symmetric padding")

    @property
    def receptive_field(self) -> int:
        return 1 + (self.filter_size - 1) * sum(self.dilations)


class Discriminator(Module):
    def __init__(self, spec: DiscriminatorSpec, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.spec = spec
        K = spec.filter_size
        for i in range(spec.n_layers):
            cin = 1 if i == 0 else spec.channels
            cout = 1 if i == spec.n_layers - 1 else spec.channels
            self.add_param(f"conv{i}_w", uniform_init(rng, (K, cin, cout), K * cin))
            self.add_param(f"conv{i}_b", np.zeros(cout))

    def __call__(self, x) -> Tensor:
        """(B, T) waveform -> (B, T) raw scores, no output squashing."""
        x = ad.as_tensor(x)
        if x.ndim == 1:
            x = ad.reshape(x, (1, x.shape[0]))
        if x.size == 0:
            raise ShapeError("discriminator: empty input")
        B, T = x.shape
        h = ad.reshape(x, (B, T, 1))
        last = self.spec.n_layers - 1
        for i, d in enumerate(self.spec.dilations):
            h = ad.conv1d(h, self._params[f"conv{i}_w"], self._params[f"conv{i}_b"], dilation=d, padding="same")
            if i < last:
                h = ad.leaky_relu(h, self.spec.leaky_alpha)
        return ad.reshape(h, (B, T))


def score_mean(scores) -> Tensor:
    """Average per-sample scores over time: (B, T) -> (B,)."""
    scores = ad.as_tensor(scores)
    return ad.mean(scores, axis=-1)
