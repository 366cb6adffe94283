"""Gaussian inverse-autoregressive-flow student."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .blocks import GaussianHead, ResidualStack, ResidualStackSpec, Upsampler, UpsamplerSpec, shift_right
from .dsp import AudioClip
from .nn import Module
from .teacher import LOG_SIGMA_FLOOR


@dataclass
class ComposedGaussian:
    mu: Tensor  # (B, T)
    log_sigma: Tensor  # (B, T)


class Flow(Module):
    """One affine IAF stage: z_out = mu(z_in<t) + sigma(z_in<t) * z_in.

    The output head starts at zero so a fresh flow is the identity map.
    """

    def __init__(self, spec: ResidualStackSpec, rng: np.random.Generator):
        super().__init__()
        if not spec.causal:
            raise ValueError("flow stacks must be causal")
        self.stack = self.add_child("stack", ResidualStack(spec, rng))
        self.head = self.add_child("head", GaussianHead(spec.skip_channels, rng, zero_init=True))

    def params_for(self, z_in: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        if cond.shape[:2] != z_in.shape:
            raise ShapeError(f"flow: input {z_in.shape} and condition {cond.shape} lengths differ")
        mu, log_sigma = self.head(self.stack(shift_right(z_in), cond))
        return mu, ad.clamp_min(log_sigma, LOG_SIGMA_FLOOR)

    def __call__(self, z_in: Tensor, cond: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (z_out, mu_i, log_sigma_i)."""
        mu, log_sigma = self.params_for(z_in, cond)
        return mu + ad.exp(log_sigma) * z_in, mu, log_sigma


class IAFStudent(Module):
    def __init__(
        self,
        flow_spec: ResidualStackSpec,
        n_flows: int,
        upsampler_spec: UpsamplerSpec,
        seed: int = 0,
    ):
        super().__init__()
        if n_flows < 1:
            raise ValueError("need at least one flow")
        rng = np.random.default_rng(seed)
        self.flow_spec = flow_spec
        self.n_flows = n_flows
        self.upsampler = self.add_child("upsampler", Upsampler(upsampler_spec))
        self.flows = [self.add_child(f"flow{i}", Flow(flow_spec, rng)) for i in range(n_flows)]
        self.network_passes = 0

    def init_from_teacher(self, teacher) -> None:
        """Copy the teacher's upsampler weights; flows keep their identity start."""
        self.upsampler.load_state_arrays(teacher.upsampler.state_arrays())

    def upsample(self, mel) -> Tensor:
        mel = ad.as_tensor(mel)
        if mel.ndim == 2:
            mel = ad.reshape(mel, (1,) + mel.shape)
        return self.upsampler(mel)

    def __call__(self, z, cond: Tensor) -> tuple[Tensor, ComposedGaussian]:
        """Transform noise to waveform through every flow in parallel over time.

        Returns x_hat together with the composed per-sample Gaussian
        q(x_hat_t | z_<t) = N(mu_q, sigma_q), so that x_hat = mu_q + sigma_q * z.
        """
        z = ad.as_tensor(z)
        if z.ndim == 1:
            z = ad.reshape(z, (1, z.shape[0]))
        h = z
        mu_q = None
        log_sigma_q = None
        for flow in self.flows:
            h, mu_i, log_sigma_i = flow(h, cond)
            self.network_passes += 1
            if mu_q is None:
                mu_q, log_sigma_q = mu_i, log_sigma_i
            else:
                mu_q = mu_i + ad.exp(log_sigma_i) * mu_q
                log_sigma_q = log_sigma_i + log_sigma_q
        return h, ComposedGaussian(mu_q, log_sigma_q)

    def synthesize(self, cond, seed: int, sample_rate: int, temperature: float = 1.0) -> AudioClip:
        """Draw z ~ N(0, I) and run all flows once; ``cond`` is (T, C) upsampled."""
        cond = ad.as_tensor(cond)
        if cond.ndim == 2:
            cond = ad.reshape(cond, (1,) + cond.shape)
        z = np.random.default_rng(seed).standard_normal(cond.shape[1]) * temperature
        self.network_passes = 0
        with ad.no_grad():
            x_hat, _ = self(z, cond)
        return AudioClip(np.clip(x_hat.data[0], -1.0, 1.0), sample_rate)
