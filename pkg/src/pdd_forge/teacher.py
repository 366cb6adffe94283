"""Gaussian autoregressive WaveNet teacher."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .blocks import GaussianHead, ResidualStack, ResidualStackSpec, Upsampler, UpsamplerSpec, shift_right
from .dsp import AudioClip
from .nn import Module

LOG_SIGMA_FLOOR = -7.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class TeacherOutput:
    mu: Tensor  # (B, T)
    log_sigma: Tensor  # (B, T), already clamped


class TeacherWaveNet(Module):
    def __init__(self, stack_spec: ResidualStackSpec, upsampler_spec: UpsamplerSpec, seed: int = 0):
        super().__init__()
        if not stack_spec.causal:
            raise ValueError("teacher stack must be causal")
        rng = np.random.default_rng(seed)
        self.stack_spec = stack_spec
        self.upsampler = self.add_child("upsampler", Upsampler(upsampler_spec))
        self.stack = self.add_child("stack", ResidualStack(stack_spec, rng))
        self.head = self.add_child("head", GaussianHead(stack_spec.skip_channels, rng))
        self.sample_iterations = 0

    @property
    def receptive_field(self) -> int:
        return self.stack_spec.receptive_field

    def upsample(self, mel) -> Tensor:
        mel = ad.as_tensor(mel)
        if mel.ndim == 2:
            mel = ad.reshape(mel, (1,) + mel.shape)
        return self.upsampler(mel)

    def __call__(self, x, cond: Tensor) -> TeacherOutput:
        """Predict p(x_t | x_<t, c) for every t. x: (B, T), cond: upsampled (B, T, C)."""
        x = ad.as_tensor(x)
        if x.ndim == 1:
            x = ad.reshape(x, (1, x.shape[0]))
        if cond.shape[:2] != x.shape:
            raise ShapeError(f"teacher: waveform {x.shape} and condition {cond.shape} lengths differ")
        mu, log_sigma = self.head(self.stack(shift_right(x), cond))
        return TeacherOutput(mu, ad.clamp_min(log_sigma, LOG_SIGMA_FLOOR))

    def sample(self, cond, seed: int, sample_rate: int, temperature: float = 1.0) -> AudioClip:
        """Sequential ancestral sampling, one network evaluation per sample.

        ``cond`` is the upsampled condition for one clip, (T, C). Every layer
        keeps the history of its input so that step t only computes the new
        column, which matches the full-sequence forward exactly. Fed-back and
        returned samples are clamped to [-1, 1].
        """
        cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=np.float64)
        if cond.ndim == 3:
            cond = cond[0]
        spec = self.stack_spec
        if cond.ndim != 2 or cond.shape[1] != spec.conditioning_channels:
            raise ShapeError(f"teacher.sample: condition {cond.shape}, expected (T, {spec.conditioning_channels})")
        T = cond.shape[0]
        R, K = spec.residual_channels, spec.filter_size
        sp = self.stack._params
        hp = self.head._params
        layers = [
            {k: v.data for k, v in layer._params.items()} for layer in self.stack.layers
        ]
        # conditioning enters every layer through a fixed 1x1 projection: precompute it
        cond_proj = [cond @ lp["cond_w"] + lp["conv_b"] for lp in layers]
        taps = [[(K - 1 - k) * d for k in range(K)] for d in spec.dilations]
        hist = [np.zeros((T, R)) for _ in layers]
        in_w, in_b = sp["in_w"].data[0, 0], sp["in_b"].data
        w1, b1, w2, b2 = (hp[k].data for k in ("w1", "b1", "w2", "b2"))

        noise = np.random.default_rng(seed).standard_normal(T)
        x = np.zeros(T)
        self.sample_iterations = 0
        prev = 0.0
        for t in range(T):
            h = prev * in_w + in_b
            skips = 0.0
            for i, lp in enumerate(layers):
                hist[i][t] = h
                a = cond_proj[i][t].copy()
                for k, off in enumerate(taps[i]):
                    if t >= off:
                        a += hist[i][t - off] @ lp["conv_w"][k]
                gated = np.tanh(a[:R]) * expit(a[R:])
                skips = skips + gated @ lp["skip_w"] + lp["skip_b"]
                if "res_w" in lp:
                    h = h + gated @ lp["res_w"] + lp["res_b"]
            out = np.maximum(np.maximum(skips, 0.0) @ w1 + b1, 0.0) @ w2 + b2
            sigma = math.exp(max(out[1], LOG_SIGMA_FLOOR))
            x[t] = min(1.0, max(-1.0, out[0] + temperature * sigma * noise[t]))
            prev = x[t]
            self.sample_iterations += 1
        return AudioClip(x, sample_rate)


def teacher_nll(out: TeacherOutput, x) -> Tensor:
    """Mean Gaussian negative log-likelihood per sample."""
    x = ad.as_tensor(x)
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    if x.shape != out.mu.shape:
        raise ShapeError(f"teacher_nll: target {x.shape} and prediction {out.mu.shape} differ")
    z = (x - out.mu) * ad.exp(-out.log_sigma)
    return ad.mean(out.log_sigma + 0.5 * ad.square(z)) + HALF_LOG_2PI
