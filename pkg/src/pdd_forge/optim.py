"""Adam with bias correction and the step-halving learning-rate schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

logger = logging.getLogger(__name__)


def step_lr(initial_lr: float, step: int, halve_every: int) -> float:
    """Learning rate halved once every ``halve_every`` steps."""
    if initial_lr <= 0 or halve_every <= 0:
        raise ValueError("initial_lr and halve_every must be positive")
    return initial_lr * 0.5 ** (step // halve_every)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam over a fixed, named parameter set.

    A step whose gradients contain NaN or inf is skipped entirely (no
    parameter or moment changes) and logged; the step counter is not
    advanced so bias correction stays consistent.
    """

    def __init__(self, named_params: dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
        for name, p in self.params.items():
            self.state.first_moment[name] = np.zeros_like(p.data)
            self.state.second_moment[name] = np.zeros_like(p.data)
        self.skipped: list[int] = []

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> bool:
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        st = self.state
        grads = {}
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if g.shape != p.data.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
            if not np.all(np.isfinite(g)):
                self.skipped.append(st.step_count + 1)
                logger.warning("non-finite gradient in %s at step %d; update skipped", name, st.step_count + 1)
                return False
            grads[name] = g
        st.step_count += 1
        t = st.step_count
        c1 = 1.0 - st.beta1**t
        c2 = 1.0 - st.beta2**t
        for name, p in self.params.items():
            g = grads[name]
            m = st.first_moment[name]
            v = st.second_moment[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
        return True

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.step_count": np.array(float(self.state.step_count))}
        for name in self.params:
            out[f"{prefix}.m.{name}"] = self.state.first_moment[name]
            out[f"{prefix}.v.{name}"] = self.state.second_moment[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        count = float(arrays[f"{prefix}.step_count"])
        if not math.isfinite(count) or count < 0:
            raise ValueError(f"corrupt optimizer step count {count}")
        self.state.step_count = int(count)
        for name in self.params:
            self.state.first_moment[name] = arrays[f"{prefix}.m.{name}"].copy()
            self.state.second_moment[name] = arrays[f"{prefix}.v.{name}"].copy()
