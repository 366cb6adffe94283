"""Empirical dependency probes: which outputs move when one input sample moves."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad


def influence(fn: Callable[[np.ndarray], np.ndarray], length: int, position: int, seed: int = 0, eps: float = 1e-3) -> np.ndarray:
    """Indices of outputs of ``fn`` that change when input[position] is perturbed.

    ``fn`` maps a length-T sequence to a length-T (or (T, ...)) array.
    """
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, length)
    with ad.no_grad():
        base = np.asarray(fn(x))
        y = x.copy()
        y[position] += eps
        moved = np.asarray(fn(y))
    diff = np.abs(moved - base).reshape(length, -1).max(axis=1)
    return np.flatnonzero(diff > 0)


def measured_receptive_field(fn: Callable[[np.ndarray], np.ndarray], length: int, position: int, seed: int = 0) -> int:
    """Width of the output span influenced by one input sample."""
    idx = influence(fn, length, position, seed)
    return 0 if len(idx) == 0 else int(idx[-1] - idx[0] + 1)
