"""Central finite-difference checks against the reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def numeric_grad(f: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar f with respect to every array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    with ad.no_grad():
        for i, a in enumerate(arrays):
            g = np.zeros_like(a)
            flat = a.reshape(-1)
            gflat = g.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                fp = f(*[Tensor(x) for x in arrays]).item()
                flat[j] = orig - h
                fm = f(*[Tensor(x) for x in arrays]).item()
                flat[j] = orig
                gflat[j] = (fp - fm) / (2 * h)
            out.append(g)
    return out


def analytic_grad(f: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    f(*leaves).backward()
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in leaves]


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(num / den)


def check(f: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> float:
    """Worst relative error over all inputs."""
    num = numeric_grad(f, arrays, h)
    ana = analytic_grad(f, arrays)
    return max(rel_error(a, n) for a, n in zip(ana, num))
