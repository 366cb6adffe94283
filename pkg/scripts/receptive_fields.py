"""Closed-form vs probed receptive fields of every stack at both scales."""

import numpy as np

from pdd_forge.autodiff import Tensor
from pdd_forge.blocks import ResidualStack
from pdd_forge.config import ArchConfig
from pdd_forge.discriminator import Discriminator
from pdd_forge.probes import influence


def _stack_fn(spec):
    stack = ResidualStack(spec, np.random.default_rng(0))

    def fn(x):
        T = len(x)
        return stack(Tensor(x.reshape(1, T, 1)), Tensor(np.zeros((1, T, spec.conditioning_channels)))).data[0]

    return fn


def main() -> None:
    print(f"{'scale':6} {'network':14} {'closed':>7} {'probed':>7} {'first':>6}")
    for scale in ("desk", "full"):
        arch = ArchConfig.named(scale)
        items = [
            ("teacher", arch.teacher.receptive_field, _stack_fn(arch.teacher), True),
            ("flow", arch.flow.receptive_field, _stack_fn(arch.flow), True),
            ("discriminator", arch.discriminator.receptive_field, lambda x, d=Discriminator(arch.discriminator): d(x[None]).data[0], False),
        ]
        for name, closed, fn, causal in items:
            length = 2 * closed + 50
            pos = 20 if causal else length // 2
            idx = influence(fn, length, pos)
            print(f"{scale:6} {name:14} {closed:7d} {idx[-1] - idx[0] + 1:7d} {idx[0] - pos:6d}")


if __name__ == "__main__":
    main()
