"""Train the desk teacher on the toy corpus and report the dev NLL curve.

    python3 scripts/toy_teacher.py --steps 500 --out runs/teacher
"""

import argparse
import logging
import time

from pdd_forge.config import TrainConfig
from pdd_forge.trainer import train_teacher

from _toy import toy_corpus


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/teacher")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = TrainConfig(teacher_steps=args.steps, lr_teacher=args.lr, eval_every=args.eval_every, seed=args.seed)
    corpus = toy_corpus(seed=args.seed)
    t0 = time.perf_counter()
    run = train_teacher(cfg, corpus, args.out)
    print(f"{'step':>6} {'dev_nll':>9}")
    for step, nll in run.dev_nll:
        print(f"{step:6d} {nll:9.4f}")
    first, last = run.dev_nll[0][1], run.dev_nll[-1][1]
    print(f"ratio final/initial {last / first:.3f}; {time.perf_counter() - t0:.0f} s; checkpoint {run.checkpoint}")


if __name__ == "__main__":
    main()
