"""Distill one student per loss-weight preset from a trained teacher.

Writes <out>/<preset>/loss_log.csv per run and <out>/sweep.csv with the dev
auxiliary loss before and after training plus eval-split metrics.

    python3 scripts/toy_teacher.py --out runs/teacher
    python3 scripts/preset_sweep.py --teacher runs/teacher/teacher.pddf --out runs/sweep
"""

import argparse
import csv
import math
import time
from pathlib import Path

from pdd_forge.config import TrainConfig
from pdd_forge.losses import PRESETS
from pdd_forge.student import IAFStudent
from pdd_forge.trainer import distill_student, evaluate, load_teacher, student_dev_aux

from _toy import toy_corpus


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--teacher", required=True)
    p.add_argument("--presets", default=",".join(PRESETS))
    p.add_argument("--steps", default="200,50,300", help="warmup,disc,joint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/sweep")
    args = p.parse_args()

    warmup, disc, joint = (int(v) for v in args.steps.split(","))
    teacher, arch, _, _ = load_teacher(args.teacher)
    corpus = toy_corpus(seed=args.seed, arch=arch)
    out = Path(args.out)
    rows = []
    for preset in args.presets.split(","):
        cfg = TrainConfig(preset=preset, steps_warmup=warmup, steps_disc=disc, steps_joint=joint, seed=args.seed, checkpoint_every=0)
        fresh = IAFStudent(arch.flow, arch.n_flows, arch.upsampler, seed=cfg.seed + 1)
        fresh.init_from_teacher(teacher)
        before = student_dev_aux(fresh, corpus, cfg.clip_len, arch)
        t0 = time.perf_counter()
        run = distill_student(cfg, teacher, corpus, out / preset.replace("*", "_star"))
        seconds = time.perf_counter() - t0
        after = student_dev_aux(run.student, corpus, cfg.clip_len, arch)
        metrics = evaluate(run.student, teacher, corpus.eval, arch, seed=args.seed)[-1]
        finite = all(math.isfinite(v) for r in run.reports for v in (r.total_g, r.adv_d) if v is not None)
        rows.append(
            dict(preset=preset, dev_aux_before=before, dev_aux_after=after, eval_sc=metrics["sc"], eval_mag=metrics["mag"],
                 eval_teacher_nll=metrics["teacher_nll"], finite=finite, seconds=round(seconds, 1))
        )
        print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in rows[-1].items()))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {out / 'sweep.csv'}")


if __name__ == "__main__":
    main()
