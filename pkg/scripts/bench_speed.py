"""Autoregressive teacher sampling vs parallel student synthesis wall-clock.

The student's flows are sized so that together they hold as many residual
layers of the same width as the teacher. Untrained weights are fine here since
the cost does not depend on parameter values.

    python3 scripts/bench_speed.py --lengths 1000,2000,4000,8000 --out runs/bench.csv
"""

import argparse

from pdd_forge.blocks import ResidualStackSpec
from pdd_forge.config import ArchConfig
from pdd_forge.student import IAFStudent
from pdd_forge.teacher import TeacherWaveNet
from pdd_forge.trainer import bench_generation


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--lengths", default="1000,2000,4000,8000")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/bench.csv")
    args = p.parse_args()

    arch = ArchConfig.desk()
    t = arch.teacher
    teacher = TeacherWaveNet(t, arch.upsampler, seed=args.seed)
    matched = ResidualStackSpec(t.n_layers // arch.n_flows, 1, t.residual_channels, t.skip_channels, t.filter_size)
    student = IAFStudent(matched, arch.n_flows, arch.upsampler, seed=args.seed)
    lengths = [int(v) for v in args.lengths.split(",")]
    rows = bench_generation(teacher, student, lengths, arch, seed=args.seed, out_csv=args.out)
    print(f"{'system':8} {'T':>6} {'seconds':>9} {'passes':>7} {'rtf':>8} {'speedup':>8}")
    for r in rows:
        print(f"{r['system']:8} {r['length']:6d} {r['seconds']:9.3f} {r['network_passes']:7d} {r['rtf']:8.3f} {r['speedup']:8.1f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
