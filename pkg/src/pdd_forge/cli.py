"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Verbosity comes
from the PDD_FORGE_LOG environment variable (error, info or debug).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import checkpoint as ckpt
from .config import TrainConfig, parse_kv_file
from .dsp import (
    AudioClip,
    WavError,
    default_splits,
    make_toy_corpus,
    read_manifest,
    read_wav,
    write_manifest,
    write_wav,
)
from .losses import UnknownPreset
from .trainer import (
    arch_records,
    bench_generation,
    distill_student,
    evaluate,
    featurize_clip,
    load_corpus,
    load_student,
    load_teacher,
    stats_records,
    train_teacher,
)

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _type_name(t) -> str:
    return {int: "int", float: "float", str: "str", Path: "path"}.get(t, getattr(t, "__name__", "str"))


def _add(p, flag, type=str, default=None, help="", shown_default=None, **kw):
    """Add a flag whose help line always names its type and default."""
    shown = default if shown_default is None else shown_default
    text = f"{help} (type: {_type_name(type)}, default: {shown})"
    p.add_argument(flag, type=type, default=default, help=text, **kw)


_CFG_DEFAULTS = {f.name: f.default for f in dataclasses.fields(TrainConfig)}

# flags that map onto TrainConfig fields; None means "take the config file or dataclass value"
_TRAIN_FLAGS = {
    "common": [
        ("--preset", str, "loss-weight preset: AX, AXAD, KLAX, KLAXAD or KLAXAD* (case-insensitive)"),
        ("--scale", str, "architecture scale: desk or full"),
        ("--sample-rate", int, "corpus sample rate in Hz"),
        ("--batch-size", int, "clips per minibatch"),
        ("--checkpoint-every", int, "checkpoint interval in steps (0 disables)"),
        ("--eval-every", int, "dev evaluation interval in steps (0 disables)"),
    ],
    "teacher": [
        ("--teacher-steps", int, "teacher training steps"),
        ("--lr-teacher", float, "initial teacher learning rate"),
        ("--teacher-clip-len", int, "teacher crop length in samples"),
        ("--teacher-halve-every", int, "teacher learning-rate halving interval"),
    ],
    "distill": [
        ("--clip-len", int, "student crop length in samples"),
        ("--steps-warmup", int, "generator-only warmup steps"),
        ("--steps-disc", int, "discriminator pretraining steps"),
        ("--steps-joint", int, "joint adversarial steps"),
        ("--total-generator-steps", int, "optional check: must equal warmup + joint"),
        ("--lr-g", float, "initial student learning rate"),
        ("--lr-d", float, "initial discriminator learning rate"),
        ("--halve-every", int, "learning-rate halving interval"),
        ("--lambda-reg", float, "log-sigma regularizer weight inside the KLD"),
        ("--lambda-kld", float, "override the preset KLD weight"),
        ("--lambda-aux", float, "override the preset auxiliary weight"),
        ("--lambda-adv", float, "override the preset adversarial weight"),
    ],
}


def _add_train_flags(p, groups) -> None:
    _add(p, "--config", Path, None, "flat 'key = value' config file; flags override it")
    _add(p, "--manifest", Path, None, "corpus manifest (path<TAB>split per line)", shown_default=_CFG_DEFAULTS["corpus_manifest"] or "none")
    for g in groups:
        for flag, t, text in _TRAIN_FLAGS[g]:
            key = flag[2:].replace("-", "_")
            _add(p, flag, t, None, text, shown_default=_CFG_DEFAULTS[key])


def _train_config(args, groups) -> TrainConfig:
    values: dict = {}
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        try:
            values.update(parse_kv_file(args.config))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    keys = ["seed", "out_dir"] + [f[0][2:].replace("-", "_") for g in groups for f in _TRAIN_FLAGS[g]]
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if args.manifest is not None:
        values["corpus_manifest"] = str(args.manifest)
    try:
        cfg = TrainConfig.from_strings(values)
    except UnknownPreset as exc:
        raise UsageError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    if not cfg.corpus_manifest:
        raise UsageError("a corpus manifest is required (--manifest or corpus_manifest in --config)")
    _require_file(Path(cfg.corpus_manifest), "manifest")
    return cfg


def _require_file(path: Path, what: str) -> Path:
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _out_dir(args, cfg: TrainConfig | None = None) -> Path:
    out = Path(cfg.out_dir if cfg is not None else args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- verbs


def cmd_make_corpus(args) -> int:
    if args.n_utts < 1 or args.duration <= 0:
        raise UsageError("--n-utts must be >= 1 and --duration positive")
    try:
        clips = make_toy_corpus(args.n_utts, args.duration, args.sample_rate, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(args)
    entries = []
    for i, (clip, split) in enumerate(zip(clips, default_splits(len(clips)))):
        rel = Path("wav") / f"utt{i:03d}.wav"
        (out / "wav").mkdir(exist_ok=True)
        write_wav(clip, out / rel)
        entries.append((str(rel), split))
    write_manifest(out / "manifest.tsv", entries)
    print(f"wrote {len(entries)} clips and {out / 'manifest.tsv'}")
    return 0


def cmd_featurize(args) -> int:
    cfg = _train_config(args, ["common"])
    arch = cfg.arch
    out = _out_dir(args, cfg)
    corpus = load_corpus(cfg.corpus_manifest, arch)
    arrays = arch_records(arch)
    arrays.update(stats_records(corpus.stats))
    rows = ["name,split,n_frames,n_samples"]
    for split in ("train", "dev", "eval"):
        for u in corpus.split(split):
            arrays[f"mel.{split}.{u.name}"] = u.mel
            rows.append(f"{u.name},{split},{u.mel.shape[0]},{len(u.audio)}")
    ckpt.save(out / "features.pddf", arrays)
    (out / "features.csv").write_text("\n".join(rows) + "\n")
    print(f"featurized {len(rows) - 1} utterances into {out / 'features.pddf'}")
    return 0


def cmd_train_teacher(args) -> int:
    cfg = _train_config(args, ["common", "teacher"])
    out = _out_dir(args, cfg)
    (out / "config.txt").write_text(cfg.to_text())
    corpus = load_corpus(cfg.corpus_manifest, cfg.arch)
    run = train_teacher(cfg, corpus, out)
    first, last = run.dev_nll[0][1], run.dev_nll[-1][1]
    print(f"teacher dev NLL {first:.4f} -> {last:.4f}; checkpoint {run.checkpoint}")
    return 0


def cmd_distill(args) -> int:
    cfg = _train_config(args, ["common", "distill"])
    _require_file(args.teacher, "teacher checkpoint")
    if args.resume is not None:
        _require_file(args.resume, "resume checkpoint")
    w = cfg.weights
    print(f"preset {cfg.preset}: lambda_kld={w.lambda_kld} lambda_aux={w.lambda_aux} lambda_adv={w.lambda_adv}")
    if args.dry_run:
        return 0
    teacher, t_arch, _, _ = load_teacher(args.teacher)
    if t_arch != cfg.arch:
        raise ValueError("teacher checkpoint architecture differs from the configured scale/sample rate")
    out = _out_dir(args, cfg)
    (out / "config.txt").write_text(cfg.to_text())
    corpus = load_corpus(cfg.corpus_manifest, cfg.arch)
    run = distill_student(cfg, teacher, corpus, out, resume_from=args.resume, stop_after=args.stop_after)
    print(f"{len(run.reports)} iterations logged to {out / 'loss_log.csv'}; checkpoint {run.checkpoint}")
    return 0


def cmd_synthesize(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.wav, "conditioning wav")
    if args.temperature < 0:
        raise UsageError("--temperature must be non-negative")
    loader = load_teacher if args.model == "teacher" else load_student
    model, arch, stats, _ = loader(args.checkpoint)
    clip = read_wav(args.wav)
    if args.max_seconds is not None:
        clip = AudioClip(clip.samples[: int(args.max_seconds * clip.sample_rate)], clip.sample_rate)
    utt = featurize_clip(args.wav.stem, clip, arch, stats)
    if utt is None:
        raise ValueError(f"{args.wav}: no usable audio after silence trimming")
    from .autodiff import no_grad

    with no_grad():
        cond = model.upsample(utt.mel).data[0]
    if args.model == "teacher":
        audio = model.sample(cond, seed=args.seed, sample_rate=arch.sample_rate, temperature=args.temperature)
    else:
        audio = model.synthesize(cond, seed=args.seed, sample_rate=arch.sample_rate, temperature=args.temperature)
    out = _out_dir(args) / f"{args.wav.stem}_{args.model}.wav"
    write_wav(audio, out)
    print(f"wrote {out} ({audio.duration:.2f} s)")
    return 0


def _utterances(manifest: Path, split: str, arch, stats):
    utts = []
    for path, s in read_manifest(manifest):
        if s != split:
            continue
        u = featurize_clip(path.stem, read_wav(path), arch, stats)
        if u is not None:
            utts.append(u)
    return utts


def cmd_evaluate(args) -> int:
    for p, what in ((args.student, "student checkpoint"), (args.teacher, "teacher checkpoint"), (args.manifest, "manifest")):
        _require_file(p, what)
    student, arch, stats, _ = load_student(args.student)
    teacher, _, _, _ = load_teacher(args.teacher)
    utts = _utterances(args.manifest, args.split, arch, stats)
    if not utts:
        raise ValueError(f"no usable utterances in split {args.split!r}")
    out = _out_dir(args) / "metrics.csv"
    rows = evaluate(student, teacher, utts, arch, seed=args.seed, out_csv=out)
    m = rows[-1]
    print(f"{len(rows) - 1} clips: sc {m['sc']:.4f} mag {m['mag']:.2f} teacher_nll {m['teacher_nll']:.4f} -> {out}")
    return 0


def _lengths(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("lengths must be positive integers")
    return vals


def cmd_bench(args) -> int:
    _require_file(args.student, "student checkpoint")
    _require_file(args.teacher, "teacher checkpoint")
    student, arch, _, _ = load_student(args.student)
    teacher, _, _, _ = load_teacher(args.teacher)
    out = _out_dir(args) / "bench.csv"
    rows = bench_generation(teacher, student, args.lengths, arch, seed=args.seed, out_csv=out)
    for r in rows:
        print(f"{r['system']:8s} T={r['length']:6d} {r['seconds']:8.3f} s passes={r['network_passes']:6d} speedup={r['speedup']:.1f}")
    return 0


def cmd_inspect(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    arrays = ckpt.load(args.checkpoint)
    for name, arr in arrays.items():
        shape = "x".join(str(d) for d in arr.shape) or "scalar"
        print(f"{name}\t{shape}\t{ckpt.checksum(arr)}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="pdd-forge", description="Distill a WaveNet teacher into a parallel IAF student.")
    sub = root.add_subparsers(dest="verb", metavar="verb", parser_class=_Parser)
    sub.required = True

    def verb(name, fn, text, seed=True, out=True):
        p = sub.add_parser(name, help=text, description=text)
        p.set_defaults(func=fn)
        if seed:
            _add(p, "--seed", int, None if name in ("train-teacher", "distill", "featurize") else 0, "random seed", shown_default=0)
        if out:
            _add(p, "--out-dir", str, None if name in ("train-teacher", "distill", "featurize") else "out", "output directory", shown_default="out")
        return p

    p = verb("make-corpus", cmd_make_corpus, "write a synthetic harmonic corpus and manifest")
    _add(p, "--n-utts", int, 10, "number of clips")
    _add(p, "--duration", float, 1.0, "clip duration in seconds")
    _add(p, "--sample-rate", int, 8000, "sample rate: 4000, 8000, 16000 or 24000")

    p = verb("featurize", cmd_featurize, "compute normalized log-mel features for a manifest")
    _add_train_flags(p, ["common"])

    p = verb("train-teacher", cmd_train_teacher, "train the autoregressive teacher")
    _add_train_flags(p, ["common", "teacher"])

    p = verb("distill", cmd_distill, "distill the IAF student from a trained teacher")
    _add(p, "--teacher", Path, None, "teacher checkpoint", shown_default="required", required=True)
    _add(p, "--resume", Path, None, "resume from a student checkpoint", shown_default="none")
    _add(p, "--stop-after", int, None, "stop after this many global iterations", shown_default="none")
    p.add_argument("--dry-run", action="store_true", help="resolve and print the loss weights, then exit (type: flag, default: False)")
    _add_train_flags(p, ["common", "distill"])

    p = verb("synthesize", cmd_synthesize, "copy-synthesize a WAV from its own log-mel features")
    _add(p, "--model", str, "student", "which network generates", choices=["teacher", "student"])
    _add(p, "--checkpoint", Path, None, "model checkpoint", shown_default="required", required=True)
    _add(p, "--wav", Path, None, "WAV providing the conditioning features", shown_default="required", required=True)
    _add(p, "--temperature", float, 1.0, "noise scale")
    _add(p, "--max-seconds", float, None, "truncate the conditioning audio", shown_default="none")

    p = verb("evaluate", cmd_evaluate, "objective metrics of student synthesis on a split")
    _add(p, "--student", Path, None, "student checkpoint", shown_default="required", required=True)
    _add(p, "--teacher", Path, None, "teacher checkpoint", shown_default="required", required=True)
    _add(p, "--manifest", Path, None, "corpus manifest", shown_default="required", required=True)
    _add(p, "--split", str, "eval", "split to evaluate", choices=["train", "dev", "eval"])

    p = verb("bench", cmd_bench, "time AR teacher sampling against parallel student synthesis")
    _add(p, "--student", Path, None, "student checkpoint", shown_default="required", required=True)
    _add(p, "--teacher", Path, None, "teacher checkpoint", shown_default="required", required=True)
    _add(p, "--lengths", _lengths, [1000, 2000, 4000, 8000], "comma-separated lengths in samples", shown_default="1000,2000,4000,8000")

    p = verb("inspect-ckpt", cmd_inspect, "list checkpoint records with shapes and checksums", seed=False, out=False)
    p.add_argument("checkpoint", type=Path, help="checkpoint file (type: path, default: required)")
    return root


def _configure_logging() -> None:
    name = os.environ.get("PDD_FORGE_LOG", "info").strip().lower()
    if name not in LOG_LEVELS:
        raise UsageError(f"PDD_FORGE_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", force=True)


def run(argv: list[str] | None = None) -> int:
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ckpt.CheckpointError, WavError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
