"""Teacher training, three-phase student distillation, evaluation and
generation benchmarks."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .blocks import ResidualStackSpec, UpsamplerSpec
from .config import DISC_PRETRAIN, JOINT, WARMUP, ArchConfig, TrainConfig
from .discriminator import Discriminator, DiscriminatorSpec, score_mean
from .dsp import (
    AudioClip,
    FeatureStats,
    log_mel,
    normalize,
    read_manifest,
    read_wav,
    trim_silence,
)
from .losses import (
    LossLog,
    LossReport,
    STFTSettings,
    adv_loss_discriminator,
    adv_loss_generator,
    aux_loss,
    generator_objective,
    kld_regularized,
)
from .optim import Adam, step_lr
from .student import IAFStudent
from .teacher import TeacherWaveNet, teacher_nll

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- data


@dataclass
class Utterance:
    name: str
    audio: np.ndarray  # truncated to N_frame * hop samples
    mel: np.ndarray  # (N_frame, n_mels), normalized


@dataclass
class Corpus:
    train: list[Utterance]
    dev: list[Utterance]
    eval: list[Utterance]
    stats: FeatureStats
    sample_rate: int

    def split(self, name: str) -> list[Utterance]:
        return {"train": self.train, "dev": self.dev, "eval": self.eval}[name]


def _features(clip: AudioClip, arch: ArchConfig) -> tuple[np.ndarray, np.ndarray] | None:
    trimmed = trim_silence(clip)
    if trimmed.all_silent or len(trimmed.clip) < arch.frame_len:
        return None
    mel = log_mel(trimmed.clip, arch.n_mels, arch.frame_ms, arch.shift_ms).frames
    audio = trimmed.clip.samples[: mel.shape[0] * arch.hop]
    return audio, mel


def build_corpus(clips: list[tuple[str, AudioClip, str]], arch: ArchConfig) -> Corpus:
    """Trim, featurize and normalize (name, clip, split) triples.

    Normalization statistics come from the train split only.
    """
    raw: dict[str, list[tuple[str, np.ndarray, np.ndarray]]] = {"train": [], "dev": [], "eval": []}
    for name, clip, split in clips:
        if clip.sample_rate != arch.sample_rate:
            raise ValueError(f"{name}: sample rate {clip.sample_rate}, expected {arch.sample_rate}")
        feats = _features(clip, arch)
        if feats is None:
            logger.warning("%s: silent or shorter than one frame; skipped", name)
            continue
        raw[split].append((name, *feats))
    if not raw["train"]:
        raise ValueError("corpus has no usable train utterances")
    stats = FeatureStats.fit([m for _, _, m in raw["train"]])
    out = {k: [Utterance(n, a, normalize(m, stats)) for n, a, m in v] for k, v in raw.items()}
    return Corpus(out["train"], out["dev"], out["eval"], stats, arch.sample_rate)


def featurize_clip(name: str, clip: AudioClip, arch: ArchConfig, stats: FeatureStats) -> Utterance | None:
    """Trim and featurize one clip with existing normalization statistics."""
    if clip.sample_rate != arch.sample_rate:
        raise ValueError(f"{name}: sample rate {clip.sample_rate}, expected {arch.sample_rate}")
    feats = _features(clip, arch)
    if feats is None:
        logger.warning("%s: silent or shorter than one frame; skipped", name)
        return None
    audio, mel = feats
    return Utterance(name, audio, normalize(mel, stats))


def load_corpus(manifest, arch: ArchConfig) -> Corpus:
    entries = read_manifest(manifest)
    clips = [(p.stem, read_wav(p), split) for p, split in entries]
    return build_corpus(clips, arch)


def _frames_per_clip(clip_len: int, hop: int) -> int:
    if clip_len % hop:
        raise ValueError(f"clip length {clip_len} must be a multiple of the hop ({hop})")
    return clip_len // hop


def sample_batch(utts: list[Utterance], batch_size: int, clip_len: int, hop: int, rng: np.random.Generator):
    """Random utterances with a uniform frame-aligned crop from each."""
    n = _frames_per_clip(clip_len, hop)
    idx = rng.integers(0, len(utts), size=batch_size)
    xs, mels = [], []
    for i in idx:
        u = utts[i]
        start = int(rng.integers(0, u.mel.shape[0] - n + 1))
        xs.append(u.audio[start * hop : (start + n) * hop])
        mels.append(u.mel[start : start + n])
    return np.stack(xs), np.stack(mels)


def fixed_batch(utts: list[Utterance], clip_len: int, hop: int):
    """One centred crop per utterance, for repeatable dev metrics."""
    n = _frames_per_clip(clip_len, hop)
    xs, mels = [], []
    for u in utts:
        start = (u.mel.shape[0] - n) // 2
        xs.append(u.audio[start * hop : (start + n) * hop])
        mels.append(u.mel[start : start + n])
    return np.stack(xs), np.stack(mels)


def _check_lengths(corpus: Corpus, clip_len: int, hop: int) -> None:
    n = _frames_per_clip(clip_len, hop)
    for split in ("train", "dev"):
        short = [u.name for u in corpus.split(split) if u.mel.shape[0] < n]
        if short:
            raise ValueError(f"{split} utterances shorter than clip length {clip_len}: {short}")
    if not corpus.train:
        raise ValueError("empty train split")


# ---------------------------------------------------------------- checkpoints


def _spec_records(prefix: str, spec) -> dict[str, np.ndarray]:
    out = {}
    for k, v in vars(spec).items():
        out[f"spec.{prefix}.{k}"] = np.asarray(v, dtype=np.float64)
    return out


def _read_spec(arrays: dict, prefix: str) -> dict:
    key = f"spec.{prefix}."
    return {k[len(key) :]: v for k, v in arrays.items() if k.startswith(key)}


def arch_records(arch: ArchConfig) -> dict[str, np.ndarray]:
    rec = {
        "spec.audio.sample_rate": np.array(float(arch.sample_rate)),
        "spec.audio.n_mels": np.array(float(arch.n_mels)),
        "spec.audio.frame_ms": np.array(arch.frame_ms),
        "spec.audio.shift_ms": np.array(arch.shift_ms),
        "spec.audio.n_flows": np.array(float(arch.n_flows)),
        "spec.upsampler.scales": np.asarray(arch.upsampler.scales, dtype=np.float64),
        "spec.upsampler.kernel_sizes": np.asarray(arch.upsampler.kernel_sizes, dtype=np.float64),
    }
    rec.update(_spec_records("teacher", arch.teacher))
    rec.update(_spec_records("flow", arch.flow))
    rec.update(_spec_records("discriminator", arch.discriminator))
    return rec


def arch_from_records(arrays: dict) -> ArchConfig:
    audio = _read_spec(arrays, "audio")
    ups = _read_spec(arrays, "upsampler")
    disc = _read_spec(arrays, "discriminator")
    return ArchConfig(
        sample_rate=int(audio["sample_rate"]),
        upsampler=UpsamplerSpec(tuple(int(s) for s in ups["scales"]), tuple(int(k) for k in ups["kernel_sizes"])),
        teacher=ResidualStackSpec.from_record(_read_spec(arrays, "teacher")),
        flow=ResidualStackSpec.from_record(_read_spec(arrays, "flow")),
        n_flows=int(audio["n_flows"]),
        discriminator=DiscriminatorSpec(
            int(disc["n_layers"]),
            int(disc["channels"]),
            int(disc["filter_size"]),
            tuple(int(d) for d in np.atleast_1d(disc["dilations"])),
            float(disc["leaky_alpha"]),
        ),
        n_mels=int(audio["n_mels"]),
        frame_ms=float(audio["frame_ms"]),
        shift_ms=float(audio["shift_ms"]),
    )


def stats_records(stats: FeatureStats) -> dict[str, np.ndarray]:
    return {"stats.mean": stats.mean, "stats.std": stats.std}


def stats_from_records(arrays: dict) -> FeatureStats:
    return FeatureStats(arrays["stats.mean"].copy(), arrays["stats.std"].copy())


def save_teacher(path, teacher: TeacherWaveNet, arch: ArchConfig, stats: FeatureStats, extra: dict | None = None) -> None:
    arrays = arch_records(arch)
    arrays.update(stats_records(stats))
    arrays.update(teacher.state_arrays("teacher."))
    if extra:
        arrays.update(extra)
    ckpt.save(path, arrays)


def load_teacher(path) -> tuple[TeacherWaveNet, ArchConfig, FeatureStats, dict]:
    arrays = ckpt.load(path)
    if not any(k.startswith("teacher.") for k in arrays):
        raise ckpt.CheckpointError(f"{path}: no teacher parameters")
    arch = arch_from_records(arrays)
    teacher = TeacherWaveNet(arch.teacher, arch.upsampler)
    teacher.load_state_arrays(arrays, "teacher.")
    return teacher, arch, stats_from_records(arrays), arrays


def load_student(path) -> tuple[IAFStudent, ArchConfig, FeatureStats, dict]:
    arrays = ckpt.load(path)
    if not any(k.startswith("student.") for k in arrays):
        raise ckpt.CheckpointError(f"{path}: no student parameters")
    arch = arch_from_records(arrays)
    student = IAFStudent(arch.flow, arch.n_flows, arch.upsampler)
    student.load_state_arrays(arrays, "student.")
    return student, arch, stats_from_records(arrays), arrays


# ---------------------------------------------------------------- teacher


@dataclass
class TeacherRun:
    teacher: TeacherWaveNet
    losses: list[float] = field(default_factory=list)
    dev_nll: list[tuple[int, float]] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    checkpoint: Path | None = None


def teacher_dev_nll(teacher: TeacherWaveNet, corpus: Corpus, clip_len: int, hop: int) -> float:
    x, mel = fixed_batch(corpus.dev, clip_len, hop)
    with ad.no_grad():
        out = teacher(x, teacher.upsample(mel))
        return teacher_nll(out, x).item()


def train_teacher(
    config: TrainConfig,
    corpus: Corpus,
    out_dir: str | Path | None = None,
    eval_every: int | None = None,
) -> TeacherRun:
    """Maximum-likelihood training of the Gaussian WaveNet teacher."""
    arch = config.arch
    hop = arch.hop
    _check_lengths(corpus, config.teacher_clip_len, hop)
    if not corpus.dev:
        raise ValueError("empty dev split")
    eval_every = config.eval_every if eval_every is None else eval_every
    teacher = TeacherWaveNet(arch.teacher, arch.upsampler, seed=config.seed)
    opt = Adam(teacher.param_dict())
    out_dir = Path(out_dir) if out_dir else None
    log = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        log = (out_dir / "teacher_log.csv").open("w", newline="")
        writer = csv.writer(log)
        writer.writerow(["step", "nll", "dev_nll", "lr"])
    run = TeacherRun(teacher)
    run.dev_nll.append((0, teacher_dev_nll(teacher, corpus, config.teacher_clip_len, hop)))
    try:
        for step in range(config.teacher_steps):
            rng = np.random.default_rng([config.seed, 1, step])
            x, mel = sample_batch(corpus.train, config.batch_size, config.teacher_clip_len, hop, rng)
            lr = step_lr(config.lr_teacher, step, config.teacher_halve_every)
            opt.zero_grad()
            loss = teacher_nll(teacher(x, teacher.upsample(mel)), x)
            if math.isfinite(loss.item()):
                loss.backward()
                opt.step(lr)
            else:
                logger.warning("teacher step %d: non-finite loss, step skipped", step)
            run.losses.append(loss.item())
            run.lrs.append(lr)
            dev = ""
            if eval_every and (step + 1) % eval_every == 0:
                dev = teacher_dev_nll(teacher, corpus, config.teacher_clip_len, hop)
                run.dev_nll.append((step + 1, dev))
                logger.info("teacher step %d nll %.4f dev %.4f", step + 1, loss.item(), dev)
            if log:
                writer.writerow([step, repr(loss.item()), "" if dev == "" else repr(dev), repr(lr)])
            if out_dir and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                save_teacher(out_dir / "teacher.pddf", teacher, arch, corpus.stats)
    finally:
        if log:
            log.close()
    if not run.dev_nll or run.dev_nll[-1][0] != config.teacher_steps:
        run.dev_nll.append((config.teacher_steps, teacher_dev_nll(teacher, corpus, config.teacher_clip_len, hop)))
    if out_dir:
        run.checkpoint = out_dir / "teacher.pddf"
        save_teacher(run.checkpoint, teacher, arch, corpus.stats)
    return run


# ---------------------------------------------------------------- distillation


@dataclass
class DistillRun:
    student: IAFStudent
    discriminator: Discriminator | None
    reports: list[LossReport]
    checkpoint: Path | None = None
    disc_updates: int = 0


def student_dev_aux(student: IAFStudent, corpus: Corpus, clip_len: int, arch: ArchConfig, seed: int = 0) -> float:
    """Mean STFT auxiliary loss of the student on fixed dev crops and fixed noise."""
    x, mel = fixed_batch(corpus.dev, clip_len, arch.hop)
    z = np.random.default_rng([seed, 99]).standard_normal(x.shape)
    with ad.no_grad():
        x_hat, _ = student(z, student.upsample(mel))
        total, _, _ = aux_loss(x, x_hat, STFTSettings.from_ms(arch.sample_rate, arch.frame_ms, arch.shift_ms))
    return total.item()


def _save_distill(path, arch, stats, student, disc, opt_g, opt_d, next_step: int) -> None:
    arrays = arch_records(arch)
    arrays.update(stats_records(stats))
    arrays.update(student.state_arrays("student."))
    arrays.update(opt_g.state_arrays("adam_g"))
    if disc is not None:
        arrays.update(disc.state_arrays("disc."))
        arrays.update(opt_d.state_arrays("adam_d"))
    arrays["train.next_step"] = np.array(float(next_step))
    ckpt.save(path, arrays)


def distill_student(
    config: TrainConfig,
    teacher: TeacherWaveNet,
    corpus: Corpus,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    stop_after: int | None = None,
) -> DistillRun:
    """Train the IAF student through warmup, discriminator pretraining and joint phases.

    Iteration ``step`` draws its batch and noise from a generator seeded by
    (seed, step), so a run resumed from a checkpoint replays the same data.
    ``stop_after`` ends the loop early after that many global iterations.
    """
    arch = config.arch
    hop = arch.hop
    weights = config.weights
    schedule = config.schedule
    _check_lengths(corpus, config.clip_len, hop)
    stft = STFTSettings.from_ms(arch.sample_rate, arch.frame_ms, arch.shift_ms)
    if config.clip_len < stft.frame_len:
        raise ValueError("clip length shorter than one STFT frame")

    teacher.set_requires_grad(False)
    student = IAFStudent(arch.flow, arch.n_flows, arch.upsampler, seed=config.seed + 1)
    student.init_from_teacher(teacher)
    disc = Discriminator(arch.discriminator, seed=config.seed + 2) if weights.uses_discriminator else None
    opt_g = Adam(student.param_dict())
    opt_d = Adam(disc.param_dict()) if disc is not None else None

    start = 0
    if resume_from is not None:
        arrays = ckpt.load(resume_from)
        student.load_state_arrays(arrays, "student.")
        opt_g.load_state_arrays(arrays, "adam_g")
        if disc is not None:
            disc.load_state_arrays(arrays, "disc.")
            opt_d.load_state_arrays(arrays, "adam_d")
        start = int(arrays["train.next_step"])

    out_dir = Path(out_dir) if out_dir else None
    log = LossLog(out_dir / "loss_log.csv" if out_dir else None, append=resume_from is not None)
    end = schedule.total_iterations if stop_after is None else min(schedule.total_iterations, stop_after)
    run = DistillRun(student, disc, log.rows)

    for step in range(start, end):
        phase = schedule.phase(step)
        rng = np.random.default_rng([config.seed, 2, step])
        x, mel = sample_batch(corpus.train, config.batch_size, config.clip_len, hop, rng)
        z = rng.standard_normal(x.shape)
        lr_g = step_lr(schedule.lr_g_init, step, schedule.halve_every)
        lr_d = step_lr(schedule.lr_d_init, step, schedule.halve_every) if disc is not None else None
        report = LossReport(step=step, phase=phase, lr_g=lr_g if phase != DISC_PRETRAIN else None, lr_d=None)

        if phase == DISC_PRETRAIN:
            with ad.no_grad():
                x_hat, _ = student(z, student.upsample(mel))
            report.adv_d = _disc_step(disc, opt_d, x, x_hat.data, lr_d)
            report.lr_d = lr_d
            run.disc_updates += 1
            log.append(report)
            _maybe_checkpoint(config, out_dir, arch, corpus, student, disc, opt_g, opt_d, step)
            continue

        x_hat, q = student(z, student.upsample(mel))
        if phase == JOINT and disc is not None:
            report.adv_d = _disc_step(disc, opt_d, x, x_hat.data, lr_d)
            report.lr_d = lr_d
            run.disc_updates += 1

        step_weights = weights
        if phase == WARMUP and weights.lambda_adv > 0:
            step_weights = replace(weights, lambda_adv=0.0)
        terms: dict[str, float] = {}

        def kld_term():
            with ad.no_grad():
                t_cond = teacher.upsample(mel)
            return kld_regularized(q, teacher(x_hat, t_cond), config.lambda_reg)

        def aux_term():
            total, sc, mag = aux_loss(x, x_hat, stft, weights.lambda_mag)
            terms["sc"], terms["mag"] = sc.item(), mag.item()
            return total

        def adv_term():
            return adv_loss_generator(score_mean(disc(x_hat)))

        opt_g.zero_grad()
        total, values = generator_objective(step_weights, kld_term, aux_term, adv_term)
        report.kld = values.get("kld")
        report.aux = values.get("aux")
        report.sc, report.mag = terms.get("sc"), terms.get("mag")
        report.adv_g = values.get("adv_g", 0.0 if phase == WARMUP else None)
        report.total_g = total.item()
        if math.isfinite(report.total_g):
            total.backward()
            opt_g.step(lr_g)
        else:
            logger.warning("distill step %d: non-finite generator loss, step skipped", step)
        if disc is not None:
            disc.zero_grad()
        log.append(report)
        _maybe_checkpoint(config, out_dir, arch, corpus, student, disc, opt_g, opt_d, step)

    if out_dir:
        run.checkpoint = out_dir / "student.pddf"
        _save_distill(run.checkpoint, arch, corpus.stats, student, disc, opt_g, opt_d, end)
    return run


def _disc_step(disc: Discriminator, opt: Adam, x: np.ndarray, x_hat: np.ndarray, lr: float) -> float:
    opt.zero_grad()
    loss = adv_loss_discriminator(score_mean(disc(x)), score_mean(disc(x_hat)))
    if math.isfinite(loss.item()):
        loss.backward()
        opt.step(lr)
    else:
        logger.warning("non-finite discriminator loss; step skipped")
    return loss.item()


def _maybe_checkpoint(config, out_dir, arch, corpus, student, disc, opt_g, opt_d, step) -> None:
    if out_dir and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
        path = out_dir / f"student_step{step + 1:07d}.pddf"
        _save_distill(path, arch, corpus.stats, student, disc, opt_g, opt_d, step + 1)


# ---------------------------------------------------------------- evaluation


EVAL_COLUMNS = ("clip", "sc", "mag", "aux", "teacher_nll", "rtf_student")


def evaluate(
    student: IAFStudent,
    teacher: TeacherWaveNet,
    utterances: list[Utterance],
    arch: ArchConfig,
    seed: int = 0,
    out_csv: str | Path | None = None,
) -> list[dict]:
    """Per-clip objective metrics of student synthesis plus one ``mean`` row."""
    stft = STFTSettings.from_ms(arch.sample_rate, arch.frame_ms, arch.shift_ms)
    rows = []
    for i, u in enumerate(utterances):
        if u.mel is None or u.mel.shape[0] == 0:
            logger.warning("%s: no conditioning features; skipped", u.name)
            continue
        t0 = time.perf_counter()
        with ad.no_grad():
            cond = student.upsample(u.mel)
        clip = student.synthesize(cond, seed=seed + i, sample_rate=arch.sample_rate)
        elapsed = time.perf_counter() - t0
        x = u.audio[None]
        x_hat = clip.samples[None]
        with ad.no_grad():
            total, sc, mag = aux_loss(x, x_hat, stft)
            nll = teacher_nll(teacher(x_hat, teacher.upsample(u.mel)), x_hat).item()
        rows.append(
            dict(
                clip=u.name,
                sc=sc.item(),
                mag=mag.item(),
                aux=total.item(),
                teacher_nll=nll,
                rtf_student=elapsed / (len(u.audio) / arch.sample_rate),
            )
        )
    if rows:
        agg = {"clip": "mean"}
        for k in EVAL_COLUMNS[1:]:
            agg[k] = float(np.mean([r[k] for r in rows]))
        rows.append(agg)
    if out_csv:
        _write_rows(out_csv, EVAL_COLUMNS, rows)
    return rows


BENCH_COLUMNS = ("system", "length", "seconds", "network_passes", "rtf", "speedup")


def bench_generation(
    teacher: TeacherWaveNet,
    student: IAFStudent,
    lengths: list[int],
    arch: ArchConfig,
    seed: int = 0,
    out_csv: str | Path | None = None,
) -> list[dict]:
    """Wall-clock of autoregressive teacher sampling vs parallel student synthesis."""
    rows = []
    rng = np.random.default_rng(seed)
    for T in lengths:
        n_frames = -(-T // arch.hop)
        mel = rng.standard_normal((n_frames, arch.n_mels))
        with ad.no_grad():
            t_cond = teacher.upsample(mel).data[0, :T]
            s_cond = student.upsample(mel).data[0, :T]
        t0 = time.perf_counter()
        teacher.sample(t_cond, seed=seed, sample_rate=arch.sample_rate)
        t_sec = time.perf_counter() - t0
        t0 = time.perf_counter()
        student.synthesize(s_cond, seed=seed, sample_rate=arch.sample_rate)
        s_sec = time.perf_counter() - t0
        dur = T / arch.sample_rate
        rows.append(dict(system="teacher", length=T, seconds=t_sec, network_passes=teacher.sample_iterations, rtf=t_sec / dur, speedup=1.0))
        rows.append(
            dict(system="student", length=T, seconds=s_sec, network_passes=student.network_passes, rtf=s_sec / dur, speedup=t_sec / s_sec)
        )
    if out_csv:
        _write_rows(out_csv, BENCH_COLUMNS, rows)
    return rows


def _write_rows(path, columns, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow(r)
