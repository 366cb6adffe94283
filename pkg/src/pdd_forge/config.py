"""Architecture presets, the three-phase schedule and the training config."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .blocks import ResidualStackSpec, UpsamplerSpec
from .discriminator import DiscriminatorSpec, linear_dilations
from .dsp import ms_to_samples
from .losses import DEFAULT_LAMBDA_REG, LossWeights, resolve_preset

WARMUP = "warmup"
DISC_PRETRAIN = "disc_pretrain"
JOINT = "joint"


@dataclass(frozen=True)
class ArchConfig:
    sample_rate: int
    upsampler: UpsamplerSpec
    teacher: ResidualStackSpec
    flow: ResidualStackSpec
    n_flows: int
    discriminator: DiscriminatorSpec
    n_mels: int = 80
    frame_ms: float = 25.0
    shift_ms: float = 5.0

    def __post_init__(self):
        self.upsampler.check_hop(self.hop)
        for spec in (self.teacher, self.flow):
            if spec.conditioning_channels != self.n_mels:
                raise ValueError("stack conditioning channels must equal n_mels")

    @property
    def hop(self) -> int:
        return ms_to_samples(self.shift_ms, self.sample_rate)

    @property
    def frame_len(self) -> int:
        return ms_to_samples(self.frame_ms, self.sample_rate)

    @classmethod
    def full(cls) -> "ArchConfig":
        return cls(
            sample_rate=24000,
            upsampler=UpsamplerSpec((2, 2, 2, 3, 5)),
            teacher=ResidualStackSpec(24, 4, 128, 128, 3),
            flow=ResidualStackSpec(10, 1, 64, 64, 3),
            n_flows=6,
            discriminator=DiscriminatorSpec(10, 64, 3, linear_dilations(10, 8)),
        )

    @classmethod
    def desk(cls) -> "ArchConfig":
        return cls(
            sample_rate=8000,
            upsampler=UpsamplerSpec((2, 4, 5)),
            teacher=ResidualStackSpec(12, 2, 32, 32, 3),
            flow=ResidualStackSpec(6, 1, 16, 16, 3),
            n_flows=2,
            discriminator=DiscriminatorSpec(6, 16, 3, linear_dilations(6, 5)),
        )

    @classmethod
    def named(cls, scale: str) -> "ArchConfig":
        if scale == "full":
            return cls.full()
        if scale == "desk":
            return cls.desk()
        raise ValueError(f"unknown scale {scale!r}; choose 'desk' or 'full'")


@dataclass(frozen=True)
class Schedule:
    warmup_steps: int
    disc_pretrain_steps: int
    joint_steps: int
    lr_g_init: float
    lr_d_init: float
    halve_every: int
    uses_discriminator: bool = True

    def __post_init__(self):
        if min(self.warmup_steps, self.disc_pretrain_steps, self.joint_steps) < 0:
            raise ValueError("phase lengths must be non-negative")
        if self.lr_g_init <= 0 or self.lr_d_init <= 0 or self.halve_every <= 0:
            raise ValueError("learning rates and halve_every must be positive")

    @property
    def generator_steps(self) -> int:
        return self.warmup_steps + self.joint_steps

    @property
    def total_iterations(self) -> int:
        disc = self.disc_pretrain_steps if self.uses_discriminator else 0
        return self.warmup_steps + disc + self.joint_steps

    def phase(self, step: int) -> str:
        """Phase of a global iteration index; disc-pretrain is skipped without a discriminator."""
        if not 0 <= step < self.total_iterations:
            raise IndexError(f"step {step} outside schedule of {self.total_iterations} iterations")
        if step < self.warmup_steps:
            return WARMUP
        if self.uses_discriminator and step < self.warmup_steps + self.disc_pretrain_steps:
            return DISC_PRETRAIN
        return JOINT


@dataclass
class TrainConfig:
    preset: str = "KLAXAD"
    scale: str = "desk"
    batch_size: int = 4
    clip_len: int = 800
    seed: int = 0
    sample_rate: int = 8000
    steps_warmup: int = 200
    steps_disc: int = 50
    steps_joint: int = 300
    total_generator_steps: Optional[int] = None
    lr_g: float = 1e-3
    lr_d: float = 5e-4
    halve_every: int = 200
    lambda_reg: float = DEFAULT_LAMBDA_REG
    checkpoint_every: int = 100
    eval_every: int = 0
    teacher_steps: int = 500
    lr_teacher: float = 2e-3
    teacher_clip_len: int = 800
    teacher_halve_every: int = 200
    corpus_manifest: str = ""
    out_dir: str = "out"
    lambda_kld: Optional[float] = None
    lambda_aux: Optional[float] = None
    lambda_adv: Optional[float] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        resolve_preset(self.preset)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.clip_len < 1 or self.teacher_clip_len < 1:
            raise ValueError("clip lengths must be positive")
        if self.total_generator_steps is not None and self.total_generator_steps != self.steps_warmup + self.steps_joint:
            raise ValueError(
                f"phase accounting mismatch: {self.total_generator_steps} generator steps requested, "
                f"warmup + joint = {self.steps_warmup + self.steps_joint}"
            )
        self.schedule  # noqa: B018 - raises on bad values
        self.arch  # noqa: B018

    @property
    def weights(self) -> LossWeights:
        base = resolve_preset(self.preset)
        overrides = {k: getattr(self, k) for k in ("lambda_kld", "lambda_aux", "lambda_adv") if getattr(self, k) is not None}
        return dataclasses.replace(base, **overrides) if overrides else base

    @property
    def schedule(self) -> Schedule:
        return Schedule(
            self.steps_warmup,
            self.steps_disc,
            self.steps_joint,
            self.lr_g,
            self.lr_d,
            self.halve_every,
            uses_discriminator=self.weights.uses_discriminator,
        )

    @property
    def arch(self) -> ArchConfig:
        arch = ArchConfig.named(self.scale)
        if arch.sample_rate != self.sample_rate:
            arch = dataclasses.replace(arch, sample_rate=self.sample_rate)
        return arch

    @classmethod
    def full(cls, **kw) -> "TrainConfig":
        base = dict(
            scale="full",
            batch_size=8,
            clip_len=20400,
            sample_rate=24000,
            steps_warmup=200_000,
            steps_disc=50_000,
            steps_joint=300_000,
            total_generator_steps=500_000,
            lr_g=1e-4,
            lr_d=5e-5,
            halve_every=200_000,
            checkpoint_every=10_000,
            teacher_steps=1_000_000,
            lr_teacher=1e-3,
            teacher_clip_len=12000,
            teacher_halve_every=200_000,
        )
        base.update(kw)
        return cls(**base)

    # ------------------------------------------------------------ file I/O

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        values = parse_kv_file(path)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_strings(values)

    @classmethod
    def from_strings(cls, values: dict) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in types:
                raise ValueError(f"unknown config key {key!r}")
            kw[name] = _coerce(types[name], raw)
        return cls(**kw)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is not None:
                lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(type_name, raw):
    if not isinstance(raw, str):
        return raw
    t = str(type_name)
    if raw.strip().lower() in ("none", "") and "Optional" in t:
        return None
    if "int" in t:
        v = float(raw)
        if not v.is_integer():
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(v)
    if "float" in t:
        return float(raw)
    return raw.strip()


def parse_kv_file(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out
