"""Training criteria: regularized Gaussian KLD, STFT auxiliary losses,
least-squares adversarial losses and their weighted combination."""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .dsp import fft_size, hann, ms_to_samples
from .student import ComposedGaussian
from .teacher import TeacherOutput

MAG_FLOOR = 1e-7
SC_FLOOR = 1e-12
DEFAULT_LAMBDA_REG = 4.0


# ---------------------------------------------------------------- weights


@dataclass(frozen=True)
class LossWeights:
    lambda_kld: float
    lambda_aux: float
    lambda_adv: float
    lambda_mag: Optional[float] = None  # None: 1 / (N_frame * F_freq) of the batch

    def __post_init__(self):
        for f in ("lambda_kld", "lambda_aux", "lambda_adv"):
            v = getattr(self, f)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{f} must be a non-negative finite number, got {v}")
        if self.lambda_mag is not None and self.lambda_mag < 0:
            raise ValueError(f"lambda_mag must be non-negative, got {self.lambda_mag}")

    @property
    def uses_discriminator(self) -> bool:
        return self.lambda_adv > 0

    @property
    def uses_teacher(self) -> bool:
        return self.lambda_kld > 0


PRESETS: dict[str, LossWeights] = {
    "AX": LossWeights(0.0, 1.00, 0.0),
    "AXAD": LossWeights(0.0, 0.33, 0.67),
    "KLAX": LossWeights(0.09, 0.91, 0.0),
    "KLAXAD": LossWeights(0.03, 0.32, 0.65),
    "KLAXAD*": LossWeights(0.0, 0.33, 0.67),
}


class UnknownPreset(ValueError):
    pass


def resolve_preset(name: str) -> LossWeights:
    key = name.strip().upper()
    if key not in PRESETS:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {{{', '.join(PRESETS)}}}")
    return PRESETS[key]


# ---------------------------------------------------------------- KLD


def gaussian_kl(mu_q, sigma_q, mu_p, sigma_p):
    """Closed-form KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)) on plain arrays."""
    sigma_q = np.asarray(sigma_q, dtype=np.float64)
    sigma_p = np.asarray(sigma_p, dtype=np.float64)
    if np.any(sigma_q <= 0) or np.any(sigma_p <= 0):
        raise ValueError("standard deviations must be positive")
    return np.log(sigma_p / sigma_q) + (sigma_q**2 + (np.asarray(mu_q) - mu_p) ** 2) / (2 * sigma_p**2) - 0.5


def kld_regularized(q: ComposedGaussian, p: TeacherOutput, lambda_reg: float = DEFAULT_LAMBDA_REG) -> Tensor:
    """Mean over samples of lambda_reg * (log s_q - log s_p)^2 + KL(q || p)."""
    if q.mu.shape != p.mu.shape:
        raise ShapeError(f"kld: student {q.mu.shape} and teacher {p.mu.shape} lengths differ")
    for t in (q.log_sigma, p.log_sigma):
        if not np.all(np.isfinite(t.data)):
            raise ValueError("kld: non-positive or non-finite standard deviation")
    log_ratio = q.log_sigma - p.log_sigma
    kl = (
        -log_ratio
        + 0.5 * (ad.exp(2.0 * log_ratio) + ad.square(q.mu - p.mu) * ad.exp(-2.0 * p.log_sigma))
        - 0.5
    )
    return ad.mean(kl + lambda_reg * ad.square(log_ratio))


# ---------------------------------------------------------------- STFT losses


@dataclass(frozen=True)
class STFTSettings:
    frame_len: int
    shift: int

    @classmethod
    def from_ms(cls, sample_rate: int, frame_ms: float = 25.0, shift_ms: float = 5.0) -> "STFTSettings":
        return cls(ms_to_samples(frame_ms, sample_rate), ms_to_samples(shift_ms, sample_rate))

    @property
    def n_fft(self) -> int:
        return fft_size(self.frame_len)

    @property
    def n_freq(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, length: int) -> int:
        return (length - self.frame_len) // self.shift + 1


@functools.lru_cache(maxsize=8)
def _dft_basis(frame_len: int, n_fft: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.arange(frame_len)[:, None]
    k = np.arange(n_fft // 2 + 1)[None, :]
    ang = 2.0 * np.pi * n * k / n_fft
    w = hann(frame_len)[:, None]
    # the Hann window is folded into the basis
    return w * np.cos(ang), -w * np.sin(ang)


def stft_mag(x, settings: STFTSettings) -> Tensor:
    """Differentiable |STFT|: (B, T) -> (B, N_frame, F_freq)."""
    x = ad.as_tensor(x)
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    cos_b, sin_b = _dft_basis(settings.frame_len, settings.n_fft)
    frames = ad.frame(x, settings.frame_len, settings.shift)
    re = frames @ Tensor(cos_b)
    im = frames @ Tensor(sin_b)
    return ad.sqrt(ad.square(re) + ad.square(im))


def _pair(x, x_hat) -> tuple[Tensor, Tensor]:
    x, x_hat = ad.as_tensor(x), ad.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ShapeError(f"STFT loss: target {x.shape} and estimate {x_hat.shape} differ")
    return x, x_hat


def _sc_from_mags(mag: Tensor, mag_hat: Tensor) -> Tensor:
    num = ad.sqrt(ad.tsum(ad.square(mag - mag_hat), axis=(1, 2)))
    den = ad.sqrt(ad.clamp_min(ad.tsum(ad.square(mag), axis=(1, 2)), SC_FLOOR**2))
    return ad.mean(num / den)


def _mag_from_mags(mag: Tensor, mag_hat: Tensor) -> Tensor:
    diff = ad.log(ad.clamp_min(mag, MAG_FLOOR)) - ad.log(ad.clamp_min(mag_hat, MAG_FLOOR))
    return ad.mean(ad.tsum(ad.tabs(diff), axis=(1, 2)))


def spectral_convergence(x, x_hat, settings: STFTSettings) -> Tensor:
    """||M - M_hat||_F / ||M||_F averaged over the batch."""
    x, x_hat = _pair(x, x_hat)
    return _sc_from_mags(stft_mag(x, settings), stft_mag(x_hat, settings))


def log_stft_magnitude(x, x_hat, settings: STFTSettings) -> Tensor:
    """L1 norm of the log-magnitude difference (summed over frames and bins)."""
    x, x_hat = _pair(x, x_hat)
    return _mag_from_mags(stft_mag(x, settings), stft_mag(x_hat, settings))


def aux_loss(x, x_hat, settings: STFTSettings, lambda_mag: float | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (L_SC + lambda_mag * L_MAG, L_SC, L_MAG).

    ``lambda_mag`` defaults to 1 / (N_frame * F_freq) of the current shape.
    """
    x, x_hat = _pair(x, x_hat)
    mag = stft_mag(x, settings)
    mag_hat = stft_mag(x_hat, settings)
    sc = _sc_from_mags(mag, mag_hat)
    lm = _mag_from_mags(mag, mag_hat)
    if lambda_mag is None:
        lambda_mag = 1.0 / (mag.shape[1] * mag.shape[2])
    return sc + lambda_mag * lm, sc, lm


# ---------------------------------------------------------------- adversarial


def adv_loss_generator(d_fake) -> Tensor:
    """Mean of (1 - D(x_hat))^2."""
    return ad.mean(ad.square(1.0 - ad.as_tensor(d_fake)))


def adv_loss_discriminator(d_real, d_fake) -> Tensor:
    """Mean of (1 - D(x))^2 plus mean of D(x_hat)^2."""
    return ad.mean(ad.square(1.0 - ad.as_tensor(d_real))) + ad.mean(ad.square(ad.as_tensor(d_fake)))


# ---------------------------------------------------------------- combination


def generator_objective(
    weights: LossWeights,
    kld: Callable[[], Tensor],
    aux: Callable[[], Tensor],
    adv: Callable[[], Tensor],
) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the three criteria.

    Each term is a thunk and is only evaluated when its weight is positive,
    so a zero KLD weight never touches the teacher and a zero adversarial
    weight never touches the discriminator.
    """
    total = Tensor(0.0)
    values: dict[str, float] = {}
    for name, lam, fn in (("kld", weights.lambda_kld, kld), ("aux", weights.lambda_aux, aux), ("adv_g", weights.lambda_adv, adv)):
        if lam > 0:
            term = fn()
            values[name] = term.item()
            total = total + lam * term
    return total, values


# ---------------------------------------------------------------- logging


@dataclass
class LossReport:
    step: int
    phase: str
    kld: Optional[float] = None
    sc: Optional[float] = None
    mag: Optional[float] = None
    aux: Optional[float] = None
    adv_g: Optional[float] = None
    adv_d: Optional[float] = None
    total_g: Optional[float] = None
    lr_g: Optional[float] = None
    lr_d: Optional[float] = None

    def weighted_total(self, w: LossWeights) -> float:
        return (
            w.lambda_kld * (self.kld or 0.0)
            + w.lambda_aux * (self.aux or 0.0)
            + w.lambda_adv * (self.adv_g or 0.0)
        )


CSV_COLUMNS = ("step", "kld", "sc", "mag", "aux", "adv_g", "adv_d", "total_g", "lr_g", "lr_d", "phase")


class LossLog:
    """Appends LossReport rows to a CSV; absent terms are written empty."""

    def __init__(self, path: str | Path | None, append: bool = False):
        self.path = Path(path) if path else None
        self.rows: list[LossReport] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not (append and self.path.exists()):
                with self.path.open("w", newline="") as fh:
                    csv.writer(fh).writerow(CSV_COLUMNS)

    def append(self, report: LossReport) -> None:
        self.rows.append(report)
        if self.path is None:
            return
        row = asdict(report)
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow(["" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else row[c] for c in CSV_COLUMNS])


def read_loss_csv(path) -> list[LossReport]:
    out = []
    names = {f.name for f in fields(LossReport)}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                if k not in names:
                    continue
                if k == "step":
                    kw[k] = int(v)
                elif k == "phase":
                    kw[k] = v
                else:
                    kw[k] = None if v == "" else float(v)
            out.append(LossReport(**kw))
    return out
