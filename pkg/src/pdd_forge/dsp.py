"""Audio I/O, STFT, log-mel features, normalization, silence trimming and a
synthetic speech-like corpus."""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

SUPPORTED_TOY_RATES = (4000, 8000, 16000, 24000)
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8


class WavError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def ms_to_samples(ms: float, sample_rate: int) -> int:
    return int(round(ms * sample_rate / 1000.0))


# ---------------------------------------------------------------- wav


def read_wav(path) -> AudioClip:
    """Read a mono PCM16 WAV into [-1, 1) floats."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            n = fh.getnframes()
            raw = fh.readframes(n)
    except wave.Error as exc:
        raise WavError(f"{path}: unsupported or malformed WAV ({exc})") from None
    except EOFError:
        raise WavError(f"{path}: truncated file") from None
    if channels != 1:
        raise WavError(f"unsupported channel count {channels}")
    if width != 2:
        raise WavError(f"unsupported sample width {8 * width} bits (PCM16 required)")
    if len(raw) < 2 * n:
        raise WavError(f"{path}: truncated file ({len(raw) // 2} of {n} frames)")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return AudioClip(pcm / 32768.0, rate)


def write_wav(clip: AudioClip, path) -> None:
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(clip.sample_rate))
        fh.writeframes(pcm.tobytes())


# ---------------------------------------------------------------- STFT


def fft_size(frame_len: int) -> int:
    return 1 << (int(frame_len) - 1).bit_length()


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(length: int, frame_len: int, shift: int) -> int:
    return (length - frame_len) // shift + 1


def stft_magnitude(samples, frame_len: int, shift: int) -> np.ndarray:
    """|STFT| with a Hann window, no centering, FFT zero-padded to a power of two.

    Returns an (N_frame, fft_len // 2 + 1) matrix.
    """
    x = samples.samples if isinstance(samples, AudioClip) else np.asarray(samples, dtype=np.float64)
    if len(x) < frame_len:
        raise ValueError(f"clip of {len(x)} samples is shorter than one frame ({frame_len})")
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::shift]
    return np.abs(np.fft.rfft(frames * hann(frame_len), n=fft_size(frame_len), axis=-1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = 80) -> np.ndarray:
    """Triangular HTK-mel filters from 0 Hz to Nyquist, shape (n_mels, n_fft//2+1).

    Filters too narrow to straddle any FFT bin get a unit weight on the bin
    nearest their centre so every row carries energy.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    fb = np.maximum(0.0, np.minimum((freqs - lo) / (mid - lo), (hi - freqs) / (hi - mid)))
    for row in np.flatnonzero(fb.sum(axis=1) <= 0):
        fb[row, np.argmin(np.abs(freqs - edges[row + 1]))] = 1.0
    return fb


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (N_frame, n_mels), natural-log domain
    frame_len_ms: float
    shift_ms: float
    n_mels: int


def log_mel(clip: AudioClip, n_mels: int = 80, frame_ms: float = 25.0, shift_ms: float = 5.0) -> MelSpectrogram:
    frame_len = ms_to_samples(frame_ms, clip.sample_rate)
    shift = ms_to_samples(shift_ms, clip.sample_rate)
    mag = stft_magnitude(clip, frame_len, shift)
    fb = mel_filterbank(clip.sample_rate, fft_size(frame_len), n_mels)
    return MelSpectrogram(np.log(np.maximum(mag @ fb.T, LOG_FLOOR)), frame_ms, shift_ms, n_mels)


# ---------------------------------------------------------------- normalization


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, feature_sets) -> "FeatureStats":
        """Per-band statistics pooled over every frame of the given (N, bands) arrays."""
        stacked = np.concatenate([np.asarray(f, dtype=np.float64) for f in feature_sets], axis=0)
        return cls(stacked.mean(axis=0), np.maximum(stacked.std(axis=0), STD_FLOOR))

    def _check(self, feats: np.ndarray) -> None:
        if feats.shape[-1] != self.mean.shape[0]:
            raise ValueError(f"feature has {feats.shape[-1]} bands, stats have {self.mean.shape[0]}")


def normalize(features, stats: FeatureStats) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    stats._check(feats)
    return (feats - stats.mean) / stats.std


def denormalize(features, stats: FeatureStats) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    stats._check(feats)
    return feats * stats.std + stats.mean


# ---------------------------------------------------------------- trimming


class TrimResult(NamedTuple):
    clip: AudioClip
    start: int
    end: int
    all_silent: bool


def trim_silence(clip: AudioClip, threshold_db: float = -40.0, window_ms: float = 25.0) -> TrimResult:
    """Drop leading/trailing windows whose RMS sits ``threshold_db`` below the clip peak."""
    x = clip.samples
    peak = np.max(np.abs(x)) if len(x) else 0.0
    if peak == 0.0:
        logger.warning("clip is entirely silent; trimmed to empty")
        return TrimResult(AudioClip(np.zeros(0), clip.sample_rate), 0, 0, True)
    win = max(1, ms_to_samples(window_ms, clip.sample_rate))
    n_win = -(-len(x) // win)
    loud = np.zeros(n_win, dtype=bool)
    for i in range(n_win):
        seg = x[i * win : (i + 1) * win]
        rms = np.sqrt(np.mean(seg * seg))
        loud[i] = rms > 0 and 20.0 * np.log10(rms / peak) >= threshold_db
    idx = np.flatnonzero(loud)
    if len(idx) == 0:
        logger.warning("no window above %.1f dB; trimmed to empty", threshold_db)
        return TrimResult(AudioClip(np.zeros(0), clip.sample_rate), 0, 0, True)
    start = idx[0] * win
    end = min(len(x), (idx[-1] + 1) * win)
    return TrimResult(AudioClip(x[start:end].copy(), clip.sample_rate), int(start), int(end), False)


# ---------------------------------------------------------------- toy corpus


def make_toy_corpus(n_utts: int, duration_s: float, sample_rate: int, seed: int) -> list[AudioClip]:
    """Deterministic harmonic 'utterances' with gliding f0, 1/k harmonics,
    a smooth amplitude envelope, and noise 30 dB below the signal RMS."""
    if sample_rate not in SUPPORTED_TOY_RATES:
        raise ValueError(f"sample rate must be one of {SUPPORTED_TOY_RATES}, got {sample_rate}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    clips = []
    for _ in range(n_utts):
        f_start, f_end = rng.uniform(80.0, 300.0, size=2)
        vib_rate = rng.uniform(2.0, 6.0)
        vib_depth = rng.uniform(0.0, 0.05)
        f0 = np.linspace(f_start, f_end, n) * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t))
        f0 = np.clip(f0, 80.0, 300.0)
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        n_harm = int(rng.integers(1, 6))
        sig = np.zeros(n)
        for k in range(1, n_harm + 1):
            sig += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
        # raised-cosine envelope with random syllable-rate modulation
        env = np.sin(np.pi * np.arange(n) / max(n - 1, 1)) ** 2
        env *= 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(1.0, 4.0) * t + rng.uniform(0, 2 * np.pi)) ** 2
        sig *= env
        rms = np.sqrt(np.mean(sig * sig))
        sig += rng.standard_normal(n) * rms * 10 ** (-30 / 20)
        sig *= 0.9 / np.max(np.abs(sig))
        clips.append(AudioClip(sig, sample_rate))
    return clips


# ---------------------------------------------------------------- manifest

SPLITS = ("train", "dev", "eval")


def write_manifest(path, entries: list[tuple[str, str]]) -> None:
    lines = []
    for p, split in entries:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        lines.append(f"{p}\t{split}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[tuple[Path, str]]:
    """Entries with paths resolved relative to the manifest's directory."""
    base = Path(path).parent
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in SPLITS:
            raise ValueError(f"{path}:{lineno}: expected '<path>\\t<train|dev|eval>'")
        p = Path(parts[0])
        out.append((p if p.is_absolute() else base / p, parts[1]))
    return out


def default_splits(n: int) -> list[str]:
    """Train/dev/eval labels for n utterances: one dev and one eval clip per ten, at least one each when n >= 3."""
    if n < 3:
        return ["train"] * n
    n_held = max(1, n // 10)
    return ["train"] * (n - 2 * n_held) + ["dev"] * n_held + ["eval"] * n_held
