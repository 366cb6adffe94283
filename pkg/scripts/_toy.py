"""Toy corpus shared by the experiment scripts."""

from pdd_forge.config import ArchConfig
from pdd_forge.dsp import default_splits, make_toy_corpus
from pdd_forge.trainer import Corpus, build_corpus


def toy_corpus(n_utts: int = 10, duration: float = 1.0, seed: int = 0, arch: ArchConfig | None = None) -> Corpus:
    arch = arch or ArchConfig.desk()
    clips = make_toy_corpus(n_utts, duration, arch.sample_rate, seed)
    splits = default_splits(len(clips))
    return build_corpus([(f"utt{i:03d}", c, s) for i, (c, s) in enumerate(zip(clips, splits))], arch)
