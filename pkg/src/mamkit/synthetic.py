"""Synthetic harmonic-tone corpora for desk-scale experiments and tests."""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Chunk, ManifestEntry, Sex, Split, window_audio
from .dsp import AudioClip, DspConfig, FeatureKind, extract


def harmonic_tone(
    f0: float,
    duration: float,
    rng: np.random.Generator,
    sample_rate: int = 16000,
    n_harmonics: int = 6,
    glide: float = 0.0,
    noise_level: float = 0.02,
    amplitude: float = 0.5,
) -> np.ndarray:
    """Voiced-like tone: decaying harmonics of a (possibly gliding) f0, slow tremolo, white noise.

    ``glide`` is the relative f0 change over the clip (0.2 raises f0 by 20 %).
    """
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    inst_f0 = f0 * (1.0 + glide * t / max(duration, 1e-9))
    phase = 2.0 * np.pi * np.cumsum(inst_f0) / sample_rate
    signal = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        signal += rng.uniform(0.5, 1.0) / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    rate = rng.uniform(2.0, 5.0)
    envelope = 0.75 + 0.25 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    signal *= envelope / np.max(np.abs(signal))
    signal = amplitude * signal + noise_level * rng.standard_normal(n)
    return np.clip(signal, -1.0, 1.0)


def two_tone_corpus(
    n_files: int,
    rng: np.random.Generator,
    f0s: Tuple[float, float] = (150.0, 250.0),
    durations: Tuple[float, float] = (3.0, 5.0),
    split_fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2),
    sample_rate: int = 16000,
) -> List[Tuple[AudioClip, ManifestEntry]]:
    """Balanced two-class corpus: class 0 (``Sex.M``) at ``f0s[0]``, class 1 (``Sex.F``) at ``f0s[1]``.

    Files alternate between classes; each class is split train/validation/test
    by ``split_fractions``.
    """
    items = []
    per_class = [0, 0]
    n_class = [(n_files + 1) // 2, n_files // 2]
    for i in range(n_files):
        cls = i % 2
        j = per_class[cls]
        per_class[cls] += 1
        frac = j / n_class[cls]
        if frac < split_fractions[0]:
            split = Split.TRAIN
        elif frac < split_fractions[0] + split_fractions[1]:
            split = Split.VALIDATION
        else:
            split = Split.TEST
        f0 = f0s[cls] * rng.uniform(0.95, 1.05)
        duration = rng.uniform(*durations)
        samples = harmonic_tone(f0, duration, rng, sample_rate, glide=rng.uniform(-0.05, 0.05))
        entry = ManifestEntry(
            path=f"synthetic/tone_{i:04d}.wav",
            speaker_id=f"spk{i:04d}",
            split=split,
            sex=Sex.M if cls == 0 else Sex.F,
            age=int(rng.integers(18, 80)),
        )
        items.append((AudioClip(samples, sample_rate, entry.path), entry))
    return items


def glide_corpus(
    n_clips: int,
    rng: np.random.Generator,
    f0_range: Tuple[float, float] = (100.0, 300.0),
    duration: float = 4.0,
    sample_rate: int = 16000,
) -> List[AudioClip]:
    """Unlabeled tones with random f0 and random glides, one window long each."""
    clips = []
    for i in range(n_clips):
        samples = harmonic_tone(
            rng.uniform(*f0_range), duration, rng, sample_rate, glide=rng.uniform(-0.4, 0.4)
        )
        clips.append(AudioClip(samples, sample_rate, f"glide_{i:04d}"))
    return clips


def featurize(
    clips: Sequence[AudioClip],
    entries: Optional[Sequence[Optional[ManifestEntry]]] = None,
    kind: FeatureKind = FeatureKind.MEL,
    cfg: DspConfig = DspConfig(),
    chunk_seconds: float = 4.0,
    step_seconds: float = 1.0,
) -> List[Chunk]:
    """Window every clip and extract features, one :class:`Chunk` per window."""
    entries = entries if entries is not None else [None] * len(clips)
    chunks = []
    for clip, entry in zip(clips, entries):
        for i, window in enumerate(window_audio(clip, chunk_seconds, step_seconds)):
            features = extract(window, kind, cfg)
            features = features.with_values(features.values.astype(np.float32))
            chunks.append(Chunk(features, entry, i, file_id=entry.path if entry else clip.source_id))
    return chunks
