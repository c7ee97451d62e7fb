"""Masked-acoustic-modeling alterations: time, channel, noise, and their composition.

Every alteration is a pure function of (features, config, random stream) and
returns an :class:`AlterationOutcome` whose masks record what was selected for
reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .dsp import FeatureMatrix
from .errors import ConfigError, InvalidInput

ZERO, RANDOM, KEEP = 0, 1, 2
BRANCH_NAMES = ("zero", "random", "keep")


@dataclass(frozen=True)
class TimeMaskConfig:
    mask_fraction: float = 0.15
    chunk_size: int = 7
    p_zero: float = 0.80
    p_random: float = 0.10
    p_keep: float = 0.10

    def __post_init__(self):
        if not math.isclose(self.p_zero + self.p_random + self.p_keep, 1.0, abs_tol=1e-9):
            raise ConfigError("p_zero + p_random + p_keep must equal 1")
        if min(self.p_zero, self.p_random, self.p_keep) < 0:
            raise ConfigError("branch probabilities must be non-negative")
        if not 0 < self.mask_fraction < 1:
            raise ConfigError("mask_fraction must lie in (0, 1)")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be >= 1")

    def n_chunks(self, n_frames: int) -> int:
        # round half up
        return int(math.floor(self.mask_fraction * n_frames / self.chunk_size + 0.5))


@dataclass(frozen=True)
class ChannelMaskConfig:
    max_width_fraction: float = 0.10

    def __post_init__(self):
        if not 0 <= self.max_width_fraction < 1:
            raise ConfigError("max_width_fraction must lie in [0, 1)")

    def max_width(self, n_channels: int) -> int:
        return int(math.floor(self.max_width_fraction * n_channels))


@dataclass(frozen=True)
class NoiseMaskConfig:
    apply_probability: float = 0.10
    noise_variance: float = 0.2

    def __post_init__(self):
        if not 0 <= self.apply_probability <= 1:
            raise ConfigError("apply_probability must lie in [0, 1]")
        if self.noise_variance <= 0:
            raise ConfigError("noise_variance must be positive")


@dataclass
class AlterationOutcome:
    altered: FeatureMatrix
    frame_mask: np.ndarray
    channel_mask: np.ndarray
    # bookkeeping for statistics; not needed to train
    chunk_starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    chunk_branches: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    zeroed_frames: Optional[np.ndarray] = None
    channel_block: Tuple[int, int] = (0, 0)  # (start, width)
    noise_applied: bool = False


def _blank_outcome(features: FeatureMatrix, values: np.ndarray) -> AlterationOutcome:
    t, h = features.shape
    return AlterationOutcome(
        altered=features.with_values(values),
        frame_mask=np.zeros(t, dtype=bool),
        channel_mask=np.zeros(h, dtype=bool),
        zeroed_frames=np.zeros(t, dtype=bool),
    )


def time_alteration(
    features: FeatureMatrix, cfg: TimeMaskConfig, rng: np.random.Generator
) -> AlterationOutcome:
    """Select frame chunks and zero, replace, or keep each one.

    Chunk starts are drawn without replacement. Every chunk draws its own
    branch. Replacement content is copied from the unaltered input at a
    uniformly random different offset. Where chunks overlap, zeroing wins
    over replacement.
    """
    x = features.values
    t = x.shape[0]
    c = cfg.chunk_size
    if t < c:
        raise InvalidInput(f"{t} frames is fewer than chunk_size={c}")
    out = x.copy()
    result = _blank_outcome(features, out)
    n_positions = t - c + 1
    n = min(cfg.n_chunks(t), n_positions)
    if n == 0:
        return result
    starts = np.sort(rng.choice(n_positions, size=n, replace=False))
    branches = rng.choice(3, size=n, p=[cfg.p_zero, cfg.p_random, cfg.p_keep])
    frame_mask = result.frame_mask
    zeroed = result.zeroed_frames
    for start, branch in zip(starts, branches):
        frame_mask[start : start + c] = True
        if branch == RANDOM:
            if n_positions > 1:
                src = int(rng.integers(0, n_positions - 1))
                src += src >= start  # skip the chunk's own offset
            else:
                src = int(start)
            out[start : start + c] = x[src : src + c]
        elif branch == ZERO:
            zeroed[start : start + c] = True
    out[zeroed] = 0.0
    result.chunk_starts = starts
    result.chunk_branches = branches
    return result


def channel_alteration(
    features: FeatureMatrix, cfg: ChannelMaskConfig, rng: np.random.Generator
) -> AlterationOutcome:
    """Zero a block of ``W_C ~ U{0..W}`` consecutive channels at every frame."""
    x = features.values
    h = x.shape[1]
    if h < 2:
        raise InvalidInput("channel alteration needs at least two channels")
    out = x.copy()
    result = _blank_outcome(features, out)
    w = min(cfg.max_width(h), h - 1)
    width = int(rng.integers(0, w + 1))
    if width > 0:
        start = int(rng.integers(0, h - width))  # {0..H-W_C-1}
        out[:, start : start + width] = 0.0
        result.channel_mask[start : start + width] = True
        result.channel_block = (start, width)
    return result


def noise_alteration(
    features: FeatureMatrix, cfg: NoiseMaskConfig, rng: np.random.Generator
) -> AlterationOutcome:
    """With probability ``apply_probability`` add i.i.d. N(0, noise_variance) to every entry."""
    x = features.values
    fire = rng.random() < cfg.apply_probability
    if fire:
        noise = rng.normal(0.0, math.sqrt(cfg.noise_variance), size=x.shape)
        out = (x + noise).astype(x.dtype, copy=False)
    else:
        out = x.copy()
    result = _blank_outcome(features, out)
    result.noise_applied = bool(fire)
    return result


def compose_alterations(
    features: FeatureMatrix,
    time_cfg: TimeMaskConfig,
    channel_cfg: ChannelMaskConfig,
    noise_cfg: NoiseMaskConfig,
    rng: np.random.Generator,
) -> AlterationOutcome:
    """Time, then channel, then noise alteration on the running result."""
    timed = time_alteration(features, time_cfg, rng)
    channeled = channel_alteration(timed.altered, channel_cfg, rng)
    noised = noise_alteration(channeled.altered, noise_cfg, rng)
    return AlterationOutcome(
        altered=noised.altered,
        frame_mask=timed.frame_mask,
        channel_mask=channeled.channel_mask,
        chunk_starts=timed.chunk_starts,
        chunk_branches=timed.chunk_branches,
        zeroed_frames=timed.zeroed_frames,
        channel_block=channeled.channel_block,
        noise_applied=noised.noise_applied,
    )


@dataclass(frozen=True)
class MaskingConfig:
    """Bundle of the three alteration configs used by a pretraining technique."""

    time: TimeMaskConfig = TimeMaskConfig()
    channel: ChannelMaskConfig = ChannelMaskConfig()
    noise: NoiseMaskConfig = NoiseMaskConfig()


def alter(technique: str, features: FeatureMatrix, cfg: MaskingConfig, rng: np.random.Generator) -> AlterationOutcome:
    technique = technique.lower()
    if technique == "time":
        return time_alteration(features, cfg.time, rng)
    if technique == "channel":
        return channel_alteration(features, cfg.channel, rng)
    if technique == "noise":
        return noise_alteration(features, cfg.noise, rng)
    if technique == "combined":
        return compose_alterations(features, cfg.time, cfg.channel, cfg.noise, rng)
    raise ConfigError(f"no alteration for technique {technique!r}")


def mask_statistics(
    features: FeatureMatrix, technique: str, trials: int, seed: int, cfg: MaskingConfig = MaskingConfig()
) -> dict:
    """Monte-Carlo summary of ``trials`` alteration draws on one feature matrix."""
    rng = np.random.default_rng(seed)
    t, h = features.shape
    branch_counts = np.zeros(3, dtype=np.int64)
    width_hist = np.zeros(h + 1, dtype=np.int64)
    masked = zeroed = 0
    noise_fired = 0
    noise_sum = noise_sq = 0.0
    noise_n = 0
    technique = technique.lower()
    for _ in range(trials):
        outcome = alter(technique, features, cfg, rng)
        masked += int(outcome.frame_mask.sum())
        zeroed += int(outcome.zeroed_frames.sum()) if outcome.zeroed_frames is not None else 0
        branch_counts += np.bincount(outcome.chunk_branches, minlength=3)
        width_hist[outcome.channel_block[1]] += 1
        if outcome.noise_applied:
            noise_fired += 1
            if technique == "noise":
                diff = outcome.altered.values.astype(np.float64) - features.values
                noise_sum += float(diff.sum())
                noise_sq += float(np.square(diff).sum())
                noise_n += diff.size
    total_branches = int(branch_counts.sum())
    stats = {
        "technique": technique,
        "trials": trials,
        "seed": seed,
        "frames": t,
        "channels": h,
        "mask_fraction": masked / (trials * t),
        "zeroed_fraction": zeroed / (trials * t),
        "branch_counts": {name: int(n) for name, n in zip(BRANCH_NAMES, branch_counts)},
        "branch_frequencies": {
            name: (int(n) / total_branches if total_branches else 0.0)
            for name, n in zip(BRANCH_NAMES, branch_counts)
        },
        "channel_width_histogram": {str(w): int(n) for w, n in enumerate(width_hist) if n},
        "mean_channel_width": float(np.dot(np.arange(h + 1), width_hist) / trials),
        "noise_application_rate": noise_fired / trials,
    }
    if noise_n:
        mean = noise_sum / noise_n
        stats["noise_variance"] = noise_sq / noise_n - mean * mean
    return stats
