import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mamkit.dsp import FeatureKind, FeatureMatrix
from mamkit.errors import ConfigError, InvalidInput
from mamkit.masking import (
    KEEP,
    RANDOM,
    ZERO,
    ChannelMaskConfig,
    MaskingConfig,
    NoiseMaskConfig,
    TimeMaskConfig,
    alter,
    channel_alteration,
    compose_alterations,
    mask_statistics,
    noise_alteration,
    time_alteration,
)


def features(t=321, h=128, seed=0):
    values = np.random.default_rng(seed).normal(size=(t, h)).astype(np.float32) + 3.0
    return FeatureMatrix(values, FeatureKind.MFCC)


# -- config --------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        TimeMaskConfig(p_zero=0.5)
    with pytest.raises(ConfigError):
        TimeMaskConfig(mask_fraction=0.0)
    with pytest.raises(ConfigError):
        ChannelMaskConfig(max_width_fraction=1.0)
    with pytest.raises(ConfigError):
        NoiseMaskConfig(noise_variance=0.0)


def test_chunk_count_rounding():
    cfg = TimeMaskConfig()
    assert cfg.n_chunks(321) == 7  # 6.88 rounds up
    assert cfg.n_chunks(500) == 11  # 10.71
    assert TimeMaskConfig(mask_fraction=0.1, chunk_size=5).n_chunks(25) == 1  # 0.5 rounds half up


# -- time alteration -----------------------------------------------------------


def oracle_union_size(t, c, n, trials, seed):
    rnd = random.Random(seed)
    total = 0
    for _ in range(trials):
        covered = set()
        for s in rnd.sample(range(t - c + 1), n):
            covered.update(range(s, s + c))
        total += len(covered)
    return total / trials


def test_time_alteration_on_321_frames():
    x = features()
    rng = np.random.default_rng(0)
    flagged = []
    for _ in range(2000):
        out = time_alteration(x, TimeMaskConfig(), rng)
        assert len(out.chunk_starts) == 7
        assert len(set(out.chunk_starts.tolist())) == 7
        count = int(out.frame_mask.sum())
        assert 7 <= count <= 49
        flagged.append(count)
    expected = oracle_union_size(321, 7, 7, 20000, seed=1)
    assert abs(np.mean(flagged) - expected) < 0.15


def test_tiny_fraction_is_identity():
    x = features()
    out = time_alteration(x, TimeMaskConfig(mask_fraction=0.01), np.random.default_rng(0))
    assert not out.frame_mask.any()
    np.testing.assert_array_equal(out.altered.values, x.values)


def test_zeroed_fraction_on_500_frames():
    stats = mask_statistics(features(500, 8), "time", 10000, seed=3)
    assert abs(stats["zeroed_fraction"] - 0.12) <= 0.005
    assert abs(stats["mask_fraction"] - 0.15) <= 0.01


def test_branches_realized_per_chunk():
    x = features(100, 4)
    for branch, p in ((ZERO, (1, 0, 0)), (KEEP, (0, 0, 1))):
        cfg = TimeMaskConfig(mask_fraction=0.14, p_zero=p[0], p_random=p[1], p_keep=p[2])
        out = time_alteration(x, cfg, np.random.default_rng(4))
        assert np.all(out.chunk_branches == branch)
        assert out.frame_mask.sum() >= 7
        if branch == ZERO:
            assert not out.altered.values[out.frame_mask].any()
        else:
            np.testing.assert_array_equal(out.altered.values, x.values)


def test_random_branch_copies_another_clean_offset():
    x = features(100, 4)
    cfg = TimeMaskConfig(mask_fraction=0.07, p_zero=0.0, p_random=1.0, p_keep=0.0)
    for seed in range(30):
        out = time_alteration(x, cfg, np.random.default_rng(seed))
        (s,) = out.chunk_starts
        block = out.altered.values[s : s + 7]
        sources = [o for o in range(94) if np.array_equal(x.values[o : o + 7], block)]
        assert len(sources) == 1 and sources[0] != s
        np.testing.assert_array_equal(out.altered.values[~out.frame_mask], x.values[~out.frame_mask])


def test_zero_wins_over_replacement_on_overlap():
    x = features(30, 3)
    cfg = TimeMaskConfig(mask_fraction=0.9, chunk_size=7, p_zero=0.5, p_random=0.5, p_keep=0.0)
    for seed in range(20):
        out = time_alteration(x, cfg, np.random.default_rng(seed))
        assert not out.altered.values[out.zeroed_frames].any()


def test_too_few_frames():
    with pytest.raises(InvalidInput):
        time_alteration(features(6, 4), TimeMaskConfig(), np.random.default_rng(0))


# -- channel alteration --------------------------------------------------------


def test_channel_width_zero_is_identity():
    x = features(50, 128)
    assert ChannelMaskConfig().max_width(128) == 12
    for seed in range(200):
        out = channel_alteration(x, ChannelMaskConfig(), np.random.default_rng(seed))
        if out.channel_block[1] == 0:
            np.testing.assert_array_equal(out.altered.values, x.values)
            assert not out.channel_mask.any()
            return
    pytest.fail("no zero-width draw in 200 seeds")


def test_channel_block_inside_range():
    x = features(10, 128)
    rng = np.random.default_rng(1)
    for _ in range(2000):
        out = channel_alteration(x, ChannelMaskConfig(), rng)
        start, width = out.channel_block
        assert 0 <= width <= 12
        assert 0 <= start and start + width <= 127
        idx = np.flatnonzero(out.channel_mask)
        assert idx.tolist() == list(range(start, start + width))
        assert not out.altered.values[:, out.channel_mask].any()


def test_channel_mean_width():
    stats = mask_statistics(features(4, 128), "channel", 10000, seed=2)
    assert abs(stats["mean_channel_width"] - 6.0) <= 0.15
    assert set(int(k) for k in stats["channel_width_histogram"]) == set(range(13))


def test_channel_needs_two_channels():
    with pytest.raises(InvalidInput):
        channel_alteration(features(10, 1), ChannelMaskConfig(), np.random.default_rng(0))


# -- noise alteration ----------------------------------------------------------


def test_noise_identity_branch():
    x = features(20, 8)
    rng = np.random.default_rng(0)
    for _ in range(50):
        out = noise_alteration(x, NoiseMaskConfig(), rng)
        assert not out.frame_mask.any() and not out.channel_mask.any()
        if not out.noise_applied:
            np.testing.assert_array_equal(out.altered.values, x.values)


def test_noise_rate_and_variance():
    stats = mask_statistics(features(16, 32), "noise", 100000, seed=5)
    assert abs(stats["noise_application_rate"] - 0.10) <= 0.005
    assert abs(stats["noise_variance"] - 0.2) <= 0.01


# -- composition ---------------------------------------------------------------


def test_composition_of_identities():
    x = features(64, 16)
    out = compose_alterations(
        x,
        TimeMaskConfig(mask_fraction=0.01),
        ChannelMaskConfig(max_width_fraction=0.0),
        NoiseMaskConfig(apply_probability=0.0),
        np.random.default_rng(0),
    )
    np.testing.assert_array_equal(out.altered.values, x.values)


def test_composition_is_seeded():
    x = features(100, 32)
    cfg = MaskingConfig(noise=NoiseMaskConfig(apply_probability=0.5))
    a = alter("combined", x, cfg, np.random.default_rng(9))
    b = alter("combined", x, cfg, np.random.default_rng(9))
    assert np.array_equal(a.altered.values, b.altered.values)
    assert np.array_equal(a.frame_mask, b.frame_mask)


def test_composition_marginals():
    stats = mask_statistics(features(500, 128), "combined", 4000, seed=6)
    # stage tolerances doubled
    assert abs(stats["mask_fraction"] - 0.145) <= 0.02
    assert abs(stats["zeroed_fraction"] - 0.12) <= 0.01
    assert abs(stats["mean_channel_width"] - 6.0) <= 0.30
    assert abs(stats["noise_application_rate"] - 0.10) <= 0.02


def test_unknown_technique():
    with pytest.raises(ConfigError):
        alter("baseline", features(10, 4), MaskingConfig(), np.random.default_rng(0))


# -- properties ----------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(
    t=st.integers(7, 120),
    h=st.integers(2, 40),
    seed=st.integers(0, 2**32 - 1),
    technique=st.sampled_from(["time", "channel", "noise", "combined"]),
)
def test_shape_bound_and_fidelity(t, h, seed, technique):
    x = features(t, h, seed=seed % 1000)
    out = alter(technique, x, MaskingConfig(), np.random.default_rng(seed))
    assert out.altered.shape == x.shape
    assert out.frame_mask.shape == (t,) and out.channel_mask.shape == (h,)
    assert out.frame_mask.sum() / t <= 0.15 + 7 / t + 1e-12
    if not out.noise_applied:
        keep = np.ix_(~out.frame_mask, ~out.channel_mask)
        np.testing.assert_array_equal(out.altered.values[keep], x.values[keep])
    again = alter(technique, x, MaskingConfig(), np.random.default_rng(seed))
    assert np.array_equal(out.altered.values, again.altered.values)


def test_branch_frequencies_within_three_sigma():
    stats = mask_statistics(features(500, 4), "time", 5000, seed=8)
    counts = stats["branch_counts"]
    n = sum(counts.values())
    for name, p in (("zero", 0.8), ("random", 0.1), ("keep", 0.1)):
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(counts[name] - n * p) <= 3 * sigma
