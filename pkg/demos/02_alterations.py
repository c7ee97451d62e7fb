"""
Time, channel and noise alterations
===================================

The three corruptions a masked acoustic model learns to undo, applied to one
500 x 128 feature matrix, followed by Monte-Carlo statistics of each.
"""

import numpy as np

from mamkit.dsp import FeatureKind, FeatureMatrix
from mamkit.masking import MaskingConfig, alter, mask_statistics

features = FeatureMatrix(np.random.default_rng(0).normal(size=(500, 128)), FeatureKind.MEL)
cfg = MaskingConfig()
rng = np.random.default_rng(1)

# time: 7-frame chunks covering about 15 % of the frames, each zeroed (80 %),
# replaced by another segment (10 %) or left alone (10 %)
out = alter("time", features, cfg, rng)
print("time chunks:", len(out.chunk_starts), "flagged frames:", int(out.frame_mask.sum()))
print("branches (0 zero, 1 random, 2 keep):", out.chunk_branches.tolist())

# channel: one block of up to 12 consecutive channels set to zero
out = alter("channel", features, cfg, rng)
print("channel block (start, width):", out.channel_block)

# noise: with probability 0.1, add N(0, 0.2) everywhere
fired = sum(alter("noise", features, cfg, rng).noise_applied for _ in range(1000))
print("noise applied in", fired, "of 1000 draws")

# the long-run behaviour, as the inspect-mask command reports it
reported = {
    "time": ("mask_fraction", "zeroed_fraction", "branch_frequencies"),
    "channel": ("mean_channel_width",),
    "noise": ("noise_application_rate", "noise_variance"),
}
for technique, keys in reported.items():
    stats = mask_statistics(features, technique, 2000, seed=2)
    print(technique, {k: stats[k] for k in keys})
