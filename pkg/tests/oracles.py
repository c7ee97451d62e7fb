"""Reference implementations built directly from textbook formulas.

Nothing here calls numpy.fft, scipy or mamkit: the DFT is an explicit sum,
the Hann window, mel triangles and DCT-II are written out term by term.
"""

import functools
import math

import numpy as np

SR = 16000
N_FFT = 400
HOP = 200
N_MELS = 128
FLOOR = 1e-10


def hann(n):
    return np.array([0.5 * (1.0 - math.cos(2.0 * math.pi * i / n)) for i in range(n)])


def reflect_index(i, length):
    if i < 0:
        return -i
    if i >= length:
        return 2 * (length - 1) - i
    return i


def frames(x, n_fft=N_FFT, hop=HOP):
    pad = n_fft // 2
    count = 1 + len(x) // hop
    out = np.empty((count, n_fft))
    for t in range(count):
        for n in range(n_fft):
            out[t, n] = x[reflect_index(t * hop + n - pad, len(x))]
    return out


def dft_tables(n_fft=N_FFT):
    # angles reduced mod n_fft so every table entry is exact to rounding
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(n_fft)[None, :]
    angle = 2.0 * math.pi * ((k * n) % n_fft) / n_fft
    return np.cos(angle), np.sin(angle)


def power_spectrogram(x, n_fft=N_FFT, hop=HOP):
    cos_t, sin_t = dft_tables(n_fft)
    windowed = frames(x, n_fft, hop) * hann(n_fft)[None, :]
    re = windowed @ cos_t.T
    im = -(windowed @ sin_t.T)
    return re * re + im * im


def hz_to_mel(f):
    return 2595.0 * math.log10(1.0 + f / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def filterbank(sr=SR, n_fft=N_FFT, n_mels=N_MELS):
    n_bins = n_fft // 2 + 1
    top = hz_to_mel(sr / 2.0)
    edges = [mel_to_hz(top * j / (n_mels + 1)) for j in range(n_mels + 2)]
    bins = [k * sr / n_fft for k in range(n_bins)]
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        for k, f in enumerate(bins):
            fb[m, k] = max(0.0, min((f - lo) / (mid - lo), (hi - f) / (hi - mid)))
        if not fb[m].any():
            nearest = min(range(n_bins), key=lambda k: abs(bins[k] - mid))
            fb[m, nearest] = 1.0
    return fb


def log_mel(x):
    return np.log(power_spectrogram(x) @ filterbank().T + FLOOR)


def dct_ortho(v):
    n = len(v)
    out = np.empty(n)
    for k in range(n):
        s = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
        out[k] = s * sum(v[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n)) for i in range(n))
    return out


@functools.lru_cache(maxsize=4)
def dct_matrix(n):
    return np.array([dct_ortho(row) for row in np.eye(n)]).T


def mfcc(x):
    return log_mel(x) @ dct_matrix(N_MELS).T


def reference_signals(rng):
    """Twenty signals: silence, tones, chirps, white noise and mixtures."""
    t1 = np.arange(SR) / SR
    t4 = np.arange(4 * SR) / SR
    signals = [np.zeros(SR), np.zeros(SR // 2)]
    for f in (100.0, 440.0, 1000.0, 3150.0, 7000.0):
        signals.append(0.5 * np.sin(2 * math.pi * f * t1))
    signals.append(0.9 * np.sin(2 * math.pi * 250.0 * t4))
    for f0, f1 in ((100.0, 4000.0), (6000.0, 200.0), (50.0, 7900.0)):
        phase = 2 * math.pi * (f0 * t1 + 0.5 * (f1 - f0) * t1**2)
        signals.append(0.6 * np.sin(phase))
    for scale in (1.0, 0.1, 1e-3):
        signals.append(np.clip(scale * rng.standard_normal(SR), -1, 1))
    signals.append(0.3 * np.sin(2 * math.pi * 200 * t1) + 0.3 * np.sin(2 * math.pi * 2300 * t1))
    impulses = np.zeros(SR)
    impulses[::1600] = 1.0
    signals.append(impulses)
    signals.append(np.clip(0.4 * np.sin(2 * math.pi * 150 * t1) + 0.05 * rng.standard_normal(SR), -1, 1))
    signals.append(0.5 * np.sign(np.sin(2 * math.pi * 300 * t1)))
    signals.append(np.clip(rng.uniform(-1, 1, 3 * SR // 2), -1, 1))
    signals.append(np.exp(-t1 * 8.0) * np.sin(2 * math.pi * 900 * t1))
    assert len(signals) == 20
    return signals
