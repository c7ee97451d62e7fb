"""Signal-processing front-end: resampling, STFT, mel filterbank, log-mel and MFCC.

Defaults follow the torchaudio 0.9 transforms (400-sample Hann window, hop 200,
HTK mel scale, power spectrogram, reflect centre padding) with 128 channels.
Features are returned time-major, ``(frames, channels)``.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import scipy.fft
import scipy.signal

from .errors import ConfigError, FeatureCacheFormatError, InvalidInput

__all__ = [
    "AudioClip",
    "DspConfig",
    "FeatureKind",
    "FeatureMatrix",
    "resample",
    "stft_magnitude",
    "hz_to_mel",
    "mel_to_hz",
    "mel_center_frequencies",
    "mel_filterbank",
    "mel_spectrogram",
    "mfcc",
    "extract",
    "write_feature_cache",
    "read_feature_cache",
]

PathLike = Union[str, Path]


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInput(f"audio must be mono, got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise InvalidInput(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class DspConfig:
    target_rate: int = 16000
    fft_window: int = 400
    hop: int = 200
    n_mels: int = 128
    n_mfcc: int = 128
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.target_rate <= 0:
            raise ConfigError("target_rate must be positive")
        if not 0 < self.hop <= self.fft_window:
            raise ConfigError("need 0 < hop <= fft_window")
        if not 0 < self.n_mfcc <= self.n_mels:
            raise ConfigError("need 0 < n_mfcc <= n_mels")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    @property
    def n_freqs(self) -> int:
        return self.fft_window // 2 + 1

    @property
    def frame_rate(self) -> float:
        return self.target_rate / self.hop


class FeatureKind(enum.IntEnum):
    MEL = 0
    MFCC = 1


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    kind: FeatureKind
    frame_rate: float = 80.0

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidInput(f"feature matrix must be T x H with T, H >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInput("feature matrix contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", FeatureKind(self.kind))

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(values, self.kind, self.frame_rate)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited resampling with a Kaiser-windowed sinc polyphase filter.

    A clip already at ``target_rate`` is returned unchanged.
    """
    if len(clip) == 0:
        raise InvalidInput("cannot resample an empty clip")
    if target_rate <= 0:
        raise InvalidInput("target_rate must be positive")
    if clip.sample_rate == target_rate:
        return clip
    g = math.gcd(clip.sample_rate, int(target_rate))
    up, down = int(target_rate) // g, clip.sample_rate // g
    out = scipy.signal.resample_poly(clip.samples, up, down)
    # polyphase ringing can overshoot full scale slightly
    np.clip(out, -1.0, 1.0, out=out)
    return AudioClip(out, int(target_rate), clip.source_id)


def _hann(n: int) -> np.ndarray:
    # periodic Hann, as torch.hann_window(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frame_count(n_samples: int, hop: int) -> int:
    return 1 + n_samples // hop


def stft_magnitude(clip: AudioClip, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Power spectrogram ``|STFT|**2`` of shape ``(1 + len // hop, fft_window // 2 + 1)``."""
    if clip.sample_rate != cfg.target_rate:
        raise InvalidInput(
            f"clip at {clip.sample_rate} Hz, expected {cfg.target_rate} Hz; resample first"
        )
    if len(clip) < cfg.hop:
        raise InvalidInput(f"clip of {len(clip)} samples is shorter than one hop ({cfg.hop})")
    n_fft = cfg.fft_window
    pad = n_fft // 2
    padded = np.pad(clip.samples, pad, mode="reflect")
    n_frames = _frame_count(len(clip), cfg.hop)
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[:: cfg.hop][:n_frames]
    spec = np.fft.rfft(frames * _hann(n_fft), axis=-1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _mel_points(cfg: DspConfig) -> np.ndarray:
    top = hz_to_mel(cfg.target_rate / 2.0)
    return mel_to_hz(np.linspace(0.0, top, cfg.n_mels + 2))


def mel_center_frequencies(cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Peak frequency (Hz) of every mel filter."""
    return _mel_points(cfg)[1:-1]


def mel_filterbank(cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Triangular HTK-mel filters of shape ``(n_mels, n_freqs)``.

    Triangles are sampled at the FFT bin centres. A filter narrower than the
    bin spacing can fall between two bins and sample to all zeros; such a
    filter collapses onto the single bin nearest its centre so that every
    channel carries signal.
    """
    if cfg.n_mels > cfg.n_freqs:
        raise InvalidInput(f"n_mels={cfg.n_mels} exceeds the {cfg.n_freqs} available FFT bins")
    freqs = np.linspace(0.0, cfg.target_rate // 2, cfg.n_freqs)
    pts = _mel_points(cfg)
    widths = np.diff(pts)
    rising = (freqs[None, :] - pts[:-2, None]) / widths[:-1, None]
    falling = (pts[2:, None] - freqs[None, :]) / widths[1:, None]
    fb = np.maximum(0.0, np.minimum(rising, falling))
    for row in np.flatnonzero(~fb.any(axis=1)):
        fb[row, np.argmin(np.abs(freqs - pts[row + 1]))] = 1.0
    return fb


def mel_spectrogram(clip: AudioClip, cfg: DspConfig = DspConfig()) -> FeatureMatrix:
    power = stft_magnitude(clip, cfg)
    mel = power @ mel_filterbank(cfg).T
    return FeatureMatrix(np.log(mel + cfg.log_floor), FeatureKind.MEL, cfg.frame_rate)


def mfcc(clip: AudioClip, cfg: DspConfig = DspConfig()) -> FeatureMatrix:
    """Orthonormal DCT-II of each log-mel frame, first ``n_mfcc`` coefficients kept."""
    log_mel = mel_spectrogram(clip, cfg).values
    coeffs = scipy.fft.dct(log_mel, type=2, norm="ortho", axis=-1)[:, : cfg.n_mfcc]
    return FeatureMatrix(coeffs, FeatureKind.MFCC, cfg.frame_rate)


def extract(clip: AudioClip, kind: FeatureKind, cfg: DspConfig = DspConfig()) -> FeatureMatrix:
    if FeatureKind(kind) is FeatureKind.MEL:
        return mel_spectrogram(clip, cfg)
    return mfcc(clip, cfg)


# Feature cache container: "MAMF", u16 version, u8 kind, u32 T, u32 H, f32 LE data.
_MAMF_MAGIC = b"MAMF"
_MAMF_VERSION = 1
_MAMF_HEADER = struct.Struct("<4sHBII")


def write_feature_cache(path: PathLike, features: FeatureMatrix) -> None:
    values = np.ascontiguousarray(features.values, dtype="<f4")
    t, h = values.shape
    with open(path, "wb") as fh:
        fh.write(_MAMF_HEADER.pack(_MAMF_MAGIC, _MAMF_VERSION, int(features.kind), t, h))
        fh.write(values.tobytes())


def read_feature_cache(path: PathLike, frame_rate: float = 80.0) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if len(data) < _MAMF_HEADER.size:
        raise FeatureCacheFormatError(f"{path}: truncated header")
    magic, version, kind, t, h = _MAMF_HEADER.unpack_from(data)
    if magic != _MAMF_MAGIC:
        raise FeatureCacheFormatError(f"{path}: bad magic {magic!r}")
    if version != _MAMF_VERSION:
        raise FeatureCacheFormatError(f"{path}: unsupported version {version}")
    if kind not in (0, 1):
        raise FeatureCacheFormatError(f"{path}: unknown feature kind {kind}")
    expected = _MAMF_HEADER.size + 4 * t * h
    if len(data) != expected:
        raise FeatureCacheFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_MAMF_HEADER.size).reshape(t, h)
    return FeatureMatrix(values.astype(np.float32), FeatureKind(kind), frame_rate)
