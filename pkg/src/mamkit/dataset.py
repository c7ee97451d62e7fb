"""Corpus ingestion: manifests, 4 s / 1 s windowing, ward-noise injection and batching."""

from __future__ import annotations

import csv
import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import scipy.io.wavfile

from .dsp import AudioClip, FeatureMatrix, resample
from .errors import (
    ConfigError,
    InvalidInput,
    ManifestRowError,
    ManifestSchemaError,
    TaskLabelError,
)

PathLike = Union[str, Path]

MANIFEST_COLUMNS = ("path", "speaker_id", "split", "ri_label", "sex", "age")


class Split(enum.Enum):
    TRAIN = "train"
    TRAIN_EXTRA = "train_extra"
    VALIDATION = "validation"
    TEST = "test"


class RILabel(enum.Enum):
    CONTROL = "control"
    PATIENT = "patient"


class Sex(enum.Enum):
    F = "f"
    M = "m"


class AgeGroup(enum.IntEnum):
    UNDER_40 = 0
    FROM_40_TO_59 = 1
    OVER_60 = 2

    @classmethod
    def from_age(cls, age: int) -> "AgeGroup":
        if age < 40:
            return cls.UNDER_40
        if age < 60:
            return cls.FROM_40_TO_59
        return cls.OVER_60


class Task(enum.Enum):
    RESPIRATORY = "respiratory"
    GENDER = "gender"
    AGE_GROUP = "age"

    @property
    def n_classes(self) -> int:
        return 3 if self is Task.AGE_GROUP else 2

    @property
    def train_splits(self) -> tuple:
        # the extra control data only enlarges the gender and age training sets
        if self is Task.RESPIRATORY:
            return (Split.TRAIN,)
        return (Split.TRAIN, Split.TRAIN_EXTRA)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    speaker_id: str
    split: Split
    ri_label: Optional[RILabel] = None
    sex: Optional[Sex] = None
    age: Optional[int] = None

    def __post_init__(self):
        if not self.path:
            raise InvalidInput("manifest path must be nonempty")
        if self.age is not None and not 0 <= self.age < 150:
            raise InvalidInput(f"age {self.age} outside [0, 150)")

    @property
    def age_group(self) -> Optional[AgeGroup]:
        return None if self.age is None else AgeGroup.from_age(self.age)

    def label(self, task: Task) -> int:
        """Class index of this entry for ``task``."""
        if task is Task.RESPIRATORY:
            value = self.ri_label
            index = None if value is None else [RILabel.CONTROL, RILabel.PATIENT].index(value)
        elif task is Task.GENDER:
            value = self.sex
            index = None if value is None else [Sex.F, Sex.M].index(value)
        else:
            index = None if self.age is None else int(self.age_group)
        if index is None:
            raise TaskLabelError(f"{self.path}: no {task.value} label")
        return index


def _parse_enum(enum_cls, raw: str, column: str, line: int, optional: bool):
    raw = raw.strip().lower()
    if raw == "":
        if optional:
            return None
        raise ManifestRowError(line, f"empty {column}")
    try:
        return enum_cls(raw)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise ManifestRowError(line, f"{column}={raw!r} not one of {allowed}") from None


def load_manifest(path: PathLike) -> List[ManifestEntry]:
    """Parse a UTF-8 CSV manifest with header ``path,speaker_id,split,ri_label,sex,age``.

    Relative audio paths are resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestSchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            line = reader.line_num
            audio = (row["path"] or "").strip()
            if not audio:
                raise ManifestRowError(line, "empty path")
            age_raw = (row["age"] or "").strip()
            age = None
            if age_raw:
                try:
                    age = int(age_raw)
                except ValueError:
                    raise ManifestRowError(line, f"age={age_raw!r} is not an integer") from None
                if not 0 <= age < 150:
                    raise ManifestRowError(line, f"age={age} outside [0, 150)")
            resolved = Path(audio)
            if not resolved.is_absolute():
                resolved = base / resolved
            entries.append(
                ManifestEntry(
                    path=str(resolved),
                    speaker_id=(row["speaker_id"] or "").strip(),
                    split=_parse_enum(Split, row["split"] or "", "split", line, optional=False),
                    ri_label=_parse_enum(RILabel, row["ri_label"] or "", "ri_label", line, True),
                    sex=_parse_enum(Sex, row["sex"] or "", "sex", line, True),
                    age=age,
                )
            )
    return entries


def read_audio(path: PathLike) -> AudioClip:
    """Read a WAV file as a mono clip scaled to [-1, 1]."""
    rate, data = scipy.io.wavfile.read(path)
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        samples = data.astype(np.float64) / float(-np.iinfo(data.dtype).min)
    else:
        samples = data.astype(np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise InvalidInput(f"{path}: empty audio")
    peak = np.max(np.abs(samples))
    if peak > 1.0:
        samples = samples / peak
    return AudioClip(samples, rate, str(path))


def write_audio(path: PathLike, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM WAV."""
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    scipy.io.wavfile.write(path, clip.sample_rate, pcm)


def window_audio(clip: AudioClip, chunk_seconds: float = 4.0, step_seconds: float = 1.0) -> List[AudioClip]:
    """Cut a clip into fixed-length windows starting every ``step_seconds``.

    Clips shorter than one window are zero-padded at the end; samples past the
    last full window start are dropped.
    """
    if not chunk_seconds >= step_seconds > 0:
        raise InvalidInput("need chunk_seconds >= step_seconds > 0")
    size = int(round(chunk_seconds * clip.sample_rate))
    step = int(round(step_seconds * clip.sample_rate))
    samples = clip.samples
    if len(samples) < size:
        samples = np.concatenate([samples, np.zeros(size - len(samples))])
    n = (len(samples) - size) // step + 1
    return [
        AudioClip(samples[i * step : i * step + size], clip.sample_rate, f"{clip.source_id}#{i}")
        for i in range(n)
    ]


@dataclass
class NoisePool:
    clips: List[AudioClip]
    max_gain: float = 0.1
    max_sources: int = 2

    def __post_init__(self):
        if self.max_gain < 0:
            raise ConfigError("max_gain must be non-negative")
        if self.max_sources < 1:
            raise ConfigError("max_sources must be >= 1")

    @classmethod
    def from_directory(cls, directory: PathLike, target_rate: int = 16000, **kwargs) -> "NoisePool":
        files = sorted(Path(directory).glob("*.wav"))
        clips = [resample(read_audio(f), target_rate) for f in files]
        return cls(clips, **kwargs)


def _noise_segment(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    if len(noise) >= length:
        start = int(rng.integers(0, len(noise) - length + 1))
        return noise[start : start + length]
    # shorter pool clips wrap around from a random start
    start = int(rng.integers(0, len(noise)))
    return np.take(noise, np.arange(start, start + length), mode="wrap")


def inject_noise(clip: AudioClip, pool: NoisePool, rng: np.random.Generator) -> AudioClip:
    """Add 1..max_sources randomly placed, randomly scaled background-noise segments."""
    if not pool.clips:
        raise ConfigError("noise injection requested but the noise pool is empty")
    for noise in pool.clips:
        if noise.sample_rate != clip.sample_rate:
            raise InvalidInput("noise pool and clip sample rates differ; resample first")
    out = clip.samples.copy()
    k = int(rng.integers(1, pool.max_sources + 1))
    for _ in range(k):
        noise = pool.clips[int(rng.integers(0, len(pool.clips)))].samples
        segment = _noise_segment(noise, len(out), rng)
        gain = rng.uniform(0.0, pool.max_gain)
        out += gain * segment
    np.clip(out, -1.0, 1.0, out=out)
    return AudioClip(out, clip.sample_rate, clip.source_id)


def item_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for work item ``index``; identical for any worker layout."""
    return np.random.default_rng([int(seed), int(index)])


@dataclass
class Chunk:
    features: FeatureMatrix
    parent: Optional[ManifestEntry]
    chunk_index: int
    file_id: str = ""

    def __post_init__(self):
        if not self.file_id:
            self.file_id = self.parent.path if self.parent is not None else ""


@dataclass
class Batch:
    features: np.ndarray  # B x T x H
    labels: Optional[np.ndarray]
    indices: np.ndarray  # positions in the chunk list
    file_ids: List[str]

    def __len__(self) -> int:
        return self.features.shape[0]


def chunk_labels(chunks: Sequence[Chunk], task: Task) -> np.ndarray:
    labels = []
    for c in chunks:
        if c.parent is None:
            raise TaskLabelError(f"chunk {c.file_id}#{c.chunk_index} has no manifest entry")
        labels.append(c.parent.label(task))
    return np.asarray(labels, dtype=np.int64)


def stack_features(chunks: Sequence[Chunk], dtype=np.float32) -> np.ndarray:
    shapes = {c.features.shape for c in chunks}
    if len(shapes) != 1:
        raise InvalidInput(f"chunks have differing shapes {sorted(shapes)}")
    return np.stack([c.features.values for c in chunks]).astype(dtype, copy=False)


def assemble_batches(
    chunks: Sequence[Chunk],
    batch_size: int = 16,
    rng: Optional[np.random.Generator] = None,
    shuffle: bool = True,
    task: Optional[Task] = None,
) -> List[Batch]:
    """Split ``chunks`` into batches covering each chunk exactly once.

    The final batch may be smaller than ``batch_size``. With ``shuffle`` the
    permutation is drawn from ``rng``.
    """
    if not chunks:
        raise InvalidInput("cannot batch an empty chunk list")
    if batch_size < 1:
        raise InvalidInput("batch_size must be >= 1")
    values = stack_features(chunks)
    labels = chunk_labels(chunks, task) if task is not None else None
    n = len(chunks)
    if shuffle:
        if rng is None:
            raise InvalidInput("shuffling requires a random stream")
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    batches = []
    for lo in range(0, n, batch_size):
        idx = order[lo : lo + batch_size]
        batches.append(
            Batch(
                features=values[idx],
                labels=None if labels is None else labels[idx],
                indices=idx,
                file_ids=[chunks[i].file_id for i in idx],
            )
        )
    return batches


def select_split(chunks: Iterable[Chunk], splits: Iterable[Split]) -> List[Chunk]:
    wanted = set(splits)
    return [c for c in chunks if c.parent is not None and c.parent.split in wanted]


# -- feature cache directory ---------------------------------------------------

INDEX_NAME = "index.jsonl"


def cache_name(audio_path: str, chunk_index: int) -> str:
    digest = hashlib.sha1(audio_path.encode("utf-8")).hexdigest()
    return f"{digest}_{chunk_index}.mamf"


def entry_to_json(entry: ManifestEntry) -> dict:
    return {
        "path": entry.path,
        "speaker_id": entry.speaker_id,
        "split": entry.split.value,
        "ri_label": entry.ri_label.value if entry.ri_label else None,
        "sex": entry.sex.value if entry.sex else None,
        "age": entry.age,
    }


def entry_from_json(obj: dict) -> ManifestEntry:
    return ManifestEntry(
        path=obj["path"],
        speaker_id=obj.get("speaker_id", ""),
        split=Split(obj["split"]),
        ri_label=RILabel(obj["ri_label"]) if obj.get("ri_label") else None,
        sex=Sex(obj["sex"]) if obj.get("sex") else None,
        age=obj.get("age"),
    )


def read_index(cache_dir: PathLike) -> List[dict]:
    index = Path(cache_dir) / INDEX_NAME
    if not index.exists():
        return []
    with open(index, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_cached_chunks(cache_dir: PathLike, splits: Optional[Iterable[Split]] = None) -> List[Chunk]:
    """Load every successfully cached chunk listed in ``cache_dir``'s index."""
    from .dsp import read_feature_cache

    cache_dir = Path(cache_dir)
    wanted = None if splits is None else set(splits)
    chunks = []
    for record in read_index(cache_dir):
        if record.get("status") != "ok":
            continue
        entry = entry_from_json(record["entry"])
        if wanted is not None and entry.split not in wanted:
            continue
        for i, name in enumerate(record["caches"]):
            features = read_feature_cache(cache_dir / name, record.get("frame_rate", 80.0))
            chunks.append(Chunk(features, entry, i))
    return chunks
