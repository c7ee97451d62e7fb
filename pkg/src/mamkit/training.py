"""Two-phase training: masked-reconstruction pretraining and supervised fine-tuning.

Everything runs in a single thread with explicitly derived random streams, so a
fixed seed reproduces losses, selected checkpoints and reports bit for bit.
Streams are keyed by purpose and position (``[seed, purpose, step, item]``)
rather than drawn sequentially from one generator.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from . import model as M
from .dataset import Chunk, Task, assemble_batches, chunk_labels
from .dsp import FeatureMatrix
from .errors import ConfigError, DivergedRunError, InvalidInput
from .evaluation import PredictionSet, chunk_accuracy, file_accuracy
from .masking import MaskingConfig, alter

logger = logging.getLogger(__name__)

_SHUFFLE, _MASK, _DROPOUT, _INIT = 0, 1, 2, 3


class Technique(enum.Enum):
    BASELINE = "baseline"
    TIME = "time"
    CHANNEL = "channel"
    NOISE = "noise"
    COMBINED = "combined"


@dataclass(frozen=True)
class PretrainConfig:
    technique: Technique = Technique.TIME
    epochs: int = 3
    batch_size: int = 16
    learning_rate: float = 1e-4
    warmup_steps: int = 500
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    masked_loss_only: bool = False
    masking: MaskingConfig = MaskingConfig()

    def __post_init__(self):
        object.__setattr__(self, "technique", Technique(self.technique))
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class FinetuneConfig:
    task: Task = Task.GENDER
    epochs: int = 20
    batch_size: int = 16
    repetitions: int = 10
    learning_rate: float = 1e-4
    warmup_steps: int = 500
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    freeze_encoder: bool = False

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if self.epochs < 1 or self.batch_size < 1 or self.repetitions < 1:
            raise ConfigError("epochs, batch_size and repetitions must be >= 1")


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, key)])


# -- standardisation -----------------------------------------------------------


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    FLOOR = 1e-8

    def apply(self, values: np.ndarray) -> np.ndarray:
        return ((np.asarray(values, dtype=np.float64) - self.mean) / self.std).astype(np.float32)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"standardizer.mean": self.mean.astype(np.float32), "standardizer.std": self.std.astype(np.float32)}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "Standardizer":
        return cls(arrays["standardizer.mean"].astype(np.float64), arrays["standardizer.std"].astype(np.float64))


def fit_standardizer(chunks: Sequence[Chunk]) -> Standardizer:
    """Per-channel mean and standard deviation over every frame of every chunk."""
    if not chunks:
        raise InvalidInput("cannot fit a standardizer on an empty training set")
    frames = np.concatenate([np.asarray(c.features.values, dtype=np.float64) for c in chunks])
    mean = frames.mean(axis=0)
    std = np.sqrt(np.mean(np.square(frames - mean), axis=0))
    return Standardizer(mean, np.maximum(std, Standardizer.FLOOR))


# -- losses --------------------------------------------------------------------


def l1_loss(pred: np.ndarray, target: np.ndarray, frame_mask: Optional[np.ndarray] = None):
    """Mean absolute error and its gradient; ``frame_mask`` (B x T) restricts the frames."""
    diff = pred - target
    if frame_mask is None:
        n = diff.size
        grad = np.sign(diff) / diff.dtype.type(n)
        return float(np.abs(diff).sum(dtype=np.float64) / n), grad
    weight = frame_mask[..., None].astype(diff.dtype)
    n = max(float(weight.sum()) * diff.shape[-1], 1.0)
    grad = np.sign(diff) * weight / diff.dtype.type(n)
    return float((np.abs(diff) * weight).sum(dtype=np.float64) / n), grad


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy, its gradient w.r.t. the logits, and the softmax probabilities."""
    probs = M.softmax(logits)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, np.finfo(probs.dtype).tiny)).astype(np.float64).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    return loss, grad / grad.dtype.type(n), probs


# -- optimiser -----------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay, linear warmup then constant rate."""

    def __init__(self, state: M.EncoderState, learning_rate=1e-4, warmup_steps=500,
                 weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in state.items()}
        self.v = {k: np.zeros_like(v) for k, v in state.items()}

    def rate(self, step: int) -> float:
        if self.warmup_steps <= 0:
            return self.learning_rate
        return self.learning_rate * min(1.0, step / self.warmup_steps)

    def step(self, state: M.EncoderState, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        lr = self.rate(self.t)
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            p = state[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and p.ndim == 2:
                update = update + self.weight_decay * p
            p -= (lr * update).astype(p.dtype, copy=False)


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place to global L2 norm ``max_norm``; returns the norm before clipping."""
    total = math.sqrt(sum(float(np.square(g, dtype=np.float64).sum()) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= g.dtype.type(scale)
    return total


# -- run records ---------------------------------------------------------------


@dataclass
class RunRecord:
    train_loss: List[float]
    val_metric: List[Optional[float]]
    best_epoch: int
    test_metric: Dict[str, float]
    seed: int
    wall_clock: float = 0.0
    step_losses: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    repetition: Optional[int] = None
    phase: str = "finetune"

    def to_dict(self, include_timing: bool = True) -> dict:
        out = asdict(self)
        if not include_timing:
            out.pop("wall_clock")
        return out


class PretrainResult(NamedTuple):
    state: M.EncoderState
    record: RunRecord
    standardizer: Standardizer
    best_state: Optional[M.EncoderState] = None


def _alter_batch(x: np.ndarray, technique: Technique, masking: MaskingConfig, seed: int, step: int):
    altered = np.empty_like(x)
    frame_mask = np.zeros(x.shape[:2], dtype=bool)
    for b in range(x.shape[0]):
        outcome = alter(technique.value, FeatureMatrix(x[b], 0), masking, _stream(seed, _MASK, step, b))
        altered[b] = outcome.altered.values
        frame_mask[b] = outcome.frame_mask
    return altered, frame_mask


def reconstruction_error(
    chunks: Sequence[Chunk],
    state: M.EncoderState,
    mcfg: M.ModelConfig,
    standardizer: Standardizer,
    technique: Technique = Technique.TIME,
    masking: MaskingConfig = MaskingConfig(),
    seed: int = 0,
    batch_size: int = 16,
) -> float:
    """Mean absolute reconstruction error of clean standardized frames from altered inputs."""
    technique = Technique(technique)
    total = 0.0
    count = 0
    for i, batch in enumerate(assemble_batches(chunks, batch_size, shuffle=False)):
        clean = standardizer.apply(batch.features)
        if technique is Technique.BASELINE:
            altered = clean
        else:
            altered, _ = _alter_batch(clean, technique, masking, seed, i)
        recon = M.reconstruct(M.encode(altered, state, mcfg), state)
        total += float(np.abs(recon - clean).sum(dtype=np.float64))
        count += clean.size
    return total / count


def pretrain(
    corpus: Sequence[Chunk],
    pcfg: PretrainConfig,
    mcfg: M.ModelConfig,
    standardizer: Optional[Standardizer] = None,
    held_out: Optional[Sequence[Chunk]] = None,
    init: Optional[M.EncoderState] = None,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> PretrainResult:
    """Train encoder and reconstruction head to undo the configured alteration.

    The loss is the mean absolute error against the clean standardized input
    over all frames (masked frames only with ``masked_loss_only``).
    """
    if pcfg.technique is Technique.BASELINE:
        raise ConfigError("the baseline technique skips pretraining; nothing to pretrain")
    if not corpus:
        raise InvalidInput("pretraining corpus is empty")
    started = time.perf_counter()
    standardizer = standardizer or fit_standardizer(corpus)
    state = init.copy() if init is not None else M.init_state(mcfg, _stream(pcfg.seed, _INIT))
    M.check_compatible(state, mcfg)
    opt = AdamW(state, pcfg.learning_rate, pcfg.warmup_steps, pcfg.weight_decay)
    step = 0
    step_losses: List[float] = []
    epoch_losses: List[float] = []
    val: List[Optional[float]] = []
    best_state, best_score = state.copy(), math.inf
    for epoch in range(pcfg.epochs):
        batches = assemble_batches(corpus, pcfg.batch_size, _stream(pcfg.seed, _SHUFFLE, epoch), shuffle=True)
        losses = []
        for batch in batches:
            clean = standardizer.apply(batch.features)
            altered, frame_mask = _alter_batch(clean, pcfg.technique, pcfg.masking, pcfg.seed, step)
            hidden, cache = M.encode_forward(altered, state, mcfg, True, _stream(pcfg.seed, _DROPOUT, step))
            recon = M.reconstruct(hidden, state)
            loss, dloss = l1_loss(recon, clean, frame_mask if pcfg.masked_loss_only else None)
            if not math.isfinite(loss):
                raise DivergedRunError(step, loss)
            dhidden, grads = M.reconstruct_backward(dloss, hidden, state)
            grads.update(M.encode_backward(dhidden, cache, state))
            clip_gradients(grads, pcfg.grad_clip)
            opt.step(state, grads)
            losses.append(loss)
            step_losses.append(loss)
            if on_step is not None:
                on_step(step, loss)
            step += 1
        epoch_losses.append(float(np.mean(losses)))
        if held_out:
            val.append(reconstruction_error(held_out, state, mcfg, standardizer, pcfg.technique, pcfg.masking, pcfg.seed + 1))
        else:
            val.append(None)
        score = val[-1] if val[-1] is not None else epoch_losses[-1]
        if score < best_score:
            best_score, best_state = score, state.copy()
        logger.info("pretrain epoch %d loss %.5f", epoch, epoch_losses[-1])
    scores = [v if v is not None else l for v, l in zip(val, epoch_losses)]
    record = RunRecord(
        train_loss=epoch_losses,
        val_metric=val,
        best_epoch=int(np.argmin(scores)),
        test_metric={},
        seed=pcfg.seed,
        wall_clock=time.perf_counter() - started,
        step_losses=step_losses,
        phase="pretrain",
    )
    return PretrainResult(state, record, standardizer, best_state)


# -- fine-tuning ---------------------------------------------------------------


def predict(
    chunks: Sequence[Chunk],
    state: M.EncoderState,
    mcfg: M.ModelConfig,
    standardizer: Standardizer,
    task: Task,
    batch_size: int = 32,
) -> PredictionSet:
    probs = []
    for batch in assemble_batches(chunks, batch_size, shuffle=False):
        x = standardizer.apply(batch.features)
        logits = M.classify(M.encode(x, state, mcfg), state, mcfg)
        probs.append(M.softmax(logits.astype(np.float64)))
    return PredictionSet(np.concatenate(probs), chunk_labels(chunks, task), [c.file_id for c in chunks])


def prediction_loss(preds: PredictionSet) -> float:
    """Mean cross-entropy of the true labels under the predicted probabilities."""
    p = preds.probabilities[np.arange(len(preds)), preds.labels]
    return float(-np.mean(np.log(np.maximum(p, 1e-12))))


class FinetuneOutcome(NamedTuple):
    record: RunRecord
    best_state: M.EncoderState
    last_state: M.EncoderState


def _initial_state(init: Optional[M.EncoderState], mcfg: M.ModelConfig, seed: int) -> M.EncoderState:
    rng = _stream(seed, _INIT)
    if init is None:
        return M.init_state(mcfg, rng)
    M.check_compatible(init, mcfg, ignore=M.CLASSIFIER_PARAMS)
    return M.reset_classifier(init, mcfg, rng)


def run_repetition(
    repetition: int,
    train: Sequence[Chunk],
    val: Sequence[Chunk],
    test: Sequence[Chunk],
    init: Optional[M.EncoderState],
    fcfg: FinetuneConfig,
    mcfg: M.ModelConfig,
    standardizer: Optional[Standardizer] = None,
) -> FinetuneOutcome:
    """One fine-tuning repetition with seed ``fcfg.seed + repetition``.

    The model is evaluated on ``val`` after every epoch; the epoch with the best
    chunk accuracy (ties: lower validation cross-entropy, then earliest) is
    scored on ``test``.
    """
    task = fcfg.task
    if mcfg.n_classes != task.n_classes:
        raise ConfigError(f"task {task.value} needs n_classes={task.n_classes}, model has {mcfg.n_classes}")
    if not train or not val or not test:
        raise InvalidInput("train, validation and test chunk sets must be nonempty")
    for subset in (train, val, test):
        chunk_labels(subset, task)
    started = time.perf_counter()
    seed = fcfg.seed + repetition
    standardizer = standardizer or fit_standardizer(train)
    state = _initial_state(init, mcfg, seed)
    opt = AdamW(state, fcfg.learning_rate, fcfg.warmup_steps, fcfg.weight_decay)
    best_state = state.copy()
    best_key = (-1.0, 0.0)
    best_epoch = 0
    step = 0
    epoch_losses: List[float] = []
    val_scores: List[Optional[float]] = []
    val_losses: List[float] = []
    step_losses: List[float] = []
    for epoch in range(fcfg.epochs):
        losses = []
        for batch in assemble_batches(train, fcfg.batch_size, _stream(seed, _SHUFFLE, epoch), shuffle=True, task=task):
            x = standardizer.apply(batch.features)
            if fcfg.freeze_encoder:
                hidden, cache = M.encode(x, state, mcfg), None
            else:
                hidden, cache = M.encode_forward(x, state, mcfg, True, _stream(seed, _DROPOUT, step))
            logits = M.classify(hidden, state, mcfg)
            loss, dlogits, _ = cross_entropy(logits, batch.labels)
            if not math.isfinite(loss):
                raise DivergedRunError(step, loss)
            dhidden, grads = M.classify_backward(dlogits, hidden, state)
            if cache is not None:
                grads.update(M.encode_backward(dhidden, cache, state))
            clip_gradients(grads, fcfg.grad_clip)
            opt.step(state, grads)
            losses.append(loss)
            step_losses.append(loss)
            step += 1
        epoch_losses.append(float(np.mean(losses)))
        val_preds = predict(val, state, mcfg, standardizer, task)
        score = chunk_accuracy(val_preds)
        vloss = prediction_loss(val_preds)
        val_scores.append(score)
        val_losses.append(vloss)
        if (score, -vloss) > best_key:
            best_key, best_epoch, best_state = (score, -vloss), epoch, state.copy()
        logger.info("finetune rep %d epoch %d loss %.5f val %.4f / %.5f", repetition, epoch, epoch_losses[-1], score, vloss)
    preds = predict(test, best_state, mcfg, standardizer, task)
    record = RunRecord(
        train_loss=epoch_losses,
        val_metric=val_scores,
        best_epoch=best_epoch,
        test_metric={"chunk_accuracy": chunk_accuracy(preds), "file_accuracy": file_accuracy(preds)},
        seed=seed,
        wall_clock=time.perf_counter() - started,
        step_losses=step_losses,
        val_loss=val_losses,
        repetition=repetition,
    )
    return FinetuneOutcome(record, best_state, state)


def finetune(
    train: Sequence[Chunk],
    val: Sequence[Chunk],
    test: Sequence[Chunk],
    init: Optional[M.EncoderState],
    fcfg: FinetuneConfig,
    mcfg: M.ModelConfig,
    standardizer: Optional[Standardizer] = None,
) -> List[RunRecord]:
    """``fcfg.repetitions`` independent fine-tuning runs; ``init=None`` means random initialisation."""
    standardizer = standardizer or fit_standardizer(train)
    return [
        run_repetition(r, train, val, test, init, fcfg, mcfg, standardizer).record
        for r in range(fcfg.repetitions)
    ]
