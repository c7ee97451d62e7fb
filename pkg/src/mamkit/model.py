"""Post-norm transformer encoder over feature frames, written directly in numpy.

Each frame is one token: a linear input projection plus sinusoidal positions
feeds ``n_layers`` encoder layers (bidirectional multi-head self-attention and
a ReLU feed-forward block, each wrapped as ``LayerNorm(x + Dropout(sublayer(x)))``).
Two heads sit on top: a per-frame affine reconstruction head and a
mean-pooled affine classification head.

Forward functions return a cache consumed by the matching ``*_backward``
function, which produces gradients keyed by parameter name.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, InvalidInput

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 3
    d_model: int = 512
    d_ff: int = 2048
    n_heads: int = 8
    input_dim: int = 128
    n_classes: int = 2
    dropout: float = 0.1
    max_seq_len: int = 400
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.n_layers < 1 or self.d_ff < 1:
            raise ConfigError("n_layers and d_ff must be >= 1")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ConfigError("d_model must be even for sinusoidal positions")
        if self.input_dim < 1 or self.n_classes < 1:
            raise ConfigError("input_dim and n_classes must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.max_seq_len < 1:
            raise ConfigError("max_seq_len must be >= 1")


def parameter_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Canonical ordered mapping from parameter name to shape."""
    d, f = cfg.d_model, cfg.d_ff
    shapes = {"input_proj.weight": (cfg.input_dim, d), "input_proj.bias": (d,)}
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        for name in ("q", "k", "v", "out"):
            shapes[p + f"attn.{name}.weight"] = (d, d)
            shapes[p + f"attn.{name}.bias"] = (d,)
        shapes[p + "norm1.scale"] = (d,)
        shapes[p + "norm1.shift"] = (d,)
        shapes[p + "ff.w1"] = (d, f)
        shapes[p + "ff.b1"] = (f,)
        shapes[p + "ff.w2"] = (f, d)
        shapes[p + "ff.b2"] = (d,)
        shapes[p + "norm2.scale"] = (d,)
        shapes[p + "norm2.shift"] = (d,)
    shapes["recon_head.weight"] = (d, cfg.input_dim)
    shapes["recon_head.bias"] = (cfg.input_dim,)
    shapes["cls_head.weight"] = (d, cfg.n_classes)
    shapes["cls_head.bias"] = (cfg.n_classes,)
    return shapes


def n_parameters(cfg: ModelConfig) -> int:
    """Closed-form parameter count."""
    d, f, i, c = cfg.d_model, cfg.d_ff, cfg.input_dim, cfg.n_classes
    per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
    return (i * d + d) + cfg.n_layers * per_layer + (d * i + i) + (d * c + c)


CLASSIFIER_PARAMS = ("cls_head.weight", "cls_head.bias")


@dataclass
class EncoderState:
    """Named parameter arrays of one model."""

    params: Params = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    @property
    def dtype(self):
        return self.params["input_proj.weight"].dtype

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self.params.values()))

    def copy(self) -> "EncoderState":
        return EncoderState({k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "EncoderState":
        return EncoderState({k: v.astype(dtype) for k, v in self.params.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())


def _xavier(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _init_array(name: str, shape, rng: np.random.Generator, dtype) -> np.ndarray:
    if len(shape) == 2:
        return _xavier(rng, shape, dtype)
    if name.endswith(".scale"):
        return np.ones(shape, dtype=dtype)
    return np.zeros(shape, dtype=dtype)


def init_state(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> EncoderState:
    """Xavier-uniform affine weights, zero biases, unit layer-norm scales."""
    return EncoderState(
        {name: _init_array(name, shape, rng, dtype) for name, shape in parameter_shapes(cfg).items()}
    )


def reset_classifier(state: EncoderState, cfg: ModelConfig, rng: np.random.Generator) -> EncoderState:
    """Copy of ``state`` with a freshly initialised classification head for ``cfg.n_classes``."""
    out = state.copy()
    shapes = parameter_shapes(cfg)
    for name in CLASSIFIER_PARAMS:
        out[name] = _init_array(name, shapes[name], rng, state.dtype)
    return out


def check_compatible(state: EncoderState, cfg: ModelConfig, ignore: Tuple[str, ...] = ()) -> None:
    expected = parameter_shapes(cfg)
    names = [n for n in expected if n not in ignore]
    missing = [n for n in names if n not in state.params]
    if missing:
        raise ConfigError(f"state lacks parameters {missing[:3]}{'...' if len(missing) > 3 else ''}")
    for n in names:
        if tuple(state[n].shape) != expected[n]:
            raise ConfigError(f"{n}: shape {tuple(state[n].shape)} does not match config {expected[n]}")
    extra = [n for n in state.params if n not in expected]
    if extra:
        raise ConfigError(f"state has parameters unknown to the config: {extra[:3]}")


@functools.lru_cache(maxsize=16)
def _positions(n_frames: int, d_model: int) -> np.ndarray:
    pos = np.arange(n_frames, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.empty((n_frames, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    pe.setflags(write=False)
    return pe


def sinusoidal_positions(n_frames: int, d_model: int) -> np.ndarray:
    """``pe[pos, 2i] = sin(pos / 10000**(2i/d))``, ``pe[pos, 2i+1] = cos(...)``."""
    if n_frames < 1 or d_model < 1:
        raise InvalidInput("n_frames and d_model must be >= 1")
    if d_model % 2:
        raise InvalidInput("d_model must be even")
    return _positions(int(n_frames), int(d_model)).copy()


# -- primitive layers ----------------------------------------------------------


def _linear_backward(dy, x, w):
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dy @ w.T, dw, db


def layer_norm(x, scale, shift, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    return xhat * scale + shift, (xhat, rstd)


def _layer_norm_backward(dy, cache, scale):
    xhat, rstd = cache
    axes = tuple(range(dy.ndim - 1))
    dscale = (dy * xhat).sum(axis=axes)
    dshift = dy.sum(axis=axes)
    g = dy * scale
    dx = rstd * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))
    return dx, dscale, dshift


def _dropout_mask(shape, rate, rng, dtype):
    if rate <= 0.0 or rng is None:
        return None
    keep = rng.random(shape, dtype=np.float32) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def _attention(x, params, prefix, cfg, rng):
    dtype = x.dtype
    q = _split_heads(x @ params[prefix + "q.weight"] + params[prefix + "q.bias"], cfg.n_heads)
    k = _split_heads(x @ params[prefix + "k.weight"] + params[prefix + "k.bias"], cfg.n_heads)
    v = _split_heads(x @ params[prefix + "v.weight"] + params[prefix + "v.bias"], cfg.n_heads)
    scale = dtype.type(1.0 / np.sqrt(q.shape[-1]))
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    mask = _dropout_mask(probs.shape, cfg.dropout, rng, dtype)
    attended = probs if mask is None else probs * mask
    merged = _merge_heads(attended @ v)
    out = merged @ params[prefix + "out.weight"] + params[prefix + "out.bias"]
    return out, (x, q, k, v, probs, mask, attended, merged, scale)


def _attention_backward(dout, cache, params, prefix, grads):
    x, q, k, v, probs, mask, attended, merged, scale = cache
    dmerged, grads[prefix + "out.weight"], grads[prefix + "out.bias"] = _linear_backward(
        dout, merged, params[prefix + "out.weight"]
    )
    n_heads = q.shape[1]
    dctx = _split_heads(dmerged, n_heads)
    dv = attended.transpose(0, 1, 3, 2) @ dctx
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    if mask is not None:
        dprobs *= mask
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores *= scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dx = np.zeros_like(x)
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        dx_part, grads[prefix + f"{name}.weight"], grads[prefix + f"{name}.bias"] = _linear_backward(
            _merge_heads(dproj), x, params[prefix + f"{name}.weight"]
        )
        dx += dx_part
    return dx


def _encoder_layer(x, params, i, cfg, rng):
    p = f"layers.{i}."
    eps = cfg.layer_norm_eps
    attn, attn_cache = _attention(x, params, p + "attn.", cfg, rng)
    m1 = _dropout_mask(attn.shape, cfg.dropout, rng, x.dtype)
    if m1 is not None:
        attn = attn * m1
    x1, ln1 = layer_norm(x + attn, params[p + "norm1.scale"], params[p + "norm1.shift"], eps)
    pre = x1 @ params[p + "ff.w1"] + params[p + "ff.b1"]
    act = np.maximum(pre, 0)
    ff = act @ params[p + "ff.w2"] + params[p + "ff.b2"]
    m2 = _dropout_mask(ff.shape, cfg.dropout, rng, x.dtype)
    if m2 is not None:
        ff = ff * m2
    x2, ln2 = layer_norm(x1 + ff, params[p + "norm2.scale"], params[p + "norm2.shift"], eps)
    return x2, (attn_cache, m1, ln1, x1, pre, act, m2, ln2)


def _encoder_layer_backward(dx2, cache, params, i, grads):
    p = f"layers.{i}."
    attn_cache, m1, ln1, x1, pre, act, m2, ln2 = cache
    ds2, grads[p + "norm2.scale"], grads[p + "norm2.shift"] = _layer_norm_backward(
        dx2, ln2, params[p + "norm2.scale"]
    )
    dff = ds2 if m2 is None else ds2 * m2
    dact, grads[p + "ff.w2"], grads[p + "ff.b2"] = _linear_backward(dff, act, params[p + "ff.w2"])
    dpre = dact * (pre > 0)
    dx1_ff, grads[p + "ff.w1"], grads[p + "ff.b1"] = _linear_backward(dpre, x1, params[p + "ff.w1"])
    dx1 = ds2 + dx1_ff
    ds1, grads[p + "norm1.scale"], grads[p + "norm1.shift"] = _layer_norm_backward(
        dx1, ln1, params[p + "norm1.scale"]
    )
    dattn = ds1 if m1 is None else ds1 * m1
    return ds1 + _attention_backward(dattn, attn_cache, params, p + "attn.", grads)


# -- model-level API -----------------------------------------------------------


@dataclass
class EncodeCache:
    inputs: np.ndarray
    layers: List[tuple]


def _check_batch(batch: np.ndarray, cfg: ModelConfig) -> None:
    if batch.ndim != 3:
        raise InvalidInput(f"batch must be B x T x input_dim, got shape {batch.shape}")
    t = batch.shape[1]
    if t == 0 or t > cfg.max_seq_len:
        raise InvalidInput(f"sequence length {t} outside [1, {cfg.max_seq_len}]")
    if batch.shape[2] != cfg.input_dim:
        raise InvalidInput(f"input has {batch.shape[2]} channels, model expects {cfg.input_dim}")


def encode_forward(
    batch: np.ndarray,
    state: EncoderState,
    cfg: ModelConfig,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
    use_positions: bool = True,
) -> Tuple[np.ndarray, EncodeCache]:
    """Encoder forward pass returning hidden states and the backward cache.

    Dropout is drawn from ``rng`` and only in ``train_mode``.
    """
    _check_batch(batch, cfg)
    params = state.params
    x = np.asarray(batch, dtype=state.dtype)
    h = x @ params["input_proj.weight"] + params["input_proj.bias"]
    if use_positions:
        h = h + _positions(x.shape[1], cfg.d_model).astype(h.dtype)
    drop_rng = rng if train_mode else None
    caches = []
    for i in range(cfg.n_layers):
        h, c = _encoder_layer(h, params, i, cfg, drop_rng)
        caches.append(c)
    return h, EncodeCache(x, caches)


def encode(
    batch: np.ndarray,
    state: EncoderState,
    cfg: ModelConfig,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
    use_positions: bool = True,
) -> np.ndarray:
    return encode_forward(batch, state, cfg, train_mode, rng, use_positions)[0]


def encode_backward(dhidden: np.ndarray, cache: EncodeCache, state: EncoderState) -> Params:
    """Gradients of all encoder parameters given the gradient at the hidden states."""
    params = state.params
    grads: Params = {}
    dh = dhidden
    for i in reversed(range(len(cache.layers))):
        dh = _encoder_layer_backward(dh, cache.layers[i], params, i, grads)
    _, grads["input_proj.weight"], grads["input_proj.bias"] = _linear_backward(
        dh, cache.inputs, params["input_proj.weight"]
    )
    return grads


def reconstruct(hidden: np.ndarray, state: EncoderState) -> np.ndarray:
    return hidden @ state["recon_head.weight"] + state["recon_head.bias"]


def reconstruct_backward(dout: np.ndarray, hidden: np.ndarray, state: EncoderState) -> Tuple[np.ndarray, Params]:
    dh, dw, db = _linear_backward(dout, hidden, state["recon_head.weight"])
    return dh, {"recon_head.weight": dw, "recon_head.bias": db}


def classify(hidden: np.ndarray, state: EncoderState, cfg: Optional[ModelConfig] = None) -> np.ndarray:
    """Mean-pool over frames, then an affine map to class logits."""
    pooled = hidden.mean(axis=1)
    return pooled @ state["cls_head.weight"] + state["cls_head.bias"]


def classify_backward(dlogits: np.ndarray, hidden: np.ndarray, state: EncoderState) -> Tuple[np.ndarray, Params]:
    pooled = hidden.mean(axis=1)
    dpooled, dw, db = _linear_backward(dlogits, pooled, state["cls_head.weight"])
    t = hidden.shape[1]
    dh = np.broadcast_to(dpooled[:, None, :] / hidden.dtype.type(t), hidden.shape).copy()
    return dh, {"cls_head.weight": dw, "cls_head.bias": db}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
