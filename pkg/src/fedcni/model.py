"""Two-layer ReLU MLP with hand-written forward/backward passes.

The hidden activation is the embedding used for prototypes; the softmax head
gives class probabilities. Parameters are immutable values: every update
returns a new :class:`ModelParams`.

Flat layout (used for snapshots and aggregation): ``W1`` row-major (d x h),
``b1`` (h), ``W2`` row-major (h x C), ``b2`` (C); float64 little-endian when
written to disk.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError, ShapeError


@dataclass(frozen=True)
class ModelParams:
    W1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (h, C)
    b2: np.ndarray  # (C,)

    def __post_init__(self):
        d, h = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[0] != h or self.b2.shape != (self.W2.shape[1],):
            raise ShapeError(
                f"inconsistent parameter shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return self.W1, self.b1, self.W2, self.b2

    def map(self, fn, *others: "ModelParams") -> "ModelParams":
        return ModelParams(*(fn(*xs) for xs in zip(self.arrays(), *(o.arrays() for o in others))))

    def __add__(self, other):
        return self.map(np.add, other)

    def __sub__(self, other):
        return self.map(np.subtract, other)

    def scale(self, s: float) -> "ModelParams":
        return self.map(lambda a: s * a)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_vector(cls, vec, dims) -> "ModelParams":
        d, h, c = dims
        vec = np.asarray(vec, dtype=float)
        sizes = [d * h, h, h * c, c]
        if vec.size != sum(sizes):
            raise ShapeError(f"vector of length {vec.size} does not match dims {dims}")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(d, h).copy(), parts[1].copy(),
                   parts[2].reshape(h, c).copy(), parts[3].copy())

    @classmethod
    def zeros_like(cls, other: "ModelParams") -> "ModelParams":
        return other.map(np.zeros_like)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(feature_dim: int, hidden: int, num_classes: int, rng: np.random.Generator) -> ModelParams:
    """Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) for every weight and bias."""
    b1 = np.sqrt(1.0 / feature_dim)
    b2 = np.sqrt(1.0 / hidden)
    return ModelParams(
        rng.uniform(-b1, b1, (feature_dim, hidden)),
        rng.uniform(-b1, b1, hidden),
        rng.uniform(-b2, b2, (hidden, num_classes)),
        rng.uniform(-b2, b2, num_classes),
    )


def save_params(params: ModelParams, path) -> None:
    Path(path).write_bytes(params.to_vector().astype("<f8").tobytes())


def load_params(path, dims) -> ModelParams:
    return ModelParams.from_vector(np.frombuffer(Path(path).read_bytes(), dtype="<f8"), dims)


def _as_batch(params: ModelParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.W1.shape[0]:
        raise ShapeError(f"expected inputs of dimension {params.W1.shape[0]}, got shape {x.shape}")
    return x, single


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: np.ndarray  # W1^T x + b1
    hidden: np.ndarray  # ReLU(pre), the embedding
    logits: np.ndarray
    probs: np.ndarray


def forward(params: ModelParams, x, ids=None) -> ForwardCache:
    x, _ = _as_batch(params, x)
    # non-finite rows are reported below with their sample id
    with np.errstate(invalid="ignore", over="ignore"):
        pre = x @ params.W1 + params.b1
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ params.W2 + params.b2
        probs = softmax(logits)
    bad = ~np.all(np.isfinite(probs), axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        sid = None if ids is None else int(ids[row])
        raise NumericError(f"non-finite forward pass (sample id {sid})", sample_id=sid)
    return ForwardCache(x, pre, hidden, logits, probs)


def embed(params: ModelParams, x) -> np.ndarray:
    """ReLU(W1^T x + b1) for one input or a batch of rows."""
    x, single = _as_batch(params, x)
    out = np.maximum(x @ params.W1 + params.b1, 0.0)
    return out[0] if single else out


def predict(params: ModelParams, x) -> np.ndarray:
    x, single = _as_batch(params, x)
    out = forward(params, x).probs
    return out[0] if single else out


def backward(
    params: ModelParams, cache: ForwardCache, d_logits: np.ndarray, d_embed: np.ndarray | None = None
) -> ModelParams:
    """Chain upstream gradients w.r.t. logits (and optionally the embedding) to parameters."""
    d_hidden = d_logits @ params.W2.T
    if d_embed is not None:
        d_hidden = d_hidden + d_embed
    d_pre = d_hidden * (cache.pre > 0)
    return ModelParams(
        cache.x.T @ d_pre,
        d_pre.sum(axis=0),
        cache.hidden.T @ d_logits,
        d_logits.sum(axis=0),
    )


@dataclass(frozen=True)
class Optimizer:
    learning_rate: float
    momentum: float
    velocity: ModelParams

    @classmethod
    def create(cls, params: ModelParams, learning_rate: float, momentum: float) -> "Optimizer":
        if not learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        return cls(learning_rate, momentum, ModelParams.zeros_like(params))


def sgd_step(params: ModelParams, grad: ModelParams, opt: Optimizer) -> tuple[ModelParams, Optimizer]:
    """Heavy-ball SGD: ``v <- m v + g``, ``theta <- theta - lr v``."""
    velocity = opt.velocity.map(lambda v, g: opt.momentum * v + g, grad)
    new_params = params.map(lambda p, v: p - opt.learning_rate * v, velocity)
    return new_params, Optimizer(opt.learning_rate, opt.momentum, velocity)
