"""Small numpy MLP: parameters, forward/backward, SGD and parameter algebra.

Everything runs in float64. Parameters are immutable once built; every
operation returns a new :class:`ModelParams`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InvalidLabelError, NumericError, ShapeError

Layer = tuple[np.ndarray, np.ndarray]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelParams:
    """Ordered (weight, bias) pairs; weight has shape (out, in)."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("model needs at least one layer")
        frozen = []
        prev_out = None
        for i, (w, b) in enumerate(self.layers):
            w, b = _frozen(w), _frozen(b)
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if prev_out is not None and w.shape[1] != prev_out:
                raise ShapeError(f"layer {i} expects {w.shape[1]} inputs, previous layer gives {prev_out}")
            prev_out = w.shape[0]
            frozen.append((w, b))
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def layer_sizes(self) -> list[int]:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer]

    def same_shape(self, other: "ModelParams") -> bool:
        return self.layer_sizes == other.layer_sizes

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_vector(cls, vec: np.ndarray, layer_sizes: Sequence[int]) -> "ModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        layers, pos = [], 0
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            w = vec[pos:pos + n_in * n_out].reshape(n_out, n_in)
            pos += n_in * n_out
            b = vec[pos:pos + n_out]
            pos += n_out
            layers.append((w, b))
        if pos != vec.size:
            raise ShapeError(f"vector has {vec.size} entries, layout needs {pos}")
        return cls(tuple(layers))

    @classmethod
    def zeros_like(cls, other: "ModelParams") -> "ModelParams":
        return cls(tuple((np.zeros_like(w), np.zeros_like(b)) for w, b in other.layers))


# Gradients and control variates share the parameter layout.
Gradients = ModelParams
ControlVariate = ModelParams


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre_acts: list[np.ndarray]  # affine output of each hidden layer
    masks: list[np.ndarray | None]  # scaled dropout mask per hidden layer


def _check_sizes(layer_sizes: Sequence[int]) -> list[int]:
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ConfigError(f"layer_sizes must have >= 2 positive entries, got {list(layer_sizes)}")
    return sizes


def init_model(layer_sizes: Sequence[int], seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    sizes = _check_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        layers.append((rng.uniform(-bound, bound, size=(n_out, n_in)), np.zeros(n_out)))
    return ModelParams(tuple(layers))


def forward(
    model: ModelParams,
    batch: np.ndarray,
    train: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on ``batch`` (B x D) and return raw logits plus cache.

    Hidden layers are affine -> ReLU -> inverted dropout (train mode only).
    The last layer is affine. Eval mode never touches ``rng``.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ShapeError(f"batch shape {x.shape} does not match input dim {model.layer_sizes[0]}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ConfigError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    use_dropout = train and dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ConfigError("train-mode dropout needs an rng")

    cache = ForwardCache([], [], [])
    h = x
    last = len(model.layers) - 1
    for i, (w, b) in enumerate(model.layers):
        cache.inputs.append(h)
        z = h @ w.T + b
        if i == last:
            return z, cache
        cache.pre_acts.append(z)
        h = np.maximum(z, 0.0)
        mask = None
        if use_dropout:
            keep = 1.0 - dropout_rate
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        cache.masks.append(mask)
    raise AssertionError("unreachable")


def predict(model: ModelParams, batch: np.ndarray) -> np.ndarray:
    logits, _ = forward(model, batch)
    return np.argmax(logits, axis=1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_ce_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    n, c = logits.shape
    if n == 0:
        raise ShapeError("empty batch")
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= c:
        raise InvalidLabelError(f"labels must be integers in [0, {c})")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = float(-logp[rows, labels].mean())
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    return loss, dlogits / n


def backward(model: ModelParams, cache: ForwardCache, dlogits: np.ndarray) -> Gradients:
    """Backpropagate ``dlogits`` through the cached forward pass."""
    if len(cache.inputs) != len(model.layers):
        raise ShapeError("cache was produced by a model with a different depth")
    delta = np.asarray(dlogits, dtype=np.float64)
    if delta.shape != (cache.inputs[0].shape[0], model.layer_sizes[-1]):
        raise ShapeError(f"dlogits shape {delta.shape} does not match forward pass")
    grads: list[Layer] = []
    for i in range(len(model.layers) - 1, -1, -1):
        w, _ = model.layers[i]
        a_in = cache.inputs[i]
        if a_in.shape[1] != w.shape[1]:
            raise ShapeError(f"cached input for layer {i} has width {a_in.shape[1]}, weight expects {w.shape[1]}")
        grads.append((delta.T @ a_in, delta.sum(axis=0)))
        if i > 0:
            delta = delta @ w
            mask = cache.masks[i - 1]
            if mask is not None:
                delta = delta * mask
            delta = delta * (cache.pre_acts[i - 1] > 0)
    return ModelParams(tuple(reversed(grads)))


def sgd_step(model: ModelParams, grads: Gradients, lr: float) -> ModelParams:
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not model.same_shape(grads):
        raise ShapeError("gradient layout differs from model layout")
    if not grads.is_finite():
        raise NumericError("non-finite gradient")
    return ModelParams(tuple((w - lr * gw, b - lr * gb) for (w, b), (gw, gb) in zip(model.layers, grads.layers)))


def param_combine(terms: Iterable[tuple[float, ModelParams]]) -> ModelParams:
    """Elementwise linear combination ``sum(coeff * params)``."""
    terms = list(terms)
    if not terms:
        raise ShapeError("param_combine needs at least one term")
    ref = terms[0][1]
    for _, p in terms[1:]:
        if not p.same_shape(ref):
            raise ShapeError(f"cannot combine {p.layer_sizes} with {ref.layer_sizes}")
    layers = []
    for i in range(len(ref.layers)):
        w = sum(coef * p.layers[i][0] for coef, p in terms)
        b = sum(coef * p.layers[i][1] for coef, p in terms)
        layers.append((w, b))
    return ModelParams(tuple(layers))


def param_mean(params: Sequence[ModelParams]) -> ModelParams:
    n = len(params)
    return param_combine((1.0 / n, p) for p in params)
