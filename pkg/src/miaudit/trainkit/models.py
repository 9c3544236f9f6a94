"""Softmax regression and one-hidden-layer ReLU MLP in plain numpy."""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

LOSS_EPS = 1e-12
KINDS = ('linear', 'mlp')


@dataclasses.dataclass(frozen=True, eq=False)
class ModelParams:
    """Immutable classifier parameters.

    `layers` holds (weight, bias) pairs; weight has shape (fan_in, fan_out).
    A linear model has one layer, an MLP two with a ReLU in between.
    """
    kind: str
    layers: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f'unknown model kind {self.kind!r}')
        expected = 1 if self.kind == 'linear' else 2
        if len(self.layers) != expected:
            raise ValueError(f'{self.kind} model needs {expected} layer(s)')
        frozen = []
        prev = None
        for w, b in self.layers:
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError('inconsistent layer shapes')
            if prev is not None and w.shape[0] != prev:
                raise ValueError('layer fan-in does not match previous fan-out')
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError('model parameters must be finite')
            w.setflags(write=False)
            b.setflags(write=False)
            frozen.append((w, b))
            prev = w.shape[1]
        object.__setattr__(self, 'layers', tuple(frozen))

    @property
    def dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def hidden_width(self) -> Optional[int]:
        return self.layers[0][0].shape[1] if self.kind == 'mlp' else None

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for layer in self.layers for a in layer])

    def with_flat(self, theta: np.ndarray) -> 'ModelParams':
        layers, pos = [], 0
        for w, b in self.layers:
            nw, nb = w.size, b.size
            layers.append((theta[pos:pos + nw].reshape(w.shape),
                           theta[pos + nw:pos + nw + nb]))
            pos += nw + nb
        return ModelParams(self.kind, tuple(layers))


def init_params(kind: str, dim: int, num_classes: int, hidden_width: int,
                gen: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    sizes = [dim, num_classes] if kind == 'linear' else [dim, hidden_width, num_classes]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = gen.uniform(-bound, bound, size=(fan_in, fan_out))
        b = gen.uniform(-bound, bound, size=fan_out)
        layers.append((w, b))
    return ModelParams(kind, tuple(layers))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits_of(model: ModelParams, x: np.ndarray) -> np.ndarray:
    (w1, b1), *rest = model.layers
    h = x @ w1 + b1
    if rest:
        w2, b2 = rest[0]
        h = np.maximum(h, 0.0) @ w2 + b2
    return h


def forward(model: ModelParams, x) -> np.ndarray:
    """Class probabilities for one example (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ValueError(f'input dimension {x.shape[-1]} != model dim {model.dim}')
    return softmax(logits_of(model, x))


def cross_entropy(p, y) -> np.ndarray | float:
    """-log(max(p_y, 1e-12)); vectorized over leading axes of `p`."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    num_classes = p.shape[-1]
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ValueError(f'label out of range [0, {num_classes})')
    py = np.take_along_axis(p, y[..., None].astype(np.int64), axis=-1)[..., 0]
    loss = -np.log(np.maximum(py, LOSS_EPS))
    return float(loss) if loss.ndim == 0 else loss


def loss_and_grad(model, x: np.ndarray, y: np.ndarray,
                  weight_decay: float = 0.0) -> tuple[float, list]:
    """Mean clamped cross-entropy plus (weight_decay / 2) * ||theta||^2.

    `model` is a ModelParams or a bare sequence of (weight, bias) pairs; the
    trainer passes mutable arrays to skip re-validation on every step.

    Returns:
        The loss and a list of (dW, db) pairs aligned with the layers.
    """
    layers = model.layers if isinstance(model, ModelParams) else model
    n = x.shape[0]
    (w1, b1), *rest = layers
    pre = x @ w1 + b1
    if rest:
        w2, b2 = rest[0]
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ w2 + b2
    else:
        logits = pre
    p = softmax(logits)
    py = p[np.arange(n), y]
    loss = float(np.mean(-np.log(np.maximum(py, LOSS_EPS))))
    # The clamp is flat below eps, so clamped rows contribute no gradient.
    dlogits = p.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits[py < LOSS_EPS] = 0.0
    dlogits /= n
    if rest:
        grads = [None, (hidden.T @ dlogits, dlogits.sum(axis=0))]
        dpre = (dlogits @ w2.T) * (pre > 0)
        grads[0] = (x.T @ dpre, dpre.sum(axis=0))
    else:
        grads = [(x.T @ dlogits, dlogits.sum(axis=0))]
    if weight_decay:
        reg = 0.0
        for i, (w, b) in enumerate(layers):
            reg += float(np.sum(w * w) + np.sum(b * b))
            gw, gb = grads[i]
            grads[i] = (gw + weight_decay * w, gb + weight_decay * b)
        loss += 0.5 * weight_decay * reg
    return loss, grads
