"""Minibatch SGD with checkpointing and holdout-based early stopping."""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from miaudit.core import Dataset, as_generator, check_mask
from miaudit.trainkit.augment import NO_AUGMENTATION, AugmentationPolicy, augment_batch
from miaudit.trainkit.models import (
    LOSS_EPS, ModelParams, init_params, loss_and_grad, softmax)


class TrainingDivergence(RuntimeError):
    """Loss became non-finite; `step` is the global minibatch index."""

    def __init__(self, step: int, loss: float):
        super().__init__(f'non-finite loss {loss!r} at step {step}')
        self.step = step
        self.loss = loss


class DegenerateSubsetError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class EarlyStop:
    patience: int = 3
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.patience < 0:
            raise ValueError('patience must be nonnegative')
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError('holdout_fraction must lie in (0, 1)')


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    model: str = 'mlp'
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.1
    weight_decay: float = 0.0
    hidden_width: int = 128
    augmentation: AugmentationPolicy = NO_AUGMENTATION
    checkpoint_every: int = 10
    early_stop: Optional[EarlyStop] = None

    def __post_init__(self):
        if self.model not in ('linear', 'mlp'):
            raise ValueError(f'unknown model kind {self.model!r}')
        if self.epochs < 1:
            raise ValueError('epochs must be >= 1')
        if self.batch_size < 1:
            raise ValueError('batch_size must be >= 1')
        if self.checkpoint_every < 1:
            raise ValueError('checkpoint_every must be >= 1')
        if not self.learning_rate > 0:
            raise ValueError('learning_rate must be positive')
        if self.weight_decay < 0:
            raise ValueError('weight_decay must be nonnegative')
        if self.model == 'mlp' and self.hidden_width < 1:
            raise ValueError('hidden_width must be >= 1')

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d['augmentation'] = self.augmentation.to_list()
        d['early_stop'] = (dataclasses.asdict(self.early_stop)
                           if self.early_stop else None)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> 'TrainConfig':
        d = dict(d)
        d['augmentation'] = AugmentationPolicy.from_list(d.get('augmentation'))
        if d.get('early_stop'):
            d['early_stop'] = EarlyStop(**d['early_stop'])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f'unknown TrainConfig keys: {sorted(unknown)}')
        return cls(**d)


@dataclasses.dataclass(frozen=True)
class Checkpoint:
    step: int
    params: ModelParams
    train_accuracy: float
    train_loss: float
    holdout_accuracy: Optional[float] = None
    is_best: bool = False


def evaluate(model: ModelParams, dataset: Dataset, selection=None) -> tuple[float, float]:
    """Accuracy and mean cross-entropy on the selected examples.

    Args:
        selection: None for every example, a boolean mask, or an index array.

    Returns:
        (accuracy, mean_loss). Argmax ties go to the lowest class index.
    """
    if selection is None:
        idx = np.arange(len(dataset))
    else:
        sel = np.asarray(selection)
        idx = np.flatnonzero(sel) if sel.dtype == bool else sel
    if idx.size == 0:
        raise ValueError('cannot evaluate on an empty selection')
    return _accuracy_loss(model.layers, dataset.features[idx], dataset.labels[idx])


def _accuracy_loss(layers, x, y) -> tuple[float, float]:
    p = softmax(_logits(layers, x))
    acc = float(np.mean(np.argmax(p, axis=1) == y))
    loss = float(np.mean(-np.log(np.maximum(p[np.arange(len(y)), y], LOSS_EPS))))
    return acc, loss


def _logits(layers, x):
    (w1, b1), *rest = layers
    h = x @ w1 + b1
    if rest:
        h = np.maximum(h, 0.0) @ rest[0][0] + rest[0][1]
    return h


def _snapshot(kind, layers) -> ModelParams:
    return ModelParams(kind, tuple((w.copy(), b.copy()) for w, b in layers))


def train(dataset: Dataset, mask, config: TrainConfig, rng
          ) -> tuple[ModelParams, list[Checkpoint]]:
    """Trains one classifier on the members selected by `mask`.

    A checkpoint is recorded every `checkpoint_every` epochs and after the
    last epoch. Accuracies in checkpoints are full passes over the
    (unaugmented) training subset. With early stopping a holdout is carved
    from the members, training halts once holdout accuracy has not improved
    for `patience` checkpoints, and the best-holdout checkpoint is both
    flagged and returned as the model.

    Returns:
        (model, checkpoints).

    Raises:
        DegenerateSubsetError: the member subset is empty or single-class.
        TrainingDivergence: the minibatch loss became non-finite.
    """
    mask = check_mask(mask, len(dataset))
    members = np.flatnonzero(mask)
    if members.size == 0:
        raise DegenerateSubsetError('member subset is empty')
    if np.unique(dataset.labels[members]).size < 2:
        raise DegenerateSubsetError('member subset contains a single class')
    config.augmentation.validate(dataset.dim, dataset.shape)
    gen = as_generator(rng)

    holdout = None
    train_idx = members
    if config.early_stop is not None:
        perm = gen.permutation(members)
        n_hold = max(1, int(round(config.early_stop.holdout_fraction * perm.size)))
        if n_hold >= perm.size:
            raise DegenerateSubsetError('holdout would consume every member')
        train_idx, holdout = perm[:-n_hold], perm[-n_hold:]

    init = init_params(config.model, dataset.dim, dataset.num_classes,
                       config.hidden_width, gen)
    layers = [(w.copy(), b.copy()) for w, b in init.layers]
    x_all, y_all = dataset.features, dataset.labels
    lr, wd, bs = config.learning_rate, config.weight_decay, config.batch_size
    policy, shape = config.augmentation, dataset.shape

    checkpoints: list[Checkpoint] = []
    best_acc, best_pos, stale = -1.0, -1, 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = gen.permutation(train_idx)
        for start in range(0, order.size, bs):
            batch = order[start:start + bs]
            xb = augment_batch(policy, x_all[batch], gen, shape) if policy else x_all[batch]
            loss, grads = loss_and_grad(layers, xb, y_all[batch], wd)
            if not np.isfinite(loss):
                raise TrainingDivergence(step, loss)
            for (w, b), (gw, gb) in zip(layers, grads):
                w -= lr * gw
                b -= lr * gb
            step += 1
        if epoch % config.checkpoint_every and epoch != config.epochs:
            continue
        if not all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in layers):
            raise TrainingDivergence(step, float('nan'))
        acc, mean_loss = _accuracy_loss(layers, x_all[train_idx], y_all[train_idx])
        hold_acc = None
        if holdout is not None:
            hold_acc, _ = _accuracy_loss(layers, x_all[holdout], y_all[holdout])
        checkpoints.append(Checkpoint(epoch, _snapshot(config.model, layers),
                                      acc, mean_loss, hold_acc))
        if holdout is not None:
            if hold_acc > best_acc:
                best_acc, best_pos, stale = hold_acc, len(checkpoints) - 1, 0
            else:
                stale += 1
                if stale >= max(config.early_stop.patience, 1):
                    break

    if holdout is not None:
        best = dataclasses.replace(checkpoints[best_pos], is_best=True)
        checkpoints[best_pos] = best
        return best.params, checkpoints
    return checkpoints[-1].params, checkpoints
