"""Membership scores and attacks.

Every score is oriented so that HIGHER means MORE member-like; entropy-style
criteria are negated to fit. Thresholding and ROC analysis live in
`miaudit.metrics`.

The per-sample functions (`lira_online`, `calibrate_score`, ...) take plain
lists of reference scores. The `*_matrix` variants compute the same
quantities for every sample at once from a (models x samples) score matrix
and membership masks.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import numpy as np

from miaudit.core import as_generator

ENTROPY_EPS = 1e-12
LOGIT_EPS = 1e-7
DEFAULT_FLOOR = 1e-3
_LOG_2PI = math.log(2.0 * math.pi)


def _probs_labels(p, y):
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    c = p.shape[-1]
    if np.any(y < 0) or np.any(y >= c) or np.any(y != np.floor(y)):
        raise ValueError(f'label out of range [0, {c})')
    return p, y.astype(np.int64)


def _scalar(a):
    return float(a) if np.ndim(a) == 0 else a


def _take(p, y):
    return np.take_along_axis(p, y[..., None], axis=-1)[..., 0]


def score_correctness(p, y):
    """1.0 where argmax(p) == y (ties go to the lowest index), else 0.0."""
    p, y = _probs_labels(p, y)
    return _scalar((np.argmax(p, axis=-1) == y).astype(np.float64))


def score_confidence(p, y):
    p, y = _probs_labels(p, y)
    return _scalar(_take(p, y))


def score_neg_entropy(p, y=None):
    """sum_i p_i ln p_i with 0 ln 0 = 0; zero for one-hot vectors."""
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return _scalar(np.sum(p * np.log(safe), axis=-1))


def score_modified_entropy(p, y):
    """Negated modified entropy.

    Mentr = -(1 - p_y) ln p_y - sum_{i != y} p_i ln(1 - p_i), with every
    log argument clamped below at 1e-12.
    """
    p, y = _probs_labels(p, y)
    py = _take(p, y)
    own = (1.0 - py) * np.log(np.maximum(py, ENTROPY_EPS))
    others = p * np.log(np.maximum(1.0 - p, ENTROPY_EPS))
    others_sum = others.sum(axis=-1) - _take(others, y)
    return _scalar(own + others_sum)


def logit_confidence(p, y):
    """ln(q / (1 - q)) with q = p_y clipped to [1e-7, 1 - 1e-7]."""
    p, y = _probs_labels(p, y)
    q = np.clip(_take(p, y), LOGIT_EPS, 1.0 - LOGIT_EPS)
    return _scalar(np.log(q) - np.log1p(-q))


CRITERIA = {
    'correctness': score_correctness,
    'confidence': score_confidence,
    'entropy': score_neg_entropy,
    'modified_entropy': score_modified_entropy,
    'logit_confidence': logit_confidence,
}


def criterion_scores(criterion: str, probs, labels) -> np.ndarray:
    try:
        fn = CRITERIA[criterion]
    except KeyError:
        raise ValueError(f'unknown criterion {criterion!r}') from None
    return np.asarray(fn(probs, labels), dtype=np.float64)


def calibrate_score(target_score: float, reference_scores: Sequence[float]) -> float:
    """Difficulty-calibrated score: target minus the mean OUT-reference score."""
    refs = np.asarray(reference_scores, dtype=np.float64)
    if refs.size == 0:
        raise ValueError('calibration needs at least one reference score')
    return float(target_score - refs.mean())


@dataclasses.dataclass(frozen=True)
class GaussianFit:
    mean: float
    std: float

    def logpdf(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.std
        return _scalar(-0.5 * (_LOG_2PI + z * z) - math.log(self.std))


def fit_gaussian(samples: Sequence[float], floor: float = DEFAULT_FLOOR) -> GaussianFit:
    """Mean and Bessel-corrected std, the std floored at `floor`."""
    if not floor > 0:
        raise ValueError('variance floor must be positive')
    s = np.asarray(samples, dtype=np.float64)
    if s.size == 0:
        raise ValueError('cannot fit a Gaussian to no samples')
    std = float(s.std(ddof=1)) if s.size >= 2 else 0.0
    return GaussianFit(float(s.mean()), max(std, floor))


def lira_online(target: float, in_scores: Sequence[float], out_scores: Sequence[float],
                variance_mode: str = 'per_sample',
                global_std: Optional[tuple[float, float]] = None,
                floor: float = DEFAULT_FLOOR) -> float:
    """log N(target | IN fit) - log N(target | OUT fit).

    With variance_mode='global' the per-sample stds are replaced by the
    supplied (std_in, std_out), still floored.
    """
    fit_in = fit_gaussian(in_scores, floor)
    fit_out = fit_gaussian(out_scores, floor)
    if variance_mode == 'global':
        if global_std is None:
            raise ValueError("variance_mode='global' needs global_std")
        fit_in = GaussianFit(fit_in.mean, max(global_std[0], floor))
        fit_out = GaussianFit(fit_out.mean, max(global_std[1], floor))
    elif variance_mode != 'per_sample':
        raise ValueError(f'unknown variance mode {variance_mode!r}')
    return float(fit_in.logpdf(target) - fit_out.logpdf(target))


def lira_offline(target: float, out_scores: Sequence[float],
                 floor: float = DEFAULT_FLOOR) -> float:
    """One-sided standardized exceedance over the OUT distribution."""
    fit = fit_gaussian(out_scores, floor)
    return float((target - fit.mean) / fit.std)


def _order_index(n: int, alpha: float) -> int:
    # 1-based k = n - floor(alpha * n), computed exactly for the float alpha.
    return n - math.floor(Fraction(alpha) * n)


def select_threshold_fixed_fpr(out_scores: Sequence[float], alpha: float) -> float:
    """Smallest threshold whose empirical FPR on `out_scores` is <= alpha.

    This is the k-th order statistic with k = ceil((1 - alpha) * n).
    """
    s = np.sort(np.asarray(out_scores, dtype=np.float64).ravel())
    if s.size == 0:
        raise ValueError('need at least one OUT score')
    if not 0.0 < alpha < 1.0:
        raise ValueError('alpha must lie in (0, 1)')
    return float(s[_order_index(s.size, alpha) - 1])


def select_threshold_per_class(out_scores_by_class: Mapping[int, Sequence[float]],
                               alpha: float) -> dict:
    """Per-class fixed-FPR thresholds.

    A class with no OUT scores falls back to the threshold over the pooled
    scores of every class and triggers a warning.
    """
    pooled = [v for vals in out_scores_by_class.values() for v in vals]
    if not pooled:
        raise ValueError('no OUT scores in any class')
    global_tau = None
    out = {}
    for c, vals in out_scores_by_class.items():
        if len(vals) == 0:
            if global_tau is None:
                global_tau = select_threshold_fixed_fpr(pooled, alpha)
            warnings.warn(f'class {c} has no OUT scores; using the global threshold')
            out[c] = global_tau
        else:
            out[c] = select_threshold_fixed_fpr(vals, alpha)
    return out


def apply_threshold(score: float, tau: float) -> bool:
    """True (member) iff score > tau."""
    return bool(score > tau)


# -- score-matrix variants ---------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Per-model, per-sample scores plus each model's membership mask.

    Attributes:
        scores: (num_models, num_samples) finite scores of `criterion`.
        masks: (num_models, num_samples) booleans, True = trained on sample.
        criterion: Name of the score stored in `scores`.
        labels: Optional (num_samples,) class labels.
        probs: Optional (num_models, num_samples, C) model outputs; needed by
            attacks that use a different criterion or the full vector.
    """
    scores: np.ndarray
    masks: np.ndarray
    criterion: str = 'logit_confidence'
    labels: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64)
        masks = np.array(self.masks, dtype=bool)
        if scores.ndim != 2 or scores.size == 0:
            raise ValueError('scores must be a nonempty 2-D matrix')
        if masks.shape != scores.shape:
            raise ValueError(f'mask shape {masks.shape} != score shape {scores.shape}')
        if not np.all(np.isfinite(scores)):
            raise ValueError('scores must be finite')
        for a in (scores, masks):
            a.setflags(write=False)
        object.__setattr__(self, 'scores', scores)
        object.__setattr__(self, 'masks', masks)
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64)
            if labels.shape != (scores.shape[1],):
                raise ValueError('labels must have one entry per sample')
            labels.setflags(write=False)
            object.__setattr__(self, 'labels', labels)
        if self.probs is not None:
            probs = np.array(self.probs, dtype=np.float64)
            if probs.ndim != 3 or probs.shape[:2] != scores.shape:
                raise ValueError('probs must be (num_models, num_samples, C)')
            probs.setflags(write=False)
            object.__setattr__(self, 'probs', probs)

    @property
    def num_models(self) -> int:
        return self.scores.shape[0]

    @property
    def num_samples(self) -> int:
        return self.scores.shape[1]

    def rows(self, idx) -> 'ScoreMatrix':
        idx = np.asarray(idx)
        return ScoreMatrix(self.scores[idx], self.masks[idx], self.criterion, self.labels,
                           None if self.probs is None else self.probs[idx])

    def equals(self, other: 'ScoreMatrix') -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)
        return (self.criterion == other.criterion and same(self.scores, other.scores)
                and same(self.masks, other.masks) and same(self.labels, other.labels)
                and same(self.probs, other.probs))


def _masked_stats(scores: np.ndarray, mask: np.ndarray, floor: float):
    """Per-column mean and floored Bessel std over the rows where mask holds."""
    count = mask.sum(axis=0)
    if np.any(count == 0):
        raise ValueError('some sample has no reference models on one side')
    total = np.where(mask, scores, 0.0).sum(axis=0)
    mean = total / count
    resid = np.where(mask, scores - mean, 0.0)
    ss = (resid * resid).sum(axis=0)
    with np.errstate(invalid='ignore', divide='ignore'):
        std = np.where(count >= 2, np.sqrt(ss / np.maximum(count - 1, 1)), 0.0)
    return mean, np.maximum(std, floor), count


def pooled_std(scores: np.ndarray, mask: np.ndarray) -> float:
    """Std of scores around their per-sample means, pooled over samples."""
    count = mask.sum(axis=0)
    keep = count > 0
    total = np.where(mask, scores, 0.0).sum(axis=0)
    mean = np.where(keep, total / np.maximum(count, 1), 0.0)
    resid = np.where(mask, scores - mean, 0.0)
    dof = int(count.sum() - keep.sum())
    if dof <= 0:
        return 0.0
    return float(math.sqrt((resid * resid).sum() / dof))


def _gauss_logpdf(x, mean, std):
    z = (x - mean) / std
    return -0.5 * (_LOG_2PI + z * z) - np.log(std)


def lira_online_matrix(target: np.ndarray, shadow: np.ndarray, in_mask: np.ndarray,
                       variance_mode: str = 'per_sample',
                       floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """`lira_online` for every column of a shadow score matrix."""
    mu_in, sd_in, _ = _masked_stats(shadow, in_mask, floor)
    mu_out, sd_out, _ = _masked_stats(shadow, ~in_mask, floor)
    if variance_mode == 'global':
        sd_in = np.full_like(sd_in, max(pooled_std(shadow, in_mask), floor))
        sd_out = np.full_like(sd_out, max(pooled_std(shadow, ~in_mask), floor))
    elif variance_mode != 'per_sample':
        raise ValueError(f'unknown variance mode {variance_mode!r}')
    return _gauss_logpdf(target, mu_in, sd_in) - _gauss_logpdf(target, mu_out, sd_out)


def lira_offline_matrix(target, shadow, in_mask, variance_mode='per_sample',
                        floor=DEFAULT_FLOOR) -> np.ndarray:
    mu_out, sd_out, _ = _masked_stats(shadow, ~in_mask, floor)
    if variance_mode == 'global':
        sd_out = np.full_like(sd_out, max(pooled_std(shadow, ~in_mask), floor))
    return (target - mu_out) / sd_out


def calibrated_matrix(target, shadow, in_mask) -> np.ndarray:
    out = ~in_mask
    count = out.sum(axis=0)
    if np.any(count == 0):
        raise ValueError('some sample has no OUT reference models')
    return target - np.where(out, shadow, 0.0).sum(axis=0) / count


def reference_fpr_matrix(target, shadow, in_mask) -> np.ndarray:
    """Sample-specific fixed-FPR attack.

    Returns the fraction of each sample's OUT reference scores that lie
    strictly below its target score. With n references, `rank >= k / n` for
    k = n - floor(alpha * n) holds exactly when the target exceeds
    `select_threshold_fixed_fpr(references, alpha)`, so one score covers
    every alpha.
    """
    out = ~in_mask
    count = out.sum(axis=0)
    if np.any(count == 0):
        raise ValueError('some sample has no OUT reference models')
    below = (out & (shadow < target[None, :])).sum(axis=0)
    return below / count


def per_class_matrix(target, shadow, in_mask, labels, num_classes) -> np.ndarray:
    """Class-wise fixed-FPR attack: rank of the target score within the pooled
    OUT scores of its class (fraction strictly below)."""
    out = ~in_mask
    pooled_all = np.sort(shadow[out])
    if pooled_all.size == 0:
        raise ValueError('no OUT reference scores')
    result = np.empty(target.shape, dtype=np.float64)
    for c in range(num_classes):
        cols = np.flatnonzero(labels == c)
        if cols.size == 0:
            continue
        pool = np.sort(shadow[:, cols][out[:, cols]])
        if pool.size == 0:
            warnings.warn(f'class {c} has no OUT scores; using the global pool')
            pool = pooled_all
        result[cols] = np.searchsorted(pool, target[cols], side='left') / pool.size
    return result


# -- NN-based attack ---------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class NNAttackConfig:
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 0.5
    weight_decay: float = 0.0
    max_examples: int = 50000


@dataclasses.dataclass(frozen=True, eq=False)
class AttackModel:
    """Logistic regression over [sorted probabilities, one-hot label]."""
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size % 2 or not np.all(np.isfinite(w)) \
                or not math.isfinite(self.bias):
            raise ValueError('attack model needs finite weights of even length 2C')
        w.setflags(write=False)
        object.__setattr__(self, 'weights', w)

    @property
    def num_classes(self) -> int:
        return self.weights.size // 2


def attack_features(p, y) -> np.ndarray:
    """Descending-sorted probabilities concatenated with the one-hot label."""
    p, y = _probs_labels(p, y)
    sorted_p = -np.sort(-p, axis=-1)
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, y[..., None], 1.0, axis=-1)
    return np.concatenate([sorted_p, onehot], axis=-1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def nn_attack_train(features, labels, config: NNAttackConfig = NNAttackConfig(),
                    rng=None) -> AttackModel:
    """Fits the attack model by minibatch SGD on logistic loss.

    Raises:
        ValueError: if only one membership class is present.
    """
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(labels).astype(np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != t.size or x.shape[1] % 2:
        raise ValueError('features must be (n, 2C) and match labels')
    if np.unique(t).size < 2:
        raise ValueError('attack training set needs both members and non-members')
    gen = as_generator(rng) if rng is not None else np.random.default_rng(0)
    if x.shape[0] > config.max_examples:
        keep = np.sort(gen.choice(x.shape[0], config.max_examples, replace=False))
        x, t = x[keep], t[keep]
    w = np.zeros(x.shape[1])
    b = 0.0
    n = x.shape[0]
    for _ in range(config.epochs):
        order = gen.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            err = _sigmoid(x[idx] @ w + b) - t[idx]
            w -= config.learning_rate * (x[idx].T @ err / idx.size + config.weight_decay * w)
            b -= config.learning_rate * float(err.mean())
    return AttackModel(w, b)


def nn_attack_score(model: AttackModel, feature):
    """Member probability sigmoid(w . feature + b)."""
    f = np.asarray(feature, dtype=np.float64)
    if f.shape[-1] != model.weights.size:
        raise ValueError(f'feature dimension {f.shape[-1]} != {model.weights.size}')
    return _scalar(_sigmoid(f @ model.weights + model.bias))
