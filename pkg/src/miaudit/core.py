"""Shared data types, validation helpers and seeded randomness."""

from __future__ import annotations

import dataclasses
from typing import NamedTuple, Optional, Sequence

import numpy as np

PROB_TOLERANCE = 1e-6
_MASK64 = 2**64 - 1


class ProbabilityError(ValueError):
    """Base class for rejected probability vectors."""


class NonFiniteError(ProbabilityError):
    pass


class NotNormalizedError(ProbabilityError):
    pass


class OutOfRangeError(ProbabilityError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class LabeledExample(NamedTuple):
    features: np.ndarray
    label: int


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus integer labels.

    Sample identity is the row index; every mask and score matrix in the
    package refers to samples by that index.

    Attributes:
        features: (n, d) float array.
        labels: (n,) integer array with values in [0, num_classes).
        num_classes: Number of classes C.
        shape: Optional (height, width) grid with height * width == d. When set,
            shift and cutout augmentations operate on the grid.
    """
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    shape: Optional[tuple[int, int]] = None

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError('features must be a nonempty (n, d) array')
        if y.shape != (x.shape[0],):
            raise ValueError(
                f'labels shape {y.shape} does not match {x.shape[0]} examples')
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError('labels must be integers')
        y = y.astype(np.int64)
        if self.num_classes < 1:
            raise ValueError('num_classes must be positive')
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f'labels must lie in [0, {self.num_classes})')
        if not np.all(np.isfinite(x)):
            raise ValueError('features must be finite')
        if self.shape is not None:
            shape = tuple(int(s) for s in self.shape)
            if len(shape) != 2 or shape[0] * shape[1] != x.shape[1]:
                raise ValueError(f'grid shape {shape} does not cover dim {x.shape[1]}')
            object.__setattr__(self, 'shape', shape)
        object.__setattr__(self, 'features', _frozen(x))
        object.__setattr__(self, 'labels', _frozen(y))

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> LabeledExample:
        return LabeledExample(self.features[i], int(self.labels[i]))

    @classmethod
    def from_examples(cls, examples: Sequence[LabeledExample],
                      num_classes: int, dim: Optional[int] = None) -> 'Dataset':
        if not examples:
            raise ValueError('dataset must be nonempty')
        x = np.stack([np.asarray(e.features, dtype=np.float64) for e in examples])
        if dim is not None and x.shape[1] != dim:
            raise ValueError(f'feature dimension {x.shape[1]} != declared {dim}')
        return cls(x, np.array([e.label for e in examples]), num_classes)


def validate_probability_vector(p, num_classes: Optional[int] = None) -> np.ndarray:
    """Checks that `p` lies on the probability simplex.

    Never renormalizes; use `renormalize` for an explicit repair.

    Returns:
        A read-only float64 copy of `p`.

    Raises:
        NonFiniteError, OutOfRangeError, NotNormalizedError.
    """
    p = np.array(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ProbabilityError('probability vector must be 1-D and nonempty')
    if num_classes is not None and p.size != num_classes:
        raise ProbabilityError(f'expected {num_classes} entries, got {p.size}')
    if not np.all(np.isfinite(p)):
        raise NonFiniteError('probability vector has non-finite entries')
    if np.any(p < 0) or np.any(p > 1):
        raise OutOfRangeError('probability entries must lie in [0, 1]')
    total = p.sum()
    if abs(total - 1.0) > PROB_TOLERANCE:
        raise NotNormalizedError(f'probabilities sum to {total!r}')
    return _frozen(p)


def renormalize(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), 0.0, None)
    total = p.sum(axis=-1, keepdims=True)
    if np.any(total <= 0) or not np.all(np.isfinite(total)):
        raise ProbabilityError('cannot renormalize a vector with no mass')
    return p / total


@dataclasses.dataclass(frozen=True)
class SeededRng:
    """A (seed, stream) pair naming an independent random stream.

    `generator()` always starts the stream from the beginning, so the same
    pair yields the same draws. Streams for concurrent tasks are derived with
    `child` rather than by sharing a Generator.
    """
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.seed & _MASK64, spawn_key=(self.stream & _MASK64,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> 'SeededRng':
        # Mixes keys into a new 64-bit stream id deterministically.
        ss = np.random.SeedSequence(
            entropy=self.seed & _MASK64, spawn_key=(self.stream & _MASK64, *keys))
        return SeededRng(self.seed, int(ss.generate_state(1, np.uint64)[0]))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, SeededRng):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f'expected SeededRng or numpy Generator, got {type(rng)!r}')


def sample_half_split(n: int, rng) -> np.ndarray:
    """Draws a membership mask with exactly floor(n / 2) members.

    Every such mask is equally likely.
    """
    if n < 2:
        raise ValueError(f'need at least 2 samples to split, got {n}')
    gen = as_generator(rng)
    mask = np.zeros(n, dtype=bool)
    mask[gen.permutation(n)[:n // 2]] = True
    return _frozen(mask)


def check_mask(mask, n: int, size: Optional[int] = None) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f'mask length {mask.shape} != dataset size {n}')
    if size is not None and int(mask.sum()) != size:
        raise ValueError(f'mask has {int(mask.sum())} members, expected {size}')
    return mask
