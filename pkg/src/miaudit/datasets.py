"""Synthetic and file-backed datasets."""

from __future__ import annotations

import csv
import dataclasses
from typing import Optional

import numpy as np

from miaudit.core import Dataset, SeededRng, as_generator


@dataclasses.dataclass(frozen=True)
class DatasetSpec:
    """Declarative dataset description.

    kind 'blobs' draws Gaussian class blobs; kind 'file' loads a CSV whose
    last column is the integer label. `random_labels` replaces every label
    with a uniform draw after generation.
    """
    kind: str = 'blobs'
    num_classes: int = 10
    dim: int = 32
    num_samples: int = 2048
    separation: float = 6.0
    noise: float = 1.0
    label_noise: float = 0.1
    frequencies: int = 6
    shape: Optional[tuple[int, int]] = None
    random_labels: bool = False
    path: Optional[str] = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d['shape'] = list(self.shape) if self.shape else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> 'DatasetSpec':
        d = dict(d)
        if d.get('shape'):
            d['shape'] = tuple(d['shape'])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f'unknown dataset keys: {sorted(unknown)}')
        return cls(**d)


def class_templates(num_classes: int, dim: int, frequencies: int,
                    gen: np.random.Generator) -> np.ndarray:
    """Unit-norm class means built from low-frequency cosines.

    Each template is symmetric about the centre of the coordinate axis, so
    mirroring an example keeps its class distribution, and smooth, so small
    shifts mostly do too.
    """
    centre = (dim - 1) / 2.0
    j = np.arange(dim) - centre
    basis = np.stack([np.cos(np.pi * k * j / dim) for k in range(frequencies)])
    coef = gen.standard_normal((num_classes, frequencies))
    means = coef @ basis
    return means / np.linalg.norm(means, axis=1, keepdims=True)


def make_blobs(spec: DatasetSpec, rng) -> Dataset:
    """Balanced Gaussian blobs with shared isotropic covariance.

    A `label_noise` fraction of examples gets a uniformly drawn wrong label;
    such atypical points are what overfit models memorize.
    """
    gen = as_generator(rng)
    c, d, n = spec.num_classes, spec.dim, spec.num_samples
    means = spec.separation * class_templates(c, d, spec.frequencies, gen)
    labels = np.arange(n) % c
    gen.shuffle(labels)
    x = means[labels] + spec.noise * gen.standard_normal((n, d))
    if spec.label_noise > 0:
        flip = gen.random(n) < spec.label_noise
        labels = labels.copy()
        labels[flip] = (labels[flip] + gen.integers(1, c, size=int(flip.sum()))) % c
    if spec.random_labels:
        labels = gen.integers(0, c, size=n)
    return Dataset(x, labels, c, spec.shape)


def load_csv(path: str, num_classes: Optional[int] = None,
             shape: Optional[tuple[int, int]] = None) -> Dataset:
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f'{path}: empty dataset file')
    body = rows[1:] if not _is_numeric(rows[0]) else rows
    data = np.array([[float(v) for v in r] for r in body if r])
    labels = data[:, -1].astype(np.int64)
    c = num_classes if num_classes else int(labels.max()) + 1
    return Dataset(data[:, :-1], labels, c, shape)


def _is_numeric(row) -> bool:
    try:
        [float(v) for v in row]
    except ValueError:
        return False
    return True


def build_dataset(spec: DatasetSpec, rng: SeededRng) -> Dataset:
    if spec.kind == 'blobs':
        return make_blobs(spec, rng)
    if spec.kind == 'file':
        if not spec.path:
            raise ValueError("dataset kind 'file' needs a path")
        ds = load_csv(spec.path, spec.num_classes, spec.shape)
        if spec.random_labels:
            gen = as_generator(rng)
            ds = Dataset(ds.features, gen.integers(0, ds.num_classes, len(ds)),
                         ds.num_classes, ds.shape)
        return ds
    raise ValueError(f'unknown dataset kind {spec.kind!r}')
