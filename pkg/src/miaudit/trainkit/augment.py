"""Randomized input transforms for flat or grid-shaped feature vectors.

These are the feature-vector counterparts of the usual image augmentations:
mirror plays horizontal flip, shift plays random crop with zero padding,
cutout plays random erasing, and random_choice plays a learned
augmentation policy that picks one sub-transform per example.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np

from miaudit.core import SeededRng, as_generator

KINDS = ('mirror', 'shift', 'cutout', 'gaussian_noise', 'random_choice')


@dataclasses.dataclass(frozen=True)
class Transform:
    """One transform with its parameter and apply probability.

    `param` is max_offset for shift, window for cutout and sigma for
    gaussian_noise; mirror and random_choice ignore it.
    """
    kind: str
    param: float = 0.0
    p: float = 1.0
    children: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f'unknown transform {self.kind!r}')
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f'apply probability {self.p} outside [0, 1]')
        if self.kind == 'random_choice':
            if not self.children:
                raise ValueError('random_choice needs at least one child')
            object.__setattr__(self, 'children', tuple(self.children))
        elif self.children:
            raise ValueError(f'{self.kind} takes no children')
        if self.kind in ('shift', 'cutout'):
            if self.param < 0 or self.param != int(self.param):
                raise ValueError(f'{self.kind} needs a nonnegative integer size')
        if self.kind == 'gaussian_noise' and not self.param >= 0:
            raise ValueError('sigma must be nonnegative')

    def to_dict(self) -> dict:
        d = {'kind': self.kind, 'p': self.p}
        if self.kind in ('shift', 'cutout', 'gaussian_noise'):
            d['param'] = self.param
        if self.children:
            d['children'] = [c.to_dict() for c in self.children]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> 'Transform':
        return cls(d['kind'], float(d.get('param', 0.0)), float(d.get('p', 1.0)),
                   tuple(cls.from_dict(c) for c in d.get('children', ())))


def mirror(p: float = 1.0) -> Transform:
    return Transform('mirror', p=p)


def shift(max_offset: int, p: float = 1.0) -> Transform:
    return Transform('shift', max_offset, p)


def cutout(window: int, p: float = 1.0) -> Transform:
    return Transform('cutout', window, p)


def gaussian_noise(sigma: float, p: float = 1.0) -> Transform:
    return Transform('gaussian_noise', sigma, p)


def random_choice(children: Sequence[Transform], p: float = 1.0) -> Transform:
    return Transform('random_choice', p=p, children=tuple(children))


@dataclasses.dataclass(frozen=True)
class AugmentationPolicy:
    transforms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'transforms', tuple(self.transforms))

    def __bool__(self) -> bool:
        return bool(self.transforms)

    def validate(self, dim: int, shape: Optional[tuple[int, int]] = None) -> None:
        """Raises ValueError if a transform does not fit the input size."""
        extent = min(shape) if shape else dim

        def check(t: Transform):
            if t.kind == 'shift' and not t.param < extent:
                raise ValueError(f'shift offset {t.param:g} must be < {extent}')
            if t.kind == 'cutout' and not t.param <= extent:
                raise ValueError(f'cutout window {t.param:g} must be <= {extent}')
            for c in t.children:
                check(c)

        for t in self.transforms:
            check(t)

    def to_list(self) -> list:
        return [t.to_dict() for t in self.transforms]

    @classmethod
    def from_list(cls, items) -> 'AugmentationPolicy':
        return cls(tuple(Transform.from_dict(d) for d in items or ()))


NO_AUGMENTATION = AugmentationPolicy()


def preset_policy(name: str, dim: int, shape: Optional[tuple[int, int]] = None,
                  noise_sigma: float = 0.5) -> AugmentationPolicy:
    """Named policies, combinable with '+', e.g. 'shift+cutout+mirror'.

    Components: none, mirror, shift, cutout, noise, policy, all. 'policy' is a
    random_choice over the primitive transforms; 'all' stacks every
    primitive and then the policy.
    """
    extent = min(shape) if shape else dim
    offset = min(max(1, extent // 8), extent - 1)
    window = max(1, extent // 4)
    prims = {
        'mirror': mirror(0.5),
        'shift': shift(offset),
        'cutout': cutout(window),
        'noise': gaussian_noise(noise_sigma),
    }
    prims['policy'] = random_choice(
        [gaussian_noise(noise_sigma), shift(offset), cutout(window), mirror()])
    out = []
    for part in name.split('+'):
        part = part.strip()
        if part in ('none', ''):
            continue
        if part == 'all':
            out.extend(prims[k] for k in ('shift', 'cutout', 'mirror', 'noise', 'policy'))
        elif part in prims:
            out.append(prims[part])
        else:
            raise ValueError(f'unknown preset component {part!r}')
    return AugmentationPolicy(tuple(out))


def _apply_one(t: Transform, x: np.ndarray, gen: np.random.Generator,
               shape: Optional[tuple[int, int]]) -> np.ndarray:
    n, d = x.shape
    if n == 0:
        return x
    if t.kind == 'gaussian_noise':
        return x + t.param * gen.standard_normal(x.shape)
    if t.kind == 'random_choice':
        pick = gen.integers(len(t.children), size=n)
        out = x.copy()
        for i, child in enumerate(t.children):
            rows = np.flatnonzero(pick == i)
            if rows.size:
                out[rows] = _apply_with_prob(child, x[rows], gen, shape)
        return out
    if shape is None:
        if t.kind == 'mirror':
            return x[:, ::-1].copy()
        cols = np.arange(d)
        if t.kind == 'shift':
            m = int(t.param)
            off = gen.integers(-m, m + 1, size=n)
            src = cols[None, :] - off[:, None]
            valid = (src >= 0) & (src < d)
            out = np.take_along_axis(x, np.clip(src, 0, d - 1), axis=1)
            return np.where(valid, out, 0.0)
        w = int(t.param)
        start = gen.integers(0, d - w + 1, size=n)
        inside = (cols[None, :] >= start[:, None]) & (cols[None, :] < (start + w)[:, None])
        return np.where(inside, 0.0, x)
    h, wd = shape
    img = x.reshape(n, h, wd)
    if t.kind == 'mirror':
        return img[:, :, ::-1].reshape(n, d).copy()
    rr = np.arange(h)[None, :, None]
    cc = np.arange(wd)[None, None, :]
    if t.kind == 'shift':
        m = int(t.param)
        dy = gen.integers(-m, m + 1, size=n)[:, None, None]
        dx = gen.integers(-m, m + 1, size=n)[:, None, None]
        sr, sc = rr - dy, cc - dx
        valid = (sr >= 0) & (sr < h) & (sc >= 0) & (sc < wd)
        flat_src = np.clip(sr, 0, h - 1) * wd + np.clip(sc, 0, wd - 1)
        out = np.take_along_axis(x, flat_src.reshape(n, d), axis=1)
        return np.where(valid.reshape(n, d), out, 0.0)
    w = int(t.param)
    r0 = gen.integers(0, h - w + 1, size=n)[:, None, None]
    c0 = gen.integers(0, wd - w + 1, size=n)[:, None, None]
    inside = (rr >= r0) & (rr < r0 + w) & (cc >= c0) & (cc < c0 + w)
    return np.where(inside.reshape(n, d), 0.0, x)


def _apply_with_prob(t, x, gen, shape):
    if t.p >= 1.0:
        return _apply_one(t, x, gen, shape)
    hit = gen.random(x.shape[0]) < t.p
    if not hit.any():
        return x
    out = x.copy()
    out[hit] = _apply_one(t, x[hit], gen, shape)
    return out


def augment_batch(policy: AugmentationPolicy, x: np.ndarray, rng,
                  shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Applies `policy` independently to every row of `x`.

    Transforms run in order; each row draws its own apply decision and its
    own offsets, windows or noise.
    """
    x = np.asarray(x, dtype=np.float64)
    if not policy:
        return x
    gen = as_generator(rng)
    for t in policy.transforms:
        x = _apply_with_prob(t, x, gen, shape)
    return x


def apply_augmentation(policy: AugmentationPolicy, x, rng: SeededRng | np.random.Generator,
                       shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Augments a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError('expected a single feature vector')
    policy.validate(x.size, shape)
    return augment_batch(policy, x[None, :], rng, shape)[0]
