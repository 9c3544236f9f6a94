"""Attack evaluation on member / non-member score sets.

Conventions:
  * a sample is predicted member iff its score is strictly above the
    threshold;
  * the ROC curve has one point per distinct score (ties between members
    and non-members move both rates at once, never interpolated);
  * TPR at a target FPR is read off the step function, not interpolated;
  * every stored value is a fraction in [0, 1]; percentages are for display.
"""

from __future__ import annotations

import dataclasses
import math
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import numpy as np


@dataclasses.dataclass(frozen=True, eq=False)
class RocCurve:
    """ROC points ordered by decreasing threshold.

    `tp` and `fp` are the integer counts behind `tpr` and `fpr`; they make the
    area computation exact.
    """
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    num_members: int
    num_nonmembers: int

    def __len__(self) -> int:
        return self.fpr.size

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


@dataclasses.dataclass(frozen=True)
class AttackReport:
    attack: str
    auc: float
    tpr_at: dict
    balanced_accuracy: float
    precision_at_recall: dict = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'attack': self.attack,
            'auc': self.auc,
            'tpr_at': {repr(float(k)): v for k, v in self.tpr_at.items()},
            'balanced_accuracy': self.balanced_accuracy,
            'precision_at_recall': {repr(float(k)): v
                                    for k, v in self.precision_at_recall.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> 'AttackReport':
        return cls(d['attack'], d['auc'],
                   {float(k): v for k, v in d['tpr_at'].items()},
                   d['balanced_accuracy'],
                   {float(k): v for k, v in d.get('precision_at_recall', {}).items()})


@dataclasses.dataclass(frozen=True)
class GapReport:
    train_acc: float
    test_acc: float
    train_loss: float
    test_loss: float
    gap_acc: float
    gap_loss: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _as_scores(name: str, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError(f'{name} must be nonempty')
    if not np.all(np.isfinite(s)):
        raise ValueError(f'{name} must be finite')
    return s


def roc_curve(member_scores, nonmember_scores) -> RocCurve:
    """Exact ROC curve with shared-threshold tie handling.

    For each distinct score value v (descending) the point counts members and
    non-members with score > v. A final point at threshold -inf reaches (1, 1).
    The first point (threshold = max score) is always (0, 0).
    """
    m = _as_scores('member_scores', member_scores)
    n = _as_scores('nonmember_scores', nonmember_scores)
    values = np.unique(np.concatenate([m, n]))[::-1]
    m_sorted = np.sort(m)
    n_sorted = np.sort(n)
    tp = m.size - np.searchsorted(m_sorted, values, side='right')
    fp = n.size - np.searchsorted(n_sorted, values, side='right')
    tp = np.append(tp, m.size)
    fp = np.append(fp, n.size)
    thresholds = np.append(values, -np.inf)
    return RocCurve(fp / n.size, tp / m.size, thresholds, tp, fp, m.size, n.size)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area, computed from integer counts.

    Equals the Mann-Whitney statistic P(member > non-member) + P(tie) / 2.
    """
    tp = curve.tp.astype(object)
    fp = curve.fp.astype(object)
    # Python ints keep the doubled area exact for any input size.
    twice_area = sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1]))
    return twice_area / (2 * curve.num_members * curve.num_nonmembers)


def mann_whitney_auc(member_scores, nonmember_scores) -> float:
    """Pairwise statistic by rank sums; independent of the ROC construction."""
    m = _as_scores('member_scores', member_scores)
    n = _as_scores('nonmember_scores', nonmember_scores)
    n_sorted = np.sort(n)
    below = np.searchsorted(n_sorted, m, side='left')
    ties = np.searchsorted(n_sorted, m, side='right') - below
    twice = 2 * int(below.sum()) + int(ties.sum())
    return twice / (2 * m.size * n.size)


def tpr_at_fpr(curve: RocCurve, alpha: float) -> float:
    """TPR at the largest achievable FPR not exceeding `alpha`."""
    budget = math.floor(Fraction(alpha) * curve.num_nonmembers)
    ok = curve.fp <= budget
    return float(curve.tpr[ok].max())


def balanced_accuracy(curve: RocCurve) -> float:
    return float(np.max((curve.tpr + 1.0 - curve.fpr) / 2.0))


def precision_at_recall(member_scores, nonmember_scores, recall: float) -> float:
    """Precision at the largest threshold whose recall reaches `recall`.

    Precision assumes equal member / non-member priors, i.e. it is computed
    as tpr / (tpr + fpr); on balanced sets this equals the raw count ratio.
    """
    if not 0.0 < recall <= 1.0:
        raise ValueError('recall must lie in (0, 1]')
    curve = roc_curve(member_scores, nonmember_scores)
    need = math.ceil(Fraction(recall) * curve.num_members)
    hit = np.flatnonzero(curve.tp >= need)
    if hit.size == 0:
        raise ValueError(f'recall {recall} is unreachable')
    i = hit[0]
    return float(curve.tpr[i] / (curve.tpr[i] + curve.fpr[i]))


def attack_report(attack: str, member_scores, nonmember_scores,
                  alphas: Sequence[float] = (0.001, 0.01, 0.1),
                  recalls: Sequence[float] = ()) -> AttackReport:
    curve = roc_curve(member_scores, nonmember_scores)
    return AttackReport(
        attack=attack,
        auc=float(auc(curve)),
        tpr_at={float(a): tpr_at_fpr(curve, a) for a in alphas},
        balanced_accuracy=balanced_accuracy(curve),
        precision_at_recall={float(r): precision_at_recall(member_scores, nonmember_scores, r)
                             for r in recalls},
    )


def gap_report(train_acc: float, test_acc: float,
               train_loss: float, test_loss: float) -> GapReport:
    """Accuracy gap (train - test) and loss gap (test - train).

    Both are oriented so that larger means worse generalization.
    """
    for name, v in (('train_acc', train_acc), ('test_acc', test_acc)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f'{name}={v} outside [0, 1]; pass fractions, not percent')
    for name, v in (('train_loss', train_loss), ('test_loss', test_loss)):
        if not (math.isfinite(v) and v >= 0):
            raise ValueError(f'{name}={v} must be finite and nonnegative')
    return GapReport(train_acc, test_acc, train_loss, test_loss,
                     train_acc - test_acc, test_loss - train_loss)


def rankdata(a) -> np.ndarray:
    """Average ranks (1-based), ties sharing the mean of their positions."""
    a = np.asarray(a, dtype=np.float64)
    order = np.argsort(a, kind='mergesort')
    sorted_a = a[order]
    starts = np.flatnonzero(np.r_[True, sorted_a[1:] != sorted_a[:-1]])
    ends = np.r_[starts[1:], a.size]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(a.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def spearman(x, y) -> Optional[float]:
    """Spearman rank correlation, or None when either side has no spread."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        return None
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        return None
    return float(rx @ ry) / denom


def as_percent(table: Mapping[str, float]) -> dict:
    return {k: 100.0 * v for k, v in table.items()}
