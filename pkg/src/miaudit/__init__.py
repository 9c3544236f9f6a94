"""Membership inference auditing: shadow-model attacks, low-FPR metrics and
the experiment templates that relate attack success to generalization."""

from miaudit.attacks import ScoreMatrix
from miaudit.core import Dataset, SeededRng
from miaudit.harness import ExperimentConfig, attack_target, build_ensemble
from miaudit.metrics import AttackReport, GapReport, RocCurve, attack_report, roc_curve

__version__ = '0.1.0'

__all__ = [
    'AttackReport', 'Dataset', 'ExperimentConfig', 'GapReport', 'RocCurve', 'ScoreMatrix',
    'SeededRng', 'attack_report', 'attack_target', 'build_ensemble', 'roc_curve',
]
