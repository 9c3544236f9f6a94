"""Shadow ensembles, attack execution and the experiment templates.

Random streams are derived from the master seed by role and index, so every
output is a pure function of the config: dataset (0,), shadow model i
(1, i, ...), separately trained target j (2, j, ...). Running the training
jobs in a process pool gives the same numbers as running them in order.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import math
import os
from typing import Mapping, Optional, Sequence

import numpy as np

from miaudit import attacks as atk
from miaudit.attacks import ScoreMatrix
from miaudit.core import Dataset, SeededRng, sample_half_split
from miaudit.datasets import DatasetSpec, build_dataset
from miaudit.metrics import (
    AttackReport, GapReport, RocCurve, attack_report, gap_report, roc_curve, spearman)
from miaudit.trainkit import (
    AugmentationPolicy, DegenerateSubsetError, ModelParams, TrainConfig, TrainingDivergence,
    cross_entropy, forward, preset_policy, train)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SEED_ENV = 'MIAUDIT_SEED'

THRESHOLD_ATTACKS = tuple(atk.CRITERIA)
ONLINE_ATTACKS = ('lira_online',)
OFFLINE_ATTACKS = ('lira_offline', 'calibrated', 'fixed_fpr', 'per_class')
ATTACKS = THRESHOLD_ATTACKS + ('threshold',) + ONLINE_ATTACKS + OFFLINE_ATTACKS + ('nn',)

_ROLE_DATA, _ROLE_SHADOW, _ROLE_TARGET = 0, 1, 2
_PURPOSE_SPLIT, _PURPOSE_TRAIN = 0, 1


class InsufficientShadowsError(ValueError):
    """Some sample lacks IN or OUT shadow models for the requested attack."""


class SchemaVersionError(ValueError):
    pass


class ModelTrainingError(RuntimeError):
    """Training of one ensemble member failed; names the model."""

    def __init__(self, model_id: str, reason: str):
        super().__init__(model_id, reason)
        self.model_id = model_id
        self.reason = reason

    def __str__(self) -> str:
        return f'model {self.model_id}: {self.reason}'


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce an ensemble, an attack and the sweeps.

    When `target_train` is None the targets are members of the shadow
    ensemble (rows `target_ids`) and are attacked leave-one-out. Otherwise
    `len(target_ids)` targets are trained separately with `target_train` and
    appended after the shadow rows.
    """
    dataset: DatasetSpec = DatasetSpec()
    num_shadow_models: int = 64
    target_ids: tuple = (0,)
    shadow_train: TrainConfig = TrainConfig()
    target_train: Optional[TrainConfig] = None
    attacks: tuple = ('lira_online',)
    criterion: str = 'logit_confidence'
    alphas: tuple = (0.001, 0.01, 0.1)
    variance_mode: str = 'per_sample'
    variance_floor: float = atk.DEFAULT_FLOOR
    record_checkpoints: bool = False
    seed: int = 0
    n_jobs: int = 1
    sweeps: dict = dataclasses.field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, 'target_ids', tuple(int(t) for t in self.target_ids))
        object.__setattr__(self, 'attacks', tuple(self.attacks))
        object.__setattr__(self, 'alphas', tuple(float(a) for a in self.alphas))
        if self.schema_version != SCHEMA_VERSION:
            raise SchemaVersionError(
                f'config schema {self.schema_version} != supported {SCHEMA_VERSION}')
        if not self.attacks:
            raise ValueError('attack list must be nonempty')
        unknown = set(self.attacks) - set(ATTACKS)
        if unknown:
            raise ValueError(f'unknown attacks: {sorted(unknown)}')
        if self.num_shadow_models < 1:
            raise ValueError('num_shadow_models must be >= 1')
        needs_two = set(self.attacks) - set(THRESHOLD_ATTACKS) - {'threshold'}
        if needs_two and self.num_shadow_models < 2:
            raise ValueError('shadow-based attacks need num_shadow_models >= 2')
        if not self.target_ids:
            raise ValueError('need at least one target id')
        if self.target_train is None and max(self.target_ids) >= self.num_shadow_models:
            raise ValueError('in-ensemble target ids must index shadow rows')
        if self.criterion not in atk.CRITERIA:
            raise ValueError(f'unknown criterion {self.criterion!r}')
        if any(not 0 < a < 1 for a in self.alphas):
            raise ValueError('alphas must lie in (0, 1)')

    def replace(self, **changes) -> 'ExperimentConfig':
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            'schema_version': self.schema_version,
            'dataset': self.dataset.to_dict(),
            'num_shadow_models': self.num_shadow_models,
            'target_ids': list(self.target_ids),
            'shadow_train': self.shadow_train.to_dict(),
            'target_train': self.target_train.to_dict() if self.target_train else None,
            'attacks': list(self.attacks),
            'criterion': self.criterion,
            'alphas': list(self.alphas),
            'variance_mode': self.variance_mode,
            'variance_floor': self.variance_floor,
            'record_checkpoints': self.record_checkpoints,
            'seed': self.seed,
            'n_jobs': self.n_jobs,
            'sweeps': self.sweeps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> 'ExperimentConfig':
        d = dict(d)
        version = d.get('schema_version', SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(
                f'config schema {version} != supported {SCHEMA_VERSION}')
        spec = DatasetSpec.from_dict(d.pop('dataset', {}))
        d['dataset'] = spec
        for key in ('shadow_train', 'target_train'):
            if d.get(key) is not None:
                d[key] = train_config_from_dict(d[key], spec)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f'unknown config keys: {sorted(unknown)}')
        return cls(**d)


def resolve_policy(value, spec: DatasetSpec) -> AugmentationPolicy:
    """A preset name ('shift+mirror') or an explicit transform list."""
    if isinstance(value, AugmentationPolicy):
        return value
    if isinstance(value, str):
        return preset_policy(value, spec.dim, spec.shape)
    return AugmentationPolicy.from_list(value)


def train_config_from_dict(d: dict, spec: DatasetSpec) -> TrainConfig:
    d = dict(d)
    policy = resolve_policy(d.pop('augmentation', None) or [], spec)
    return dataclasses.replace(TrainConfig.from_dict(d), augmentation=policy)


def apply_seed_override(config: ExperimentConfig) -> ExperimentConfig:
    value = os.environ.get(SEED_ENV)
    if value is None or value == '':
        return config
    return config.replace(seed=int(value))


# -- ensembles ---------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class Ensemble:
    dataset: Dataset
    matrix: ScoreMatrix
    shadow_rows: np.ndarray
    target_rows: np.ndarray
    models: tuple
    checkpoints: tuple
    checkpoint_matrices: dict

    def common_steps(self) -> list[int]:
        steps = None
        for cks in self.checkpoints:
            s = {c.step for c in cks}
            steps = s if steps is None else steps & s
        return sorted(steps or ())


def _train_job(args):
    name, dataset, mask, config, rng = args
    try:
        return train(dataset, mask, config, rng)
    except (TrainingDivergence, DegenerateSubsetError) as e:
        raise ModelTrainingError(name, str(e)) from None


def _run_jobs(jobs: list, n_jobs: int) -> list:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_train_job(j) for j in jobs]
    with concurrent.futures.ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_train_job, jobs))


def model_rng(seed: int, role: int, index: int, purpose: int) -> SeededRng:
    return SeededRng(seed).child(role, index, purpose)


def model_outputs(model: ModelParams, dataset: Dataset, criterion: str):
    probs = forward(model, dataset.features)
    return probs, atk.criterion_scores(criterion, probs, dataset.labels)


def _matrix_from(models, masks, dataset, criterion) -> ScoreMatrix:
    outs = [model_outputs(m, dataset, criterion) for m in models]
    return ScoreMatrix(np.stack([s for _, s in outs]), np.stack(masks), criterion,
                       dataset.labels, np.stack([p for p, _ in outs]))


def build_ensemble(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> Ensemble:
    """Trains the shadow models (and separate targets, if configured).

    Each model gets its own uniformly random half split of the canonical
    dataset. The returned matrix holds the criterion score and the full
    probability vector of every model on every sample.
    """
    if dataset is None:
        dataset = build_dataset(config.dataset, model_rng(config.seed, _ROLE_DATA, 0, 0))
    n = len(dataset)
    jobs, masks = [], []
    roles = [(_ROLE_SHADOW, i, config.shadow_train) for i in range(config.num_shadow_models)]
    if config.target_train is not None:
        roles += [(_ROLE_TARGET, j, config.target_train) for j in range(len(config.target_ids))]
    for role, i, tc in roles:
        mask = sample_half_split(n, model_rng(config.seed, role, i, _PURPOSE_SPLIT))
        masks.append(mask)
        name = f'{"shadow" if role == _ROLE_SHADOW else "target"}-{i}'
        jobs.append((name, dataset, mask, tc, model_rng(config.seed, role, i, _PURPOSE_TRAIN)))
    results = _run_jobs(jobs, config.n_jobs)
    models = tuple(m for m, _ in results)
    checkpoints = tuple(tuple(c) for _, c in results)
    matrix = _matrix_from(models, masks, dataset, config.criterion)
    s = config.num_shadow_models
    shadow_rows = np.arange(s)
    if config.target_train is None:
        target_rows = np.array(config.target_ids)
    else:
        target_rows = np.arange(s, s + len(config.target_ids))
    ckm = {}
    if config.record_checkpoints:
        steps = None
        for cks in checkpoints:
            st = {c.step for c in cks}
            steps = st if steps is None else steps & st
        for step in sorted(steps):
            snap = [next(c.params for c in cks if c.step == step) for cks in checkpoints]
            ckm[step] = _matrix_from(snap, masks, dataset, config.criterion)
    _check_coverage(matrix, shadow_rows)
    return Ensemble(dataset, matrix, shadow_rows, target_rows, models, checkpoints, ckm)


def _check_coverage(matrix: ScoreMatrix, shadow_rows) -> None:
    m = matrix.masks[shadow_rows]
    no_in = int(np.sum(~m.any(axis=0)))
    no_out = int(np.sum(m.all(axis=0)))
    if no_in or no_out:
        logger.warning('%d samples have no IN shadow and %d no OUT shadow', no_in, no_out)


def null_control(matrix: ScoreMatrix, seed: int) -> ScoreMatrix:
    """Same scores, with every row's membership mask redrawn at random.

    The new masks are independent of how the models were trained, so no
    attack can beat chance on the result. Attacking it measures the false
    signal an attack produces by construction (its false-positive floor).
    """
    root = SeededRng(seed).child(4)
    masks = np.stack([sample_half_split(matrix.num_samples, root.child(r))
                      for r in range(matrix.num_models)])
    return ScoreMatrix(matrix.scores, masks, matrix.criterion, matrix.labels, matrix.probs)


# -- attacks -----------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class TargetAttack:
    """Per-sample scores and reports of every attack on one target."""
    target: int
    members: np.ndarray
    scores: dict
    reports: dict
    gap: Optional[GapReport]

    def curve(self, attack: str) -> RocCurve:
        s = self.scores[attack]
        return roc_curve(s[self.members], s[~self.members])


def target_gap(matrix: ScoreMatrix, target: int) -> Optional[GapReport]:
    if matrix.probs is None or matrix.labels is None:
        return None
    members = matrix.masks[target]
    if members.all() or not members.any():
        return None
    p, y = matrix.probs[target], matrix.labels
    correct = (np.argmax(p, axis=1) == y)
    loss = cross_entropy(p, y)
    return gap_report(float(correct[members].mean()), float(correct[~members].mean()),
                      float(loss[members].mean()), float(loss[~members].mean()))


def attack_scores(matrix: ScoreMatrix, target: int, attack: str, shadow_rows,
                  variance_mode: str = 'per_sample', floor: float = atk.DEFAULT_FLOOR,
                  nn_config: atk.NNAttackConfig = atk.NNAttackConfig(),
                  seed: int = 0) -> np.ndarray:
    """Membership scores of `attack` for every sample of one target row.

    Only `shadow_rows` feed shadow statistics; the target row is never read
    for them.
    """
    shadow_rows = np.asarray([r for r in shadow_rows if r != target], dtype=np.int64)
    if attack in THRESHOLD_ATTACKS:
        if matrix.probs is not None and matrix.labels is not None:
            return atk.criterion_scores(attack, matrix.probs[target], matrix.labels)
        if attack == matrix.criterion:
            return np.array(matrix.scores[target])
        raise ValueError(f'attack {attack!r} needs probability vectors in the score matrix')
    if attack == 'threshold':
        return np.array(matrix.scores[target])
    if shadow_rows.size == 0:
        raise InsufficientShadowsError(f'attack {attack!r} needs shadow models')
    target_scores = matrix.scores[target]
    shadow = matrix.scores[shadow_rows]
    in_mask = matrix.masks[shadow_rows]
    if attack == 'nn':
        if matrix.probs is None or matrix.labels is None:
            raise ValueError("attack 'nn' needs probability vectors and labels")
        c = matrix.probs.shape[2]
        feats = atk.attack_features(matrix.probs[shadow_rows].reshape(-1, c),
                                    np.tile(matrix.labels, shadow_rows.size))
        model = atk.nn_attack_train(feats, in_mask.ravel(), nn_config,
                                    SeededRng(seed).child(3, target))
        return atk.nn_attack_score(model, atk.attack_features(matrix.probs[target],
                                                              matrix.labels))
    n_in = in_mask.sum(axis=0)
    n_out = in_mask.shape[0] - n_in
    if np.any(n_out == 0):
        raise InsufficientShadowsError(
            f'{int(np.sum(n_out == 0))} samples have no OUT shadow model')
    if attack in ONLINE_ATTACKS:
        if np.any(n_in == 0):
            raise InsufficientShadowsError(
                f'{int(np.sum(n_in == 0))} samples have no IN shadow model')
        return atk.lira_online_matrix(target_scores, shadow, in_mask, variance_mode, floor)
    if attack == 'lira_offline':
        return atk.lira_offline_matrix(target_scores, shadow, in_mask, variance_mode, floor)
    if attack == 'calibrated':
        return atk.calibrated_matrix(target_scores, shadow, in_mask)
    if attack == 'fixed_fpr':
        return atk.reference_fpr_matrix(target_scores, shadow, in_mask)
    if attack == 'per_class':
        if matrix.labels is None:
            raise ValueError("attack 'per_class' needs class labels")
        return atk.per_class_matrix(target_scores, shadow, in_mask, matrix.labels,
                                    int(matrix.labels.max()) + 1)
    raise ValueError(f'unknown attack {attack!r}')


def attack_target(matrix: ScoreMatrix, target: int, attacks: Sequence[str],
                  alphas: Sequence[float] = (0.001, 0.01, 0.1),
                  shadow_rows=None, variance_mode: str = 'per_sample',
                  floor: float = atk.DEFAULT_FLOOR, recalls: Sequence[float] = (),
                  seed: int = 0) -> TargetAttack:
    """Runs each attack against row `target`; its mask is the ground truth."""
    if not 0 <= target < matrix.num_models:
        raise ValueError(f'target {target} outside 0..{matrix.num_models - 1}')
    if shadow_rows is None:
        shadow_rows = np.arange(matrix.num_models)
    shadow_rows = np.array([r for r in shadow_rows if r != target], dtype=np.int64)
    members = np.array(matrix.masks[target])
    if members.all() or not members.any():
        raise ValueError('target mask must contain members and non-members')
    scores, reports = {}, {}
    for name in attacks:
        s = attack_scores(matrix, target, name, shadow_rows, variance_mode, floor, seed=seed)
        scores[name] = s
        reports[name] = attack_report(name, s[members], s[~members], alphas, recalls)
    return TargetAttack(target, members, scores, reports, target_gap(matrix, target))


def _attack_ensemble(ens: Ensemble, config: ExperimentConfig, matrix=None):
    matrix = ens.matrix if matrix is None else matrix
    return [attack_target(matrix, int(t), config.attacks, config.alphas, ens.shadow_rows,
                          config.variance_mode, config.variance_floor, seed=config.seed)
            for t in ens.target_rows]


def _summary_row(results: list[TargetAttack], attack: str) -> dict:
    gaps = [r.gap for r in results if r.gap is not None]
    reps = [r.reports[attack] for r in results]
    row = {
        'train_acc': float(np.mean([g.train_acc for g in gaps])) if gaps else None,
        'test_acc': float(np.mean([g.test_acc for g in gaps])) if gaps else None,
        'gap_acc': float(np.mean([g.gap_acc for g in gaps])) if gaps else None,
        'gap_loss': float(np.mean([g.gap_loss for g in gaps])) if gaps else None,
        'auc': float(np.mean([r.auc for r in reps])),
    }
    row['tpr_at'] = {a: float(np.mean([r.tpr_at[a] for r in reps])) for a in reps[0].tpr_at}
    return row


def run_experiment(config: ExperimentConfig):
    ens = build_ensemble(config)
    return ens, _attack_ensemble(ens, config)


# -- experiment templates -------------------------------------------------------

def default_policies(spec: DatasetSpec) -> dict:
    names = ['none', 'shift', 'mirror', 'policy', 'cutout', 'shift+cutout', 'shift+mirror',
             'cutout+mirror', 'shift+cutout+mirror', 'all']
    return {n: preset_policy(n, spec.dim, spec.shape) for n in names}


def sweep_augmentation(config: ExperimentConfig,
                       policies: Optional[Mapping[str, AugmentationPolicy]] = None
                       ) -> list[dict]:
    """One ensemble plus attack per augmentation policy.

    Targets and shadows share the policy. Rows carry the first configured
    attack's TPRs, averaged over the target ids.
    """
    policies = default_policies(config.dataset) if policies is None else policies
    rows = []
    dataset = build_dataset(config.dataset, model_rng(config.seed, _ROLE_DATA, 0, 0))
    for name, policy in policies.items():
        policy = resolve_policy(policy, config.dataset)
        cfg = config.replace(
            shadow_train=dataclasses.replace(config.shadow_train, augmentation=policy),
            target_train=(None if config.target_train is None else
                          dataclasses.replace(config.target_train, augmentation=policy)))
        ens = build_ensemble(cfg, dataset)
        results = _attack_ensemble(ens, cfg)
        rows.append({'policy': name, **_summary_row(results, config.attacks[0])})
        logger.info('augmentation %s: %s', name, rows[-1])
    return rows


def sweep_early_stopping(config: ExperimentConfig, ensemble: Optional[Ensemble] = None
                         ) -> list[dict]:
    """One row per checkpoint step.

    Shadows are checkpoint-matched: the target at step k is attacked with the
    shadow models' step-k snapshots.
    """
    if ensemble is None:
        ensemble = build_ensemble(config.replace(record_checkpoints=True))
    if not ensemble.checkpoint_matrices:
        raise ValueError('ensemble was built without checkpoint matrices')
    rows = []
    for step, matrix in sorted(ensemble.checkpoint_matrices.items()):
        results = _attack_ensemble(ensemble, config, matrix)
        rows.append({'step': step, **_summary_row(results, config.attacks[0])})
    return rows


@dataclasses.dataclass(frozen=True, eq=False)
class KnowledgeResult:
    matched: TargetAttack
    mismatched: TargetAttack
    attack: str

    @property
    def curves(self) -> tuple[RocCurve, RocCurve]:
        return self.matched.curve(self.attack), self.mismatched.curve(self.attack)


def attacker_knowledge_experiment(config: ExperimentConfig, target_policy,
                                  shadow_policy_a=None, shadow_policy_b='none'
                                  ) -> KnowledgeResult:
    """Attacks one separately trained target with two shadow ensembles.

    Ensemble A uses `shadow_policy_a` (default: the target's policy), B uses
    `shadow_policy_b` (default: no augmentation). Both ensembles draw the same
    splits and training streams, so A == B gives identical curves.
    """
    spec = config.dataset
    target_policy = resolve_policy(target_policy, spec)
    pol_a = target_policy if shadow_policy_a is None else resolve_policy(shadow_policy_a, spec)
    pol_b = resolve_policy(shadow_policy_b, spec)
    target_train = dataclasses.replace(config.target_train or config.shadow_train,
                                       augmentation=target_policy)
    dataset = build_dataset(spec, model_rng(config.seed, _ROLE_DATA, 0, 0))
    attack = config.attacks[0]
    out = []
    for pol in (pol_a, pol_b):
        cfg = config.replace(
            target_ids=config.target_ids[:1], target_train=target_train,
            shadow_train=dataclasses.replace(config.shadow_train, augmentation=pol))
        ens = build_ensemble(cfg, dataset)
        out.append(attack_target(ens.matrix, int(ens.target_rows[0]), [attack],
                                 cfg.alphas, ens.shadow_rows, cfg.variance_mode,
                                 cfg.variance_floor, seed=cfg.seed))
    return KnowledgeResult(out[0], out[1], attack)


@dataclasses.dataclass(frozen=True)
class ScatterSpec:
    epochs: tuple = (5, 10, 20, 40, 60)
    weight_decays: tuple = (0.0, 1e-3)
    augmentations: tuple = ('none', 'noise')
    replication: int = 2

    @classmethod
    def from_dict(cls, d: dict) -> 'ScatterSpec':
        return cls(tuple(d.get('epochs', cls.epochs)),
                   tuple(d.get('weight_decays', cls.weight_decays)),
                   tuple(d.get('augmentations', cls.augmentations)),
                   int(d.get('replication', cls.replication)))

    @property
    def size(self) -> int:
        return len(self.epochs) * len(self.weight_decays) * len(self.augmentations)


@dataclasses.dataclass(frozen=True)
class ScatterRecord:
    model_id: int
    epochs: int
    weight_decay: float
    augmentation: str
    replicate: int
    train_acc: float
    test_acc: float
    gap_acc: float
    gap_loss: float
    tpr_at: dict

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d['tpr_at'] = {repr(float(k)): v for k, v in self.tpr_at.items()}
        return d


def generalization_scatter(config: ExperimentConfig, grid: ScatterSpec
                           ) -> list[ScatterRecord]:
    """One record per (grid cell, replicate) target model.

    All cells share the dataset and architecture. Cells that differ only in
    epoch count come from checkpoints of a single longer run, which is
    bit-identical to training for fewer epochs because checkpointing draws no
    randomness.
    """
    if grid.replication < 1 or grid.replication >= config.num_shadow_models:
        raise ValueError('replication must be in [1, num_shadow_models)')
    if not (grid.epochs and grid.weight_decays and grid.augmentations):
        raise ValueError('scatter grid axes must be nonempty')
    dataset = build_dataset(config.dataset, model_rng(config.seed, _ROLE_DATA, 0, 0))
    cadence = math.gcd(*[int(e) for e in grid.epochs])
    records = []
    model_id = 0
    for wd in grid.weight_decays:
        for aug in grid.augmentations:
            tc = dataclasses.replace(
                config.shadow_train, epochs=int(max(grid.epochs)), checkpoint_every=cadence,
                weight_decay=float(wd), early_stop=None,
                augmentation=resolve_policy(aug, config.dataset))
            cfg = config.replace(shadow_train=tc, target_train=None,
                                 target_ids=tuple(range(grid.replication)),
                                 record_checkpoints=True)
            ens = build_ensemble(cfg, dataset)
            for e in grid.epochs:
                results = _attack_ensemble(ens, cfg, ens.checkpoint_matrices[int(e)])
                for rep, res in enumerate(results):
                    g = res.gap
                    records.append(ScatterRecord(
                        model_id, int(e), float(wd), str(aug), rep, g.train_acc, g.test_acc,
                        g.gap_acc, g.gap_loss, dict(res.reports[config.attacks[0]].tpr_at)))
                    model_id += 1
            logger.info('scatter wd=%g aug=%s done (%d records)', wd, aug, len(records))
    return records


def scatter_correlations(records: Sequence[ScatterRecord], alpha: float) -> dict:
    """Spearman correlations of TPR@alpha with gap_acc, gap_loss and test_acc.

    A None entry means the correlation is undefined (a constant column).
    """
    tpr = [r.tpr_at[alpha] for r in records]
    return {
        'gap_acc': spearman([r.gap_acc for r in records], tpr),
        'gap_loss': spearman([r.gap_loss for r in records], tpr),
        'test_acc': spearman([r.test_acc for r in records], tpr),
    }
