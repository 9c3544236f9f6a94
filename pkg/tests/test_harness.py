import dataclasses

import numpy as np
import pytest

from miaudit import harness
from miaudit.attacks import ScoreMatrix
from miaudit.core import SeededRng, sample_half_split
from miaudit.datasets import DatasetSpec, build_dataset
from miaudit.harness import (
    ATTACKS, ExperimentConfig, InsufficientShadowsError, ModelTrainingError, ScatterRecord,
    ScatterSpec, SchemaVersionError, attack_target, build_ensemble)
from miaudit.metrics import attack_report
from miaudit.trainkit import TrainConfig

TINY_DATA = DatasetSpec(num_samples=64, dim=6, num_classes=3, frequencies=3)
TINY_TRAIN = TrainConfig(hidden_width=8, epochs=4, checkpoint_every=2)


def tiny(**kw):
    base = dict(dataset=TINY_DATA, num_shadow_models=16, target_ids=(0, 1),
                shadow_train=TINY_TRAIN, attacks=('lira_online',), seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_round_trip(self):
        cfg = tiny(attacks=('lira_online', 'nn'), sweeps={'scatter': {'epochs': [1, 2]}},
                   target_train=dataclasses.replace(TINY_TRAIN, weight_decay=0.01))
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_invariants(self):
        with pytest.raises(ValueError):
            tiny(attacks=())
        with pytest.raises(ValueError):
            tiny(attacks=('lira_online',), num_shadow_models=1, target_ids=(0,))
        with pytest.raises(ValueError):
            tiny(attacks=('bogus',))
        with pytest.raises(ValueError):
            tiny(target_ids=(99,))
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({'unknown_key': 1})

    def test_schema_version(self):
        with pytest.raises(SchemaVersionError):
            ExperimentConfig.from_dict({'schema_version': 99})

    def test_seed_override(self, monkeypatch):
        monkeypatch.setenv(harness.SEED_ENV, '42')
        assert harness.apply_seed_override(tiny()).seed == 42
        monkeypatch.delenv(harness.SEED_ENV)
        assert harness.apply_seed_override(tiny()).seed == 3

    def test_policy_strings(self):
        d = tiny().to_dict()
        d['shadow_train']['augmentation'] = 'shift+mirror'
        cfg = ExperimentConfig.from_dict(d)
        assert len(cfg.shadow_train.augmentation.transforms) == 2


class TestEnsemble:
    def test_shape_contract(self):
        spec = DatasetSpec(num_samples=4, dim=2, num_classes=2, frequencies=2, label_noise=0.0)
        cfg = ExperimentConfig(dataset=spec, num_shadow_models=2, target_ids=(0,),
                               shadow_train=TrainConfig(hidden_width=2, epochs=1),
                               attacks=('confidence',), seed=3)
        ens = build_ensemble(cfg)
        assert ens.matrix.scores.shape == (2, 4)
        assert ens.matrix.masks.sum(axis=1).tolist() == [2, 2]

    def test_deterministic(self):
        a = build_ensemble(tiny())
        b = build_ensemble(tiny())
        assert a.matrix.equals(b.matrix)
        c = build_ensemble(tiny(seed=4))
        assert not a.matrix.equals(c.matrix)

    def test_parallel_equals_sequential(self):
        a = build_ensemble(tiny(num_shadow_models=4))
        b = build_ensemble(tiny(num_shadow_models=4, n_jobs=2))
        assert a.matrix.equals(b.matrix)

    def test_in_out_coverage_at_64_models(self):
        # P(a sample has < 1 IN model out of 64) is 2^-64 per sample; a
        # simulation over 1000 fresh mask sets never sees fewer than 10.
        cfg = ExperimentConfig(
            dataset=DatasetSpec(num_samples=512, dim=4, num_classes=2, frequencies=2),
            num_shadow_models=64, shadow_train=TrainConfig(model='linear', epochs=1,
                                                           batch_size=256))
        ens = build_ensemble(cfg)
        n_in = ens.matrix.masks.sum(axis=0)
        assert n_in.min() >= 1 and (64 - n_in).min() >= 1
        assert n_in.min() >= 10 and (64 - n_in).max() <= 54

    def test_separate_targets_appended(self):
        cfg = tiny(target_train=TINY_TRAIN, target_ids=(0, 1, 2))
        ens = build_ensemble(cfg)
        assert ens.matrix.num_models == 19
        assert ens.target_rows.tolist() == [16, 17, 18]

    def test_checkpoint_matrices(self):
        ens = build_ensemble(tiny(record_checkpoints=True))
        assert sorted(ens.checkpoint_matrices) == ens.common_steps() == [2, 4]
        assert ens.checkpoint_matrices[4].equals(ens.matrix)

    def test_divergence_names_model(self):
        bad = TrainConfig(model='linear', epochs=400, learning_rate=1e3, weight_decay=1.0)
        with np.errstate(all='ignore'), pytest.raises(ModelTrainingError) as info:
            build_ensemble(tiny(shadow_train=bad))
        assert info.value.model_id == 'shadow-0'
        assert 'shadow-0' in str(info.value) and 'step' in str(info.value)

    def test_single_class_subset_names_model(self):
        spec = DatasetSpec(num_samples=4, dim=2, num_classes=2, frequencies=2, label_noise=0.0)
        cfg = ExperimentConfig(dataset=spec, num_shadow_models=2,
                               shadow_train=TrainConfig(hidden_width=2, epochs=1), seed=0)
        with pytest.raises(ModelTrainingError, match='single class') as info:
            build_ensemble(cfg)
        assert info.value.model_id.startswith('shadow-')

    def test_missing_out_model_reported(self, caplog):
        spec = DatasetSpec(num_samples=8, dim=2, num_classes=2, frequencies=2)
        cfg = ExperimentConfig(dataset=spec, num_shadow_models=2,
                               shadow_train=TrainConfig(hidden_width=2, epochs=1))
        with caplog.at_level('WARNING'):
            ens = build_ensemble(cfg)
        # two complementary-or-not halves of 8 leave some sample without IN or OUT
        masks = ens.matrix.masks
        if (~masks.any(axis=0)).any() or masks.all(axis=0).any():
            assert 'no IN shadow' in caplog.text


def planted_matrix(m=64, n=400, shift=2.0, seed=0):
    # sample difficulty dominates the spread; members move by `shift` score
    # standard deviations, which is shift * sqrt(10) per-sample noise units
    gen = np.random.default_rng(seed)
    masks = np.stack([sample_half_split(n, SeededRng(seed, i)) for i in range(m)])
    scores = gen.standard_normal(n) * 3 + gen.standard_normal((m, n))
    scores = scores + shift * scores.std() * masks
    return ScoreMatrix(scores, masks, 'logit_confidence')


class TestAttackTarget:
    def test_no_signal_auc_half(self):
        n, c = 40, 3
        masks = np.stack([sample_half_split(n, SeededRng(1, i)) for i in range(8)])
        probs = np.full((8, n, c), 1.0 / c)
        labels = np.zeros(n, int)
        mat = ScoreMatrix(np.zeros((8, n)), masks, 'logit_confidence', labels, probs)
        res = attack_target(mat, 0, [a for a in ATTACKS if a != 'nn'])
        for name, rep in res.reports.items():
            assert rep.auc == 0.5, name

    def test_planted_signal(self):
        # analytic tpr at 1% for unit noise and separation 2*sqrt(10) is Phi(6.32 - 2.33) > 0.99
        res = attack_target(planted_matrix(), 0, ['lira_online', 'lira_offline', 'calibrated'],
                            alphas=(0.01,))
        assert res.reports['lira_online'].tpr_at[0.01] >= 0.5
        assert res.reports['lira_online'].auc > 0.9

    def test_ground_truth_partition(self):
        mat = planted_matrix(m=16, n=100)
        res = attack_target(mat, 3, ['lira_online', 'threshold'])
        np.testing.assert_array_equal(res.members, mat.masks[3])
        for name in res.reports:
            s = res.scores[name]
            assert res.reports[name] == attack_report(name, s[mat.masks[3]], s[~mat.masks[3]])

    def test_target_row_never_used_for_statistics(self):
        mat = planted_matrix(m=16, n=100)
        attacks = ['lira_online', 'lira_offline', 'calibrated', 'fixed_fpr', 'per_class']
        labels = np.arange(100) % 4
        mat = ScoreMatrix(mat.scores, mat.masks, mat.criterion, labels)
        with_row = attack_target(mat, 5, attacks, shadow_rows=range(16))
        without = attack_target(mat, 5, attacks, shadow_rows=[r for r in range(16) if r != 5])
        for a in attacks:
            np.testing.assert_array_equal(with_row.scores[a], without.scores[a])
        # flipping the target's own mask changes ground truth only, not scores
        flipped = mat.masks.copy()
        flipped[5] = ~flipped[5]
        alt = ScoreMatrix(mat.scores, flipped, mat.criterion, labels)
        other = attack_target(alt, 5, attacks)
        for a in attacks:
            np.testing.assert_array_equal(other.scores[a], with_row.scores[a])

    def test_insufficient_shadows(self):
        mat = planted_matrix(m=3, n=50)
        with pytest.raises(InsufficientShadowsError):
            attack_target(mat, 0, ['lira_online'])

    def test_bad_target(self):
        with pytest.raises(ValueError):
            attack_target(planted_matrix(m=4, n=10), 9, ['threshold'])

    def test_all_attacks_run_on_real_ensemble(self):
        ens = build_ensemble(tiny(num_shadow_models=20))
        res = attack_target(ens.matrix, 0, ATTACKS, shadow_rows=ens.shadow_rows)
        assert set(res.reports) == set(ATTACKS)
        g = res.gap
        assert g.gap_acc == g.train_acc - g.test_acc

    def test_null_control(self):
        mat = planted_matrix(m=32, n=400)
        null = harness.null_control(mat, 0)
        np.testing.assert_array_equal(null.scores, mat.scores)
        assert (null.masks.sum(axis=1) == 200).all()
        res = attack_target(null, 0, ['lira_online'], alphas=(0.01,))
        assert res.reports['lira_online'].tpr_at[0.01] < 0.1


class TestTemplates:
    def test_augmentation_sweep_repeatable(self):
        cfg = tiny()
        rows_a = harness.sweep_augmentation(cfg, {'none': 'none', 'noise': 'noise'})
        rows_b = harness.sweep_augmentation(cfg, {'none': 'none', 'noise': 'noise'})
        assert rows_a == rows_b
        assert [r['policy'] for r in rows_a] == ['none', 'noise']
        for r in rows_a:
            assert r['gap_acc'] == pytest.approx(r['train_acc'] - r['test_acc'])

    def test_early_stopping_rows(self):
        cfg = tiny(record_checkpoints=True)
        ens = build_ensemble(cfg)
        rows = harness.sweep_early_stopping(cfg, ens)
        assert [r['step'] for r in rows] == [2, 4]
        last = [attack_target(ens.matrix, t, cfg.attacks, cfg.alphas, ens.shadow_rows,
                              seed=cfg.seed).reports['lira_online'] for t in (0, 1)]
        assert rows[-1]['auc'] == np.mean([r.auc for r in last])

    def test_single_checkpoint(self):
        cfg = tiny(target_ids=(0,), shadow_train=dataclasses.replace(TINY_TRAIN,
                                                                      checkpoint_every=4))
        rows = harness.sweep_early_stopping(cfg)
        assert len(rows) == 1 and rows[0]['step'] == 4
        ens = build_ensemble(cfg)
        res = attack_target(ens.matrix, 0, cfg.attacks, cfg.alphas, ens.shadow_rows,
                            seed=cfg.seed)
        assert rows[0]['tpr_at'] == res.reports['lira_online'].tpr_at
        assert rows[0]['auc'] == res.reports['lira_online'].auc

    def test_knowledge_identical_policies(self):
        kr = harness.attacker_knowledge_experiment(tiny(), 'mirror', 'none', 'none')
        a, b = kr.curves
        np.testing.assert_array_equal(a.fpr, b.fpr)
        np.testing.assert_array_equal(a.tpr, b.tpr)

    def test_scatter_row_count(self):
        grid = ScatterSpec(epochs=(2, 4), weight_decays=(0.0, 0.01), augmentations=('none',),
                           replication=3)
        recs = harness.generalization_scatter(tiny(), grid)
        assert len(recs) == grid.size * grid.replication == 12
        assert len({r.model_id for r in recs}) == 12
        for r in recs:
            assert r.gap_acc == pytest.approx(r.train_acc - r.test_acc)
        corr = harness.scatter_correlations(recs, 0.01)
        assert set(corr) == {'gap_acc', 'gap_loss', 'test_acc'}

    def test_scatter_degenerate_correlation(self):
        rec = ScatterRecord(0, 1, 0.0, 'none', 0, 0.9, 0.8, 0.1, 0.2, {0.01: 0.05})
        corr = harness.scatter_correlations([rec, dataclasses.replace(rec, model_id=1)], 0.01)
        assert corr == {'gap_acc': None, 'gap_loss': None, 'test_acc': None}

    def test_scatter_grid_validation(self):
        with pytest.raises(ValueError):
            harness.generalization_scatter(tiny(), ScatterSpec(replication=16))
        with pytest.raises(ValueError):
            harness.generalization_scatter(tiny(), ScatterSpec(epochs=()))


class TestDatasets:
    def test_blobs_deterministic_and_balanced(self):
        spec = DatasetSpec(num_samples=100, label_noise=0.0)
        a = build_dataset(spec, SeededRng(0))
        b = build_dataset(spec, SeededRng(0))
        np.testing.assert_array_equal(a.features, b.features)
        assert np.bincount(a.labels).tolist() == [10] * 10

    def test_label_noise_rate(self):
        clean = build_dataset(DatasetSpec(num_samples=4000, label_noise=0.0), SeededRng(1))
        noisy = build_dataset(DatasetSpec(num_samples=4000, label_noise=0.1), SeededRng(1))
        # same templates and draws, so the flip fraction is observable
        assert abs(np.mean(clean.labels != noisy.labels) - 0.1) < 0.02

    def test_templates_mirror_symmetric(self):
        from miaudit.datasets import class_templates
        tm = class_templates(4, 9, 3, np.random.default_rng(0))
        np.testing.assert_allclose(tm, tm[:, ::-1], atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(tm, axis=1), 1.0)

    def test_csv_loader(self, tmp_path):
        p = tmp_path / 'd.csv'
        p.write_text('a,b,label\n0.5,1.0,0\n-1,2,1\n3,4,2\n')
        ds = build_dataset(DatasetSpec(kind='file', path=str(p), num_classes=3), SeededRng(0))
        assert len(ds) == 3 and ds.dim == 2 and ds.labels.tolist() == [0, 1, 2]
        with pytest.raises(ValueError):
            build_dataset(DatasetSpec(kind='file'), SeededRng(0))
        with pytest.raises(ValueError):
            DatasetSpec.from_dict({'bogus': 1})
