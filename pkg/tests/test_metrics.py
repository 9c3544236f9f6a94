from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from miaudit.metrics import (
    AttackReport, attack_report, auc, balanced_accuracy, gap_report, mann_whitney_auc,
    precision_at_recall, rankdata, roc_curve, spearman, tpr_at_fpr)
from oracles import brute_roc_points, brute_tpr_at_fpr, pairwise_auc

tied_scores = st.lists(st.integers(0, 8).map(lambda v: v / 4), min_size=1, max_size=40)


class TestRoc:
    def test_perfect_separation(self):
        c = roc_curve([0.9, 0.8], [0.1, 0.2])
        assert (0.0, 1.0) in [(f, t) for f, t, _ in c.points()]
        assert auc(c) == 1.0 and balanced_accuracy(c) == 1.0
        for a in (0.001, 0.01, 0.5):
            assert tpr_at_fpr(c, a) == 1.0

    def test_identical_distributions(self):
        s = [0.1, 0.4, 0.4, 0.7]
        c = roc_curve(s, s)
        assert auc(c) == 0.5
        np.testing.assert_array_equal(c.fpr, c.tpr)
        assert balanced_accuracy(c) == 0.5

    def test_four_point_case(self):
        m, n = [0.9, 0.4], [0.6, 0.1]
        c = roc_curve(m, n)
        assert auc(c) == 0.75 == float(pairwise_auc(m, n))
        assert balanced_accuracy(c) == 0.75
        assert precision_at_recall(m, n, 0.5) == 1.0

    def test_tie_moves_both_rates(self):
        c = roc_curve([0.5, 0.9], [0.5, 0.1])
        pts = [(f, t) for f, t, _ in c.points()]
        assert pts == [(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]

    def test_empty_or_nonfinite(self):
        with pytest.raises(ValueError):
            roc_curve([], [0.1])
        with pytest.raises(ValueError):
            roc_curve([np.nan], [0.1])

    @given(tied_scores, tied_scores)
    def test_matches_brute_force(self, m, n):
        c = roc_curve(m, n)
        expected = brute_roc_points(m, n)
        got = list(zip(c.fp, c.tp))
        assert [(Fraction(int(fp), len(n)), Fraction(int(tp), len(m))) for fp, tp in got] \
            == expected
        assert c.fpr[0] == 0 and c.tpr[0] == 0 and c.fpr[-1] == 1 and c.tpr[-1] == 1
        assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
        assert auc(c) == pytest.approx(float(pairwise_auc(m, n)), abs=1e-12)
        assert mann_whitney_auc(m, n) == auc(c)

    @given(tied_scores, tied_scores, st.floats(0.0001, 0.9999), st.floats(0.0001, 0.9999))
    def test_tpr_at_fpr(self, m, n, a1, a2):
        c = roc_curve(m, n)
        lo, hi = sorted((a1, a2))
        assert tpr_at_fpr(c, lo) <= tpr_at_fpr(c, hi)
        assert tpr_at_fpr(c, lo) == float(brute_tpr_at_fpr(m, n, lo))

    @given(tied_scores, tied_scores)
    def test_strictly_increasing_relabel(self, m, n):
        a = roc_curve(m, n)
        b = roc_curve(np.exp(m) * 3 - 2, np.exp(n) * 3 - 2)
        np.testing.assert_array_equal(a.fpr, b.fpr)
        np.testing.assert_array_equal(a.tpr, b.tpr)

    def test_null_tpr_at_low_fpr(self):
        gen = np.random.default_rng(0)
        vals = [tpr_at_fpr(roc_curve(gen.random(1000), gen.random(1000)), 0.001)
                for _ in range(100)]
        assert np.mean(vals) < 0.01

    def test_exact_budget_for_decimal_alpha(self):
        # 0.07 * 100 is 7.000000000000001 in floating point; the budget is still 7
        m = np.arange(100) + 1000.0
        n = np.arange(100.0)
        c = roc_curve(np.r_[m[:50], n[93:]], n[:93])
        assert tpr_at_fpr(c, 0.07) == tpr_at_fpr(c, 0.0700000001)


class TestPrecision:
    def test_examples(self):
        assert precision_at_recall([0.9, 0.8], [0.1, 0.2], 1.0) == 1.0
        assert precision_at_recall([0.3, 0.5], [0.3, 0.5], 1.0) == 0.5

    def test_range(self):
        with pytest.raises(ValueError):
            precision_at_recall([1.0], [0.0], 0.0)


class TestReports:
    def test_attack_report_round_trip(self):
        r = attack_report('x', [0.9, 0.4], [0.6, 0.1], alphas=(0.01, 0.5), recalls=(0.5,))
        assert r.auc == 0.75 and r.tpr_at == {0.01: 0.5, 0.5: 1.0}
        assert r.precision_at_recall == {0.5: 1.0}
        assert AttackReport.from_dict(r.to_dict()) == r
        for v in [r.auc, r.balanced_accuracy, *r.tpr_at.values()]:
            assert 0.0 <= v <= 1.0

    def test_gap_anchors(self):
        assert gap_report(1.0, 0.7655, 0.0, 0.0).gap_acc == pytest.approx(0.2345, abs=1e-12)
        assert gap_report(0.86, 0.683, 0.0, 0.0).gap_acc == pytest.approx(0.177, abs=1e-12)
        assert gap_report(0.9, 0.8, 0.4, 0.4).gap_loss == 0.0

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 50), st.floats(0, 50))
    def test_gap_identities(self, tra, tea, trl, tel):
        g = gap_report(tra, tea, trl, tel)
        assert g.gap_acc == tra - tea and g.gap_loss == tel - trl

    def test_gap_range(self):
        with pytest.raises(ValueError):
            gap_report(100.0, 76.55, 0.0, 0.0)
        with pytest.raises(ValueError):
            gap_report(1.0, 0.5, -1.0, 0.0)


class TestRankCorrelation:
    def test_rankdata_ties(self):
        np.testing.assert_array_equal(rankdata([10, 20, 20, 5]), [2, 3.5, 3.5, 1])

    def test_spearman(self):
        assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
        assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
        assert spearman([1, 1, 1], [1, 2, 3]) is None
        assert spearman([1], [2]) is None

    def test_spearman_matches_pearson_of_ranks(self):
        gen = np.random.default_rng(0)
        x, y = gen.integers(0, 5, 50), gen.random(50)
        rx = [sum(v < xi for v in x) + (sum(v == xi for v in x) + 1) / 2 for xi in x]
        ry = [sum(v < yi for v in y) + (sum(v == yi for v in y) + 1) / 2 for yi in y]
        assert spearman(x, y) == pytest.approx(np.corrcoef(rx, ry)[0, 1], abs=1e-12)
