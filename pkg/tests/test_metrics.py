from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annodistill.core import CandidateNoiseSpec, CandidateSet, gen_synthetic
from annodistill.metrics import AssessmentReport, assess, beta_coverage, f1_score, gold_inclusion_rate


def naive_one_minus_alpha(candidates, gold):
    misses = 0
    for s, y in zip(candidates, gold):
        if y not in s.labels:
            misses += 1
    return 1.0 - misses / len(candidates)


def naive_beta(candidates, C):
    total = 0.0
    for s in candidates:
        total += (C - len(s.labels)) / (C - 1)
    return total / len(candidates)


def random_instance(rng, n_max=50, c_max=10):
    C = int(rng.integers(2, c_max + 1))
    n = int(rng.integers(1, n_max + 1))
    candidates = []
    for _ in range(n):
        size = int(rng.integers(1, C + 1))
        candidates.append(CandidateSet(tuple(rng.choice(C, size=size, replace=False))))
    gold = [int(g) for g in rng.integers(0, C, size=n)]
    return C, candidates, gold


class TestGoldInclusion:
    def test_all_sets_contain_gold(self):
        cands = [CandidateSet.of(0, 1), CandidateSet.of(1)]
        assert gold_inclusion_rate(cands, [0, 1]) == 1.0

    def test_no_set_contains_gold(self):
        cands = [CandidateSet.of(0), CandidateSet.of(1)]
        assert gold_inclusion_rate(cands, [1, 0]) == 0.0

    def test_three_of_four(self):
        cands = [CandidateSet.of(0), CandidateSet.of(0, 1), CandidateSet.of(2), CandidateSet.of(1)]
        assert gold_inclusion_rate(cands, [0, 1, 2, 0]) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            gold_inclusion_rate([CandidateSet.of(0)], [0, 1])


class TestBetaCoverage:
    def test_all_singletons(self):
        assert beta_coverage([CandidateSet.of(2)] * 5, C=6) == 1.0

    def test_all_full_sets(self):
        full = CandidateSet(tuple(range(6)))
        assert beta_coverage([full] * 3, C=6) == 0.0

    def test_mean_size_170_at_c6(self):
        # 7 doubles + 3 singles = mean 1.7 -> (6 - 1.7)/5 = 0.86
        cands = [CandidateSet.of(0, 1)] * 7 + [CandidateSet.of(0)] * 3
        assert beta_coverage(cands, C=6) == pytest.approx(0.86, abs=1e-12)

    def test_c_below_two_rejected(self):
        with pytest.raises(ValueError):
            beta_coverage([CandidateSet.of(0)], C=1)

    def test_equals_mean_size_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            C, cands, _ = random_instance(rng)
            mean_size = sum(len(s) for s in cands) / len(cands)
            assert beta_coverage(cands, C) == pytest.approx((C - mean_size) / (C - 1), abs=1e-12)


class TestF1:
    def test_published_aggregate_values(self):
        assert f1_score(0.8909, 0.86) == pytest.approx(0.875, abs=1e-3)
        assert f1_score(0.7107, 1.0) == pytest.approx(0.831, abs=1e-3)

    def test_zero_numerator(self):
        for beta in (0.0, 0.4, 1.0):
            assert f1_score(0.0, beta) == 0.0

    def test_total_function(self):
        assert f1_score(0.0, 0.0) == 0.0


class TestAssess:
    def test_perfect_singletons(self):
        cands = [CandidateSet.of(i % 3) for i in range(9)]
        gold = [i % 3 for i in range(9)]
        rep = assess(cands, gold, C=3)
        assert (rep.one_minus_alpha, rep.beta, rep.f1) == (1.0, 1.0, 1.0)
        assert rep.accuracy == 1.0

    def test_synthetic_inclusion_window(self):
        ds = gen_synthetic(C=4, per_class=500, d=4, sep=2.0, noise_spec=CandidateNoiseSpec(0.85, 2.0), seed=2)
        cands = [ds.candidates[s.id] for s in ds.samples]
        gold = [s.gold for s in ds.samples]
        rep = assess(cands, gold, C=4)
        assert 0.82 <= rep.one_minus_alpha <= 0.88
        assert rep.accuracy is None

    def test_hand_computed_mixed_sizes(self):
        cands = [
            CandidateSet.of(0),
            CandidateSet.of(0, 3),
            CandidateSet.of(1, 2, 4),
            CandidateSet.of(5),
            CandidateSet.of(2, 5),
        ]
        gold = [0, 3, 3, 4, 2]
        rep = assess(cands, gold, C=6)
        # brute-force evaluation by hand: hits at samples 0, 1, 4
        assert rep.one_minus_alpha == pytest.approx(3 / 5, abs=1e-12)
        beta_hand = (5 / 5 + 4 / 5 + 3 / 5 + 5 / 5 + 4 / 5) / 5
        assert rep.beta == pytest.approx(beta_hand, abs=1e-12)
        assert rep.f1 == pytest.approx(f1_score(3 / 5, beta_hand), abs=1e-15)
        assert rep.mean_set_size == pytest.approx(9 / 5, abs=1e-12)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            assess([], [], C=3)

    def test_csv_row_shape(self):
        rep = assess([CandidateSet.of(0)], [0], C=2)
        row = rep.csv_row(dataset="d", strategy="sa")
        assert row.startswith("d,sa,1,")
        assert len(row.split(",")) == len(AssessmentReport.CSV_HEADER.split(","))


class TestOracleEquivalence:
    def test_matches_naive_loops_to_1e12(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            C, cands, gold = random_instance(rng)
            assert gold_inclusion_rate(cands, gold) == pytest.approx(naive_one_minus_alpha(cands, gold), abs=1e-12)
            assert beta_coverage(cands, C) == pytest.approx(naive_beta(cands, C), abs=1e-12)
            rep = assess(cands, gold, C)
            assert rep.f1 == f1_score(rep.one_minus_alpha, rep.beta)


@given(st.data())
@settings(max_examples=100, deadline=None)
def test_monotonicity_properties(data):
    C = data.draw(st.integers(2, 8))
    n = data.draw(st.integers(1, 20))
    sets = []
    for _ in range(n):
        size = data.draw(st.integers(1, C))
        sets.append(CandidateSet(tuple(np.random.default_rng(data.draw(st.integers(0, 10**6))).choice(C, size, replace=False))))
    gold = [data.draw(st.integers(0, C - 1)) for _ in range(n)]
    base_oma = gold_inclusion_rate(sets, gold)
    base_beta = beta_coverage(sets, C)
    # adding gold to a set that lacked it never decreases inclusion
    i = data.draw(st.integers(0, n - 1))
    grown = list(sets)
    grown[i] = CandidateSet(tuple(set(sets[i].labels) | {gold[i]}))
    assert gold_inclusion_rate(grown, gold) >= base_oma
    # growing any set never increases coverage
    extra = data.draw(st.integers(0, C - 1))
    grown2 = list(sets)
    grown2[i] = CandidateSet(tuple(set(sets[i].labels) | {extra}))
    assert beta_coverage(grown2, C) <= base_beta + 1e-12
