"""Predicate tests: spec'd arithmetic cases, oracle comparisons, and invariants."""

import math

import numpy as np
import pytest

from sumskip.errors import PredictorMisuseError
from sumskip.predictors import (
    AffineFold,
    ClassScoreStats,
    PartialStats,
    ReluPredictorCfg,
    dominance_statstest,
    dominance_threshold,
    fold_affine,
    holm_bonferroni,
    inv_normal_cdf,
    normal_cdf,
    pair_p_value,
    statstest_predict,
    threshold_predict,
)


def stats_of(values) -> PartialStats:
    s = PartialStats()
    for v in values:
        s.consume(float(v))
    return s


def phi_oracle(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def phi_inv_bisect(p: float) -> float:
    """Independent bisection against the erfc-based CDF."""
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi_oracle(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestFoldAffine:
    def test_identity(self):
        cfg = ReluPredictorCfg(affine=AffineFold(1.0, 0.0, 4))
        assert fold_affine(0.7, cfg) == 0.7

    def test_scale_and_shift_share(self):
        cfg = ReluPredictorCfg(affine=AffineFold(2.0, -4.0, 4))
        assert fold_affine(0.1, cfg) == pytest.approx(-0.8, abs=1e-15)

    def test_sum_of_folded_equals_affine_of_sum(self, rng):
        for _ in range(30):
            n = int(rng.integers(1, 40))
            w, b = rng.standard_normal(2)
            xs = rng.standard_normal(n)
            cfg = ReluPredictorCfg(affine=AffineFold(float(w), float(b), n))
            folded = sum(fold_affine(float(x), cfg) for x in xs)
            assert folded == pytest.approx(w * xs.sum() + b, abs=1e-12)


class TestThresholdPredict:
    def test_above_kt(self):
        assert threshold_predict(stats_of([-0.5, -0.6]), -1.0) is False

    def test_below_kt(self):
        assert threshold_predict(stats_of([-1.5, -0.9]), -1.0) is True

    def test_minus_infinity_sentinel_never_fires(self, rng):
        for _ in range(50):
            s = stats_of(rng.standard_normal(int(rng.integers(1, 20))))
            assert threshold_predict(s, float("-inf")) is False

    def test_needs_one_term(self):
        with pytest.raises(PredictorMisuseError):
            threshold_predict(PartialStats(), 0.0)

    def test_matches_mean_oracle(self, rng):
        for _ in range(10_000):
            k = int(rng.integers(1, 40))
            xs = rng.standard_normal(k) * float(rng.uniform(0.1, 5))
            t = float(rng.uniform(-2, 2))
            got = threshold_predict(stats_of(xs), t)
            assert got == (sum(xs.tolist()) < k * t)


class TestStatsTestPredict:
    def test_zero_variance_negative_stream(self):
        assert statstest_predict(stats_of([-2, -2, -2, -2]), 0.1) is True

    def test_positive_sum_guard(self):
        assert statstest_predict(stats_of([1, 1, 1, 1]), 0.49) is False

    def test_documented_stream(self):
        s = stats_of([-3, -1, -2, -2])
        assert s.sum == -8 and s.sumsq == 18 and s.variance_numerator == 8
        # statistic 64/8 = 8 exceeds the squared 0.1-quantile 1.64237...
        assert phi_inv_bisect(0.1) == pytest.approx(-1.2815515655, abs=1e-9)
        assert statstest_predict(s, 0.1) is True

    def test_needs_two_terms(self):
        with pytest.raises(PredictorMisuseError):
            statstest_predict(stats_of([-1.0]), 0.1)

    def test_alpha_half_is_sign_test(self, rng):
        for _ in range(200):
            s = stats_of(rng.standard_normal(int(rng.integers(2, 30))))
            if s.variance_numerator > 1e-9:
                assert statstest_predict(s, 0.5) == (s.sum < 0)

    def test_alpha_to_zero_limit(self, rng):
        for _ in range(200):
            s = stats_of(rng.standard_normal(int(rng.integers(2, 30))))
            if s.variance_numerator > 1e-9:
                assert statstest_predict(s, 1e-12) is False

    def test_monotone_in_alpha(self, rng):
        for _ in range(500):
            s = stats_of(rng.standard_normal(int(rng.integers(2, 30))) - 0.5)
            decisions = [statstest_predict(s, a) for a in (0.01, 0.05, 0.1, 0.3, 0.5)]
            assert decisions == sorted(decisions)

    def test_scale_invariance(self, rng):
        for _ in range(300):
            xs = rng.standard_normal(int(rng.integers(2, 30)))
            c = float(rng.uniform(0.01, 100))
            a = float(rng.uniform(0.01, 0.5))
            assert statstest_predict(stats_of(xs), a) == statstest_predict(stats_of(c * xs), a)

    def test_matches_highprecision_oracle(self, rng):
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 40

        def oracle(xs, alpha):
            k = len(xs)
            s = mp.fsum(xs)
            if s >= 0:
                return False
            ssq = mp.fsum([x * x for x in xs])
            d = k * ssq - s * s
            if d <= mp.mpf("1e-12") * k * max(ssq, 1):
                return True
            z = s / mp.sqrt(d)
            return 0.5 * mp.erfc(-z / mp.sqrt(2)) < alpha

        agree = 0
        trials = 10_000
        for _ in range(trials):
            k = int(rng.integers(2, 50))
            xs = (rng.standard_normal(k) + rng.uniform(-1, 1)).tolist()
            if rng.uniform() < 0.02:
                xs = [float(rng.choice([-1.5, 2.0]))] * k    # zero-variance streams
            alpha = float(rng.uniform(0.005, 0.5))
            got = statstest_predict(stats_of(xs), alpha)
            agree += got == bool(oracle([mp.mpf(x) for x in xs], mp.mpf(alpha)))
        assert agree == trials


class TestInvNormalCdf:
    def test_median(self):
        assert inv_normal_cdf(0.5) == pytest.approx(0.0, abs=1e-12)

    def test_decile_vs_bisection_oracle(self):
        assert inv_normal_cdf(0.1) == pytest.approx(phi_inv_bisect(0.1), abs=1e-10)
        assert inv_normal_cdf(0.1) == pytest.approx(-1.2815515655, abs=1e-8)

    def test_roundtrip(self):
        for a in [i / 100 for i in range(1, 50)]:
            assert normal_cdf(inv_normal_cdf(a)) == pytest.approx(a, abs=1e-8)

    def test_accuracy_grid(self, rng):
        for _ in range(10_000):
            p = float(rng.uniform(1e-6, 1 - 1e-6))
            assert abs(inv_normal_cdf(p) - phi_inv_bisect(p)) <= 1e-8

    def test_domain(self):
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(PredictorMisuseError):
                inv_normal_cdf(bad)


class TestDominanceThreshold:
    def test_gaps_clear_thresholds(self):
        assert dominance_threshold([5.0, 3.5, 3.0], [1.0, 1.5]) is True

    def test_tied_top_two(self):
        assert dominance_threshold([4.0, 4.0, 1.0], [0.5], ranks=[2]) is False

    def test_zero_thresholds_distinct_scores(self):
        assert dominance_threshold([3.0, 2.0, 1.0], [0.0, 0.0]) is True

    def test_tie_rank_order_is_lower_index_first(self):
        # classes 0 and 1 tie at the top; rank 2 must be class 1, not class 2
        assert dominance_threshold([4.0, 4.0, 0.0], [2.0], ranks=[3]) is True

    def test_invariant_under_nonwinner_permutation(self, rng):
        for _ in range(200):
            scores = rng.standard_normal(5).tolist()
            thresholds = [float(rng.uniform(0, 1))]
            base = dominance_threshold(scores, thresholds, ranks=[2])
            w = int(np.argmax(scores))
            rest = [i for i in range(5) if i != w]
            rng.shuffle(rest)
            shuffled = [0.0] * 5
            shuffled[0] = scores[w]
            for slot, src in enumerate(rest, start=1):
                shuffled[slot] = scores[src]
            assert dominance_threshold(shuffled, thresholds, ranks=[2]) == base


class TestDominanceStatsTest:
    def test_zero_variance_dominance(self):
        stats = ClassScoreStats([8.0, 0.0, 0.0], {2: stats_of([2, 2, 2, 2]),
                                                  3: stats_of([2, 2, 2, 2])})
        assert dominance_statstest(stats, 0.1) is True

    def test_negative_difference_guard(self):
        stats = ClassScoreStats([1.0, 2.0], {2: stats_of([-1, 1, -1, -1])})
        assert pair_p_value(stats.pair_stats[2]) == 1.0
        assert dominance_statstest(stats, 0.1) is False

    def test_hand_computed_statistics_vs_oracle(self):
        # stats engineered so sum^2 / (k*sumsq - sum^2) = 4 and 9
        s4 = PartialStats(k=2, sum=2.0, sumsq=2.5)   # D=1, statistic 4
        s9 = PartialStats(k=2, sum=3.0, sumsq=5.0)   # D=1, statistic 9
        p4, p9 = pair_p_value(s4), pair_p_value(s9)
        assert p4 == pytest.approx(phi_oracle(-2.0), abs=1e-12)
        assert p9 == pytest.approx(phi_oracle(-3.0), abs=1e-12)
        # Holm by hand at alpha=0.1: sorted (p9, p4) vs (0.05, 0.1)
        expect = p9 <= 0.05 and p4 <= 0.1
        got = dominance_statstest(ClassScoreStats([0, 0], {2: s4, 3: s9}), 0.1)
        assert got is expect is True

    def test_needs_two_terms(self):
        with pytest.raises(PredictorMisuseError):
            pair_p_value(stats_of([1.0]))


class TestHolmBonferroni:
    def test_both_reject(self):
        assert holm_bonferroni([0.01, 0.04], 0.1) is True

    def test_order_independent(self):
        assert holm_bonferroni([0.06, 0.01], 0.1) is True

    def test_any_one_fails(self):
        assert holm_bonferroni([1.0, 0.0001], 0.1) is False

    def test_single_test(self):
        assert holm_bonferroni([0.09], 0.1) is True
        assert holm_bonferroni([0.11], 0.1) is False

    def test_matches_stepdown_oracle(self, rng):
        for _ in range(2000):
            m = int(rng.integers(1, 6))
            ps = rng.uniform(0, 1, m).tolist()
            alpha = float(rng.uniform(0.01, 0.3))
            want = all(p <= alpha / (m - i) for i, p in enumerate(sorted(ps)))
            assert holm_bonferroni(ps, alpha) == want


class TestPartialStats:
    def test_cauchy_schwarz(self, rng):
        for _ in range(500):
            s = stats_of(rng.standard_normal(int(rng.integers(1, 50))) * 10)
            assert s.variance_numerator >= -1e-9 * s.k * max(s.sumsq, 1.0)
