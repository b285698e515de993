import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kendalltau

from musemer import ranking as rk


def tau_vs_truth(true_values, state):
    items = list(true_values)
    truth = {c: i for i, c in enumerate(sorted(items, key=lambda c: -true_values[c]))}
    got = {c: i for i, c in enumerate(rk.final_ranking(state))}
    return kendalltau([truth[c] for c in items], [got[c] for c in items]).statistic


class TestComparisonKey:
    def test_canonical_orientation(self):
        k = rk.ComparisonKey("b", "a", rk.Dimension.AROUSAL)
        assert (k.left, k.right) == ("a", "b")
        assert k == rk.ComparisonKey("a", "b", rk.Dimension.AROUSAL)
        assert hash(k) == hash(rk.ComparisonKey("a", "b", rk.Dimension.AROUSAL))

    def test_self_comparison_rejected(self):
        with pytest.raises(rk.RankingError):
            rk.ComparisonKey("a", "a", rk.Dimension.VALENCE)

    def test_dimension_distinguishes(self):
        a = rk.ComparisonKey("a", "b", rk.Dimension.AROUSAL)
        v = rk.ComparisonKey("a", "b", rk.Dimension.VALENCE)
        assert a != v

    def test_other(self):
        k = rk.ComparisonKey("a", "b", rk.Dimension.AROUSAL)
        assert k.other("a") == "b"
        assert k.other("b") == "a"


class TestJudgment:
    def test_winner_must_belong_to_pair(self):
        k = rk.ComparisonKey("a", "b", rk.Dimension.AROUSAL)
        with pytest.raises(rk.RankingError):
            rk.Judgment(k, "ann", "c")


class TestScheduler:
    def test_init_rejects_bad_input(self):
        with pytest.raises(rk.RankingError):
            rk.init_ranking([], rk.Dimension.AROUSAL, 0)
        with pytest.raises(rk.RankingError):
            rk.init_ranking(["x", "x"], rk.Dimension.AROUSAL, 0)

    def test_single_item_completes_immediately(self):
        state = rk.init_ranking(["only"], rk.Dimension.AROUSAL, 0)
        assert state.complete
        assert rk.final_ranking(state) == ["only"]

    def test_pending_pairs_all_involve_pivot(self):
        state = rk.init_ranking(list("abcdef"), rk.Dimension.AROUSAL, 3)
        pending = rk.pending_comparisons(state)
        assert len(pending) == 5
        # one common pivot clip across the first partition's comparisons
        members = [set((k.left, k.right)) for k in pending]
        common = set.intersection(*members)
        assert len(common) == 1

    def test_majority_two_of_three(self):
        state = rk.init_ranking(["a", "b"], rk.Dimension.AROUSAL, 0)
        key = next(iter(rk.pending_comparisons(state)))
        rk.submit_judgment(state, rk.Judgment(key, "x", "a"))
        rk.submit_judgment(state, rk.Judgment(key, "y", "b"))
        assert key not in state.resolved
        rk.submit_judgment(state, rk.Judgment(key, "z", "a"))
        assert state.resolved[key] == "a"
        assert rk.final_ranking(state) == ["a", "b"]

    def test_duplicate_annotator_rejected(self):
        state = rk.init_ranking(["a", "b"], rk.Dimension.AROUSAL, 0)
        key = next(iter(rk.pending_comparisons(state)))
        rk.submit_judgment(state, rk.Judgment(key, "x", "a"))
        with pytest.raises(rk.RankingError):
            rk.submit_judgment(state, rk.Judgment(key, "x", "a"))

    def test_unknown_and_resolved_comparisons_rejected(self):
        state = rk.init_ranking(["a", "b", "c"], rk.Dimension.AROUSAL, 0)
        bogus = rk.ComparisonKey("nope1", "nope2", rk.Dimension.AROUSAL)
        with pytest.raises(rk.RankingError):
            rk.submit_judgment(state, rk.Judgment(bogus, "x", "nope1"))
        key = next(iter(rk.pending_comparisons(state)))
        for ann in ("x", "y", "z"):
            rk.submit_judgment(state, rk.Judgment(key, ann, key.left))
        with pytest.raises(rk.RankingError):
            rk.submit_judgment(state, rk.Judgment(key, "w", key.left))

    def test_noiseless_recovers_exact_order(self):
        values = {f"c{i:02d}": float(i) for i in range(40)}
        state = rk.simulate_campaign(values, rk.Dimension.AROUSAL, seed=7)
        assert tau_vs_truth(values, state) == 1.0

    def test_rank_one_is_highest_value(self):
        values = {"lo": 0.0, "mid": 5.0, "hi": 9.0}
        state = rk.simulate_campaign(values, rk.Dimension.VALENCE, seed=1)
        assert rk.final_ranking(state) == ["hi", "mid", "lo"]

    def test_adversarial_random_answers_still_terminate(self):
        # arbitrary (but valid) judgments must always drive the quicksort
        # to completion; the result is some total order over all items
        rng = random.Random(123)
        state = rk.init_ranking([f"c{i}" for i in range(25)],
                                rk.Dimension.AROUSAL, seed=5)
        guard = 0
        while not state.complete:
            key = next(iter(rk.pending_comparisons(state)))
            for ann in ("x", "y", "z"):
                winner = key.left if rng.random() < 0.5 else key.right
                rk.submit_judgment(state, rk.Judgment(key, ann, winner))
            guard += 1
            assert guard < 25 * 25
        assert sorted(rk.final_ranking(state)) == sorted(state.items)
        assert sorted(state.placed.values()) == list(range(1, 26))

    def test_pivot_choice_is_seed_stable(self):
        a = rk.init_ranking(list("abcde"), rk.Dimension.AROUSAL, 11)
        b = rk.init_ranking(list("abcde"), rk.Dimension.AROUSAL, 11)
        assert rk.pending_comparisons(a) == rk.pending_comparisons(b)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=2, max_value=15), st.integers(0, 10**6))
    def test_property_noiseless_tau_is_one(self, n, seed):
        rng = random.Random(seed)
        vals = rng.sample(range(10 * n), n)
        values = {f"i{i}": float(v) for i, v in enumerate(vals)}
        state = rk.simulate_campaign(values, rk.Dimension.AROUSAL, seed=seed)
        assert tau_vs_truth(values, state) == pytest.approx(1.0)


class TestRankToRating:
    def test_endpoints(self):
        assert rk.rank_to_rating(1, 400) == 1.0
        assert rk.rank_to_rating(400, 400) == -1.0

    def test_single_item_maps_to_zero(self):
        assert rk.rank_to_rating(1, 1) == 0.0

    def test_strictly_monotone(self):
        for n in (2, 3, 10, 117, 500):
            ratings = [rk.rank_to_rating(r, n) for r in range(1, n + 1)]
            assert all(a > b for a, b in zip(ratings, ratings[1:]))

    def test_out_of_range(self):
        with pytest.raises(rk.RankingError):
            rk.rank_to_rating(0, 5)
        with pytest.raises(rk.RankingError):
            rk.rank_to_rating(6, 5)


def _three_votes(key, winners):
    return [rk.Judgment(key, f"a{i}", w) for i, w in enumerate(winners)]


class TestReliability:
    def test_alpha_hand_fixture(self):
        k1 = rk.ComparisonKey("A", "B", rk.Dimension.AROUSAL)
        k2 = rk.ComparisonKey("C", "D", rk.Dimension.AROUSAL)
        judgments = _three_votes(k1, ["A", "A", "A"]) + \
            _three_votes(k2, ["D", "D", "C"])
        report = rk.reliability(judgments)
        assert report.alpha == pytest.approx(0.375, abs=1e-9)
        assert report.unanimous_rate == pytest.approx(0.5)
        assert report.pairwise_rate == pytest.approx((3 + 1) / 6)

    def test_alpha_perfect_agreement(self):
        k1 = rk.ComparisonKey("A", "B", rk.Dimension.AROUSAL)
        k2 = rk.ComparisonKey("C", "D", rk.Dimension.AROUSAL)
        judgments = _three_votes(k1, ["A", "A", "A"]) + \
            _three_votes(k2, ["D", "D", "D"])
        report = rk.reliability(judgments)
        assert report.alpha == 1.0
        assert report.unanimous_rate == 1.0
        assert report.pairwise_rate == 1.0

    def test_requires_complete_vote_sets(self):
        k = rk.ComparisonKey("A", "B", rk.Dimension.AROUSAL)
        with pytest.raises(rk.RankingError):
            rk.reliability(_three_votes(k, ["A", "A"]))
        with pytest.raises(rk.RankingError):
            rk.reliability([])


class TestSimulateCampaign:
    def test_needs_three_annotators(self):
        with pytest.raises(rk.RankingError):
            rk.simulate_campaign({"a": 1.0, "b": 2.0}, rk.Dimension.AROUSAL,
                                 seed=0, n_annotators=2)

    def test_noise_degrades_but_campaign_completes(self):
        values = {f"c{i:02d}": float(i) for i in range(30)}
        state = rk.simulate_campaign(values, rk.Dimension.AROUSAL, seed=0,
                                     noise=0.2)
        assert state.complete
        assert -1.0 <= tau_vs_truth(values, state) <= 1.0

    def test_deterministic_given_seed(self):
        values = {f"c{i}": float(i) for i in range(12)}
        a = rk.simulate_campaign(values, rk.Dimension.AROUSAL, seed=9, noise=0.3)
        b = rk.simulate_campaign(values, rk.Dimension.AROUSAL, seed=9, noise=0.3)
        assert rk.final_ranking(a) == rk.final_ranking(b)
