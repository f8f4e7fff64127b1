"""Displacement metrics against brute-force oracles, the blind-turn filter,
and the polyline disagreement diagnostic."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wimp.evaluation import (
    EmptyInput,
    LengthMismatch,
    MetricsReport,
    MissingFuture,
    aggregate_metrics,
    bt_filter,
    disagreement_rate,
    is_blind_turn,
    min_ade,
    min_fde,
    miss_rate,
)
from wimp.scenario import Actor, Scenario


# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------


def _dist(a, b):
    return float(np.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2))


def oracle_min_fde(preds, truth):
    return min(_dist(p[-1], truth[-1]) for p in preds)


def oracle_min_ade(preds, truth):
    best, best_fde = None, None
    for p in preds:
        fde = _dist(p[-1], truth[-1])
        if best_fde is None or fde < best_fde:
            best_fde, best = fde, p
    return float(np.mean([_dist(a, b) for a, b in zip(best, truth)]))


def oracle_miss_rate(fdes, threshold):
    return sum(1 for f in fdes if f > threshold) / len(fdes)


class TestDisplacementMetrics:
    def test_exact_prediction_scores_zero(self):
        truth = np.cumsum(np.ones((15, 2)), axis=0)
        preds = truth[None]
        assert min_fde(preds, truth) == 0.0
        assert min_ade(preds, truth) == 0.0

    def test_three_four_five_endpoint(self):
        truth = np.zeros((5, 2))
        pred = np.zeros((5, 2))
        pred[-1] = [3.0, 4.0]
        assert min_fde(pred[None], truth) == pytest.approx(5.0)

    def test_constant_offset_ade(self):
        truth = np.cumsum(np.ones((10, 2)), axis=0)
        pred = truth + [2.0, 0.0]
        assert min_ade(pred[None], truth) == pytest.approx(2.0)

    def test_ade_anchored_to_fde_winner(self):
        # trajectory A: lower mean error, worse endpoint; B wins on FDE
        truth = np.zeros((4, 2))
        a = np.array([[0, 0], [0, 0], [0, 0], [5, 0]], dtype=float)
        b = np.array([[3, 0], [3, 0], [3, 0], [1, 0]], dtype=float)
        preds = np.stack([a, b])
        assert min_fde(preds, truth) == pytest.approx(1.0)
        assert min_ade(preds, truth) == pytest.approx(2.5)  # B's mean, not A's 1.25

    def test_random_cases_match_oracle_exactly(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            preds = rng.normal(size=(6, 15, 2)) * 10
            truth = rng.normal(size=(15, 2)) * 10
            assert min_fde(preds, truth) == oracle_min_fde(preds, truth)
            assert min_ade(preds, truth) == oracle_min_ade(preds, truth)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            min_fde(np.zeros((2, 5, 2)), np.zeros((6, 2)))

    def test_empty_prediction_set(self):
        with pytest.raises(EmptyInput):
            min_fde(np.zeros((0, 5, 2)), np.zeros((5, 2)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_rigid_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        preds = rng.normal(size=(4, 8, 2)) * 5
        truth = rng.normal(size=(8, 2)) * 5
        theta = rng.uniform(-np.pi, np.pi)
        shift = rng.normal(size=2) * 100
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        preds2 = preds @ rot.T + shift
        truth2 = truth @ rot.T + shift
        assert min_fde(preds2, truth2) == pytest.approx(min_fde(preds, truth), abs=1e-9)
        assert min_ade(preds2, truth2) == pytest.approx(min_ade(preds, truth), abs=1e-9)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_extra_trajectory_never_hurts_fde(self, seed):
        rng = np.random.default_rng(seed)
        preds = rng.normal(size=(3, 6, 2))
        truth = rng.normal(size=(6, 2))
        extra = np.concatenate([preds, rng.normal(size=(1, 6, 2))])
        assert min_fde(extra, truth) <= min_fde(preds, truth)


class TestMissRate:
    def test_all_hits(self):
        assert miss_rate([0.0, 0.1, 1.9]) == 0.0

    def test_exactly_two_meters_is_not_a_miss(self):
        assert miss_rate([2.0]) == 0.0

    def test_direct_count(self):
        assert miss_rate([1.0, 3.0, 2.5]) == pytest.approx(2 / 3)

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            miss_rate([])

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=20),
           st.floats(0, 5), st.floats(0, 5))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_threshold(self, fdes, t1, t2):
        lo, hi = min(t1, t2), max(t1, t2)
        assert miss_rate(fdes, hi) <= miss_rate(fdes, lo)

    def test_matches_oracle(self):
        rng = np.random.default_rng(7)
        fdes = rng.uniform(0, 5, size=100)
        assert miss_rate(fdes) == oracle_miss_rate(fdes, 2.0)


def _scn(observed, future, sid="s"):
    return Scenario(sid, "m", "focal", {"focal": Actor(np.asarray(observed, float), np.asarray(future, float))})


def _straight(n, v=0.8, y=0.0):
    return np.stack([v * np.arange(n), np.full(n, y)], axis=1)


class TestBlindTurnFilter:
    def test_constant_velocity_straight_is_not_bt(self):
        scn = _scn(_straight(10), _straight(15) + [8.0, 0.0])
        assert not is_blind_turn(scn)

    def test_straight_then_ninety_degree_turn(self):
        obs = _straight(10)
        # quarter-circle turn of radius 4 starting at the last observed point
        ang = np.linspace(0, np.pi / 2, 16)[1:]
        fut = obs[-1] + np.stack([4 * np.sin(ang), 4 * (1 - np.cos(ang))], axis=1)
        assert is_blind_turn(_scn(obs, fut))

    def test_curving_history_rejected(self):
        ang = np.linspace(0, np.pi / 2, 10)
        obs = np.stack([6 * np.sin(ang), 6 * (1 - np.cos(ang))], axis=1)
        fut = obs[-1] + np.stack([np.zeros(15), 0.8 * np.arange(1, 16)], axis=1)
        assert not is_blind_turn(_scn(obs, fut))

    def test_lane_change_counts(self):
        obs = _straight(10)
        u = np.linspace(0, 1, 15)
        fut = np.stack([obs[-1, 0] + 0.8 * np.arange(1, 16), 3.6 * u * u * (3 - 2 * u)], axis=1)
        assert is_blind_turn(_scn(obs, fut))

    def test_missing_future(self):
        scn = Scenario("s", "m", "focal", {"focal": Actor(_straight(10), None)})
        with pytest.raises(MissingFuture):
            is_blind_turn(scn)

    def test_bt_filter_selects_subset(self):
        straight = _scn(_straight(10), _straight(15) + [8.0, 0.0], "a")
        obs = _straight(10)
        ang = np.linspace(0, np.pi / 2, 16)[1:]
        fut = obs[-1] + np.stack([4 * np.sin(ang), 4 * (1 - np.cos(ang))], axis=1)
        turning = _scn(obs, fut, "b")
        assert [s.id for s in bt_filter([straight, turning])] == ["b"]


class TestDisagreementRate:
    def test_on_polyline_predictions_score_zero(self):
        poly = _straight(20, v=1.0)
        scns = [_scn(_straight(10), _straight(15), f"s{i}") for i in range(4)]

        def predict(scn):
            return poly[3:18], poly, "lane"

        assert disagreement_rate(scns, predict) == {"lane": 0.0}

    def test_all_far_off(self):
        poly = _straight(20, v=1.0)
        scns = [_scn(_straight(10), _straight(15), f"s{i}") for i in range(3)]

        def predict(scn):
            return poly[3:18] + [0.0, 10.0], poly, "lane"

        assert disagreement_rate(scns, predict) == {"lane": 1.0}

    def test_mixed_fixture_exact_fraction(self):
        poly = _straight(20, v=1.0)
        offsets = {"s0": 0.0, "s1": 10.0, "s2": 0.5, "s3": 4.0}
        scns = [_scn(_straight(10), _straight(15), f"s{i}") for i in range(4)]

        def predict(scn):
            return poly[3:18] + [0.0, offsets[scn.id]], poly, "lane"

        assert disagreement_rate(scns, predict) == {"lane": 0.5}


class TestReport:
    def test_aggregate_and_json(self):
        truth = np.zeros((5, 2))
        near = np.zeros((1, 5, 2))
        far = np.zeros((1, 5, 2))
        far[0, :, 0] = 7.0
        report = aggregate_metrics([(near, truth), (far, truth)], k=1, subset="all")
        assert report.n_scenarios == 2
        assert report.miss_rate == pytest.approx(0.5)
        assert report.min_fde == pytest.approx(3.5)
        parsed = MetricsReport(**__import__("json").loads(report.to_json()))
        assert parsed == report
