"""Scene-edit algebra and paired baseline/edited forecasting."""

import numpy as np
import pytest

from wimp.counterfactual import (
    DuplicateInjectedId,
    FocalRemoval,
    HaltActor,
    InjectActor,
    RemoveActor,
    ReplacePolyline,
    UnknownActor,
    UnknownEditOp,
    apply_edits,
    counterfactual_predict,
    edit_from_dict,
    terminal_speeds,
)
from wimp.model import ModelConfig, forward, init_weights
from wimp.scenario import Actor, Scenario, map_templates, scenarios_equal

TINY = ModelConfig(
    hidden_size=8,
    encoder_layers=1,
    decoder_layers=1,
    attention_heads=2,
    mixtures=2,
    waypoint_horizon=5,
    obs_len=10,
    pred_len=15,
    dropout_rate=0.0,
    dropout_layers=0,
)


def make_scenario():
    xs = -20.0 + 0.8 * np.arange(10)
    obs = np.stack([xs, np.zeros(10)], axis=1)
    fut = np.stack([obs[-1, 0] + 0.8 * np.arange(1, 16), np.zeros(15)], axis=1)
    return Scenario("s", "corridor", "focal", {
        "focal": Actor(obs, fut),
        "lead": Actor(obs + [12.0, 0.1], None),
    })


@pytest.fixture(scope="module")
def corridor():
    return map_templates()["corridor"]


@pytest.fixture(scope="module")
def weights():
    return init_weights(TINY, seed=1)


class TestApplyEdits:
    def test_empty_edit_list_is_identity(self):
        scn = make_scenario()
        out, override = apply_edits(scn, [])
        assert override is None
        assert scenarios_equal(out, scn)
        assert out is not scn

    def test_original_untouched(self):
        scn = make_scenario()
        before = scn.actors["lead"].observed.copy()
        apply_edits(scn, [HaltActor("lead", 0), RemoveActor("lead")])
        assert np.array_equal(scn.actors["lead"].observed, before)
        assert "lead" in scn.actors

    def test_inject_then_remove_is_identity(self):
        scn = make_scenario()
        stopped = np.tile([0.0, 3.6], (10, 1))
        out, _ = apply_edits(scn, [InjectActor("parked", stopped), RemoveActor("parked")])
        assert scenarios_equal(out, scn)

    def test_halt_at_zero_freezes_first_point(self):
        scn = make_scenario()
        out, _ = apply_edits(scn, [HaltActor("lead", 0)])
        obs = out.actors["lead"].observed
        assert np.all(obs == obs[0])

    def test_halt_midway(self):
        scn = make_scenario()
        out, _ = apply_edits(scn, [HaltActor("lead", 4)])
        obs = out.actors["lead"].observed
        assert np.array_equal(obs[:5], scn.actors["lead"].observed[:5])
        assert np.all(obs[5:] == obs[4])

    def test_pure_repeated_application(self):
        scn = make_scenario()
        edits = [HaltActor("lead", 3), InjectActor("x", np.tile([1.0, 1.0], (10, 1)))]
        a, _ = apply_edits(scn, edits)
        b, _ = apply_edits(scn, edits)
        assert scenarios_equal(a, b)

    def test_errors(self):
        scn = make_scenario()
        with pytest.raises(UnknownActor):
            apply_edits(scn, [RemoveActor("ghost")])
        with pytest.raises(UnknownActor):
            apply_edits(scn, [HaltActor("ghost", 0)])
        with pytest.raises(FocalRemoval):
            apply_edits(scn, [RemoveActor("focal")])
        with pytest.raises(DuplicateInjectedId):
            apply_edits(scn, [InjectActor("lead", np.zeros((10, 2)))])

    def test_replace_polyline_returns_override(self):
        poly = np.stack([np.arange(5.0), np.zeros(5)], axis=1)
        _, override = apply_edits(make_scenario(), [ReplacePolyline(poly)])
        assert np.array_equal(override, poly)


class TestEditJson:
    def test_round_trip_all_ops(self):
        edits = [
            ReplacePolyline(np.array([[0.0, 0.0], [1.0, 0.0]])),
            InjectActor("v", np.zeros((10, 2))),
            RemoveActor("lead"),
            HaltActor("lead", 2),
        ]
        for edit in edits:
            back = edit_from_dict(edit.to_dict())
            assert type(back) is type(edit)
            assert back.to_dict() == edit.to_dict()

    def test_unknown_op(self):
        with pytest.raises(UnknownEditOp):
            edit_from_dict({"op": "teleport"})


class TestCounterfactualPredict:
    def test_no_edits_bit_identical(self, corridor, weights):
        result = counterfactual_predict(make_scenario(), [], corridor, weights, TINY)
        assert np.array_equal(result["baseline"].trajectories, result["edited"].trajectories)
        assert result["deltas"]["endpoint_displacement"] == [0.0, 0.0]
        assert result["deltas"]["terminal_speed_delta"] == [0.0, 0.0]

    def test_baseline_equals_plain_forward(self, corridor, weights):
        scn = make_scenario()
        result = counterfactual_predict(scn, [HaltActor("lead", 0)], corridor, weights, TINY)
        plain = forward(scn, corridor, weights, TINY)
        assert np.array_equal(result["baseline"].trajectories, plain.trajectories)

    def test_remove_equals_never_present(self, corridor, weights):
        scn = make_scenario()
        result = counterfactual_predict(scn, [RemoveActor("lead")], corridor, weights, TINY)
        solo = scn.copy()
        del solo.actors["lead"]
        direct = forward(solo, corridor, weights, TINY)
        assert np.array_equal(result["edited"].trajectories, direct.trajectories)

    def test_replace_with_identical_polyline_is_identity(self, corridor, weights):
        scn = make_scenario()
        from wimp.model import conditioning_polyline
        poly = conditioning_polyline(corridor, scn.focal.observed)
        result = counterfactual_predict(scn, [ReplacePolyline(poly)], corridor, weights, TINY)
        assert np.array_equal(result["baseline"].trajectories, result["edited"].trajectories)

    def test_terminal_speeds_formula(self, corridor, weights):
        pred = forward(make_scenario(), corridor, weights, TINY)
        speeds = terminal_speeds(pred)
        expected = np.linalg.norm(
            pred.trajectories[:, -1] - pred.trajectories[:, -2], axis=1
        ) / 0.1
        assert np.allclose(speeds, expected)
