"""End-to-end behavioral acceptance suite.

Covers the worked polyline-ranking example, gradient correctness, training
schedules, metric oracles, single-scene overfitting, the map/social ablation
gap on blind turns, counterfactual identities and the stopped-vehicle
behavioral effect, rigid-motion equivariance, and serialization round trips.
The ablation and behavioral tests train real models and take several minutes.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest
from fastapi.testclient import TestClient

from wimp import autodiff as ad
from wimp.autodiff import Tape, load_checkpoint, save_checkpoint
from wimp.counterfactual import InjectActor, RemoveActor, counterfactual_predict
from wimp.evaluation import aggregate_metrics, bt_filter, min_ade, min_fde, miss_rate
from wimp.geometry import Polyline
from wimp.lane_graph import (
    alternating_merge,
    construct_polylines,
    find_candidate_lanes,
    propose_polylines,
    rank_by_alignment,
    rank_by_pip,
    save_map,
)
from wimp.model import (
    DESK_CONFIG,
    forward,
    forward_on_tape,
    init_weights,
    predict_diverse,
    prepare_scene,
)
from wimp.scenario import (
    GeneratorParams,
    generate_dataset,
    load_maps,
    load_scenario,
    load_split,
    save_scenario,
    scenarios_equal,
)
from wimp.service import create_app
from wimp.training import (
    EWTASchedule,
    TrainConfig,
    ewta_loss_on_tape,
    rank_mixtures,
    schedule_lr,
    schedule_mprime,
    train,
    waypoint_aux_loss,
)

from helpers import L1, L2, L3, L4, branching_map, straight_query
from test_autodiff import check_gradients
from test_evaluation import oracle_min_ade, oracle_min_fde, oracle_miss_rate
from test_lane_graph import paper_scored_candidates
from test_model import GRAD_CFG, _grad_scene, _transform_graph, _transform_scenario


# ---------------------------------------------------------------------------
# 1. Worked example: candidate construction and ranked merge
# ---------------------------------------------------------------------------


def test_worked_example_candidate_ranking():
    started = time.time()
    graph = branching_map()
    lanes = find_candidate_lanes(graph, straight_query())
    assert "A" in lanes
    candidates = construct_polylines(graph, "A", 15.0)
    assert {c.lane_ids for c in candidates} == {L1, L2, L3, L4}
    scored = paper_scored_candidates(graph)
    assert [c.lane_ids for c in rank_by_pip(scored)] == [L4, L1, L2, L3]
    assert [c.lane_ids for c in rank_by_alignment(scored)] == [L2, L4, L1, L3]
    merged = alternating_merge(rank_by_pip(scored), rank_by_alignment(scored), k=2)
    assert [c.lane_ids for c in merged] == [L4, L2]
    assert [c.lane_ids for c in alternating_merge(
        rank_by_pip(scored), rank_by_alignment(scored), k=1)] == [L4]
    assert time.time() - started < 1.0


# ---------------------------------------------------------------------------
# 2. Gradients: primitives and the end-to-end mixture loss
# ---------------------------------------------------------------------------


def test_gradient_suite():
    started = time.time()
    rng = np.random.default_rng(8)
    # spot-check primitives at tight tolerance
    check_gradients(
        lambda t, vs: ad.sum_(t, ad.tanh(t, ad.matmul(t, vs[0], vs[1]))),
        [rng.normal(size=(4, 3)), rng.normal(size=3)],
    )
    x, h, c = rng.normal(size=5), rng.normal(size=6), rng.normal(size=6)
    w_ih, w_hh, b = rng.normal(size=(24, 5)), rng.normal(size=(24, 6)), rng.normal(size=24)

    def lstm_loss(t, vs):
        out_h, out_c = ad.lstm_cell(t, vs[0], vs[1], vs[2], vs[3], vs[4], vs[5])
        return ad.sum_(t, ad.mul(t, out_h, out_c))

    check_gradients(lstm_loss, [x, h, c, w_ih, w_hh, b])

    # end-to-end: full forward + mixture loss + waypoint objective
    store = init_weights(GRAD_CFG, seed=5)
    prepared = _grad_scene()

    def total_loss():
        tape = Tape()
        watched = store.watch(tape)
        out = forward_on_tape(tape, watched, GRAD_CFG, prepared)
        loss, _ = ewta_loss_on_tape(tape, out["mixtures"], prepared.future, GRAD_CFG.mixtures)
        aux = waypoint_aux_loss(tape, GRAD_CFG, prepared, out["focal_waypoints"])
        return tape, watched, ad.add(tape, loss, ad.scale(tape, aux, 0.3))

    tape, watched, total = total_loss()
    tape.backward(total)
    grads = store.gradients(watched)
    eps = 1e-5
    sel = np.random.default_rng(0)
    for name, value in store.params.items():
        flat = value.reshape(-1)
        for i in sel.choice(flat.size, size=min(2, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            up = total_loss()[2].value
            flat[i] = orig - eps
            down = total_loss()[2].value
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            an = grads[name].reshape(-1)[i]
            assert abs(fd - an) / max(abs(fd), abs(an), 1e-2) < 1e-3
    assert time.time() - started < 120.0


# ---------------------------------------------------------------------------
# 3. Annealing and learning-rate schedules
# ---------------------------------------------------------------------------


def test_schedule_reference_points():
    expected = {0: (6, 1.0), 10: (5, 1.0), 25: (4, 1.0), 30: (3, 0.5),
                50: (1, 0.5), 60: (1, 0.25)}
    for epoch, (m_prime, lr_factor) in expected.items():
        assert schedule_mprime(epoch) == m_prime
        assert schedule_lr(epoch) == 1e-4 * lr_factor


# ---------------------------------------------------------------------------
# 4. Metrics against a brute-force oracle
# ---------------------------------------------------------------------------


def test_metrics_match_bruteforce_oracle():
    rng = np.random.default_rng(123)
    fdes = []
    for _ in range(100):
        preds = rng.normal(size=(6, 15, 2)) * 8
        truth = rng.normal(size=(15, 2)) * 8
        assert min_fde(preds, truth) == oracle_min_fde(preds, truth)
        assert min_ade(preds, truth) == oracle_min_ade(preds, truth)
        fdes.append(min_fde(preds, truth))
    assert miss_rate(fdes) == oracle_miss_rate(fdes, 2.0)
    assert miss_rate([2.0]) == 0.0  # strict inequality at the threshold


# ---------------------------------------------------------------------------
# 5. Overfit sanity on a single scenario
# ---------------------------------------------------------------------------


def test_single_scenario_overfit(tmp_path):
    started = time.time()
    generate_dataset(GeneratorParams(10, 3, {"straight": 1.0}), tmp_path)
    scn = load_split(tmp_path, "train")[:1]
    graphs = load_maps(tmp_path)
    cfg = replace(DESK_CONFIG, mixtures=1, dropout_rate=0.0)
    tc = TrainConfig(batch_size=1, lr=0.01, lr_halve_every=40, val_every=500,
                     patience=10_000, seed=0, epochs=200, aux_weight=0.0,
                     ewta=EWTASchedule(initial=1, decrement_every=1))
    store, _ = train(scn, scn, graphs, cfg, tc)
    prepared = prepare_scene(scn[0], graphs[scn[0].map_id], cfg, use_oracle_polyline=True)
    tape = Tape()
    watched = {n: tape.constant(v) for n, v in store.params.items()}
    out = forward_on_tape(tape, watched, cfg, prepared)
    pts = np.array([p.value for p in out["mixtures"][0]])
    per_step_l1 = float(np.mean(np.sum(np.abs(pts - prepared.future), axis=1)))
    assert per_step_l1 < 0.1
    assert time.time() - started < 120.0


# ---------------------------------------------------------------------------
# 6 & 8. Trained-model behavior: ablation gap and stopped-vehicle response
# ---------------------------------------------------------------------------

ABLATION_MIX = {"straight": 0.2, "left": 0.2, "right": 0.2, "lane": 0.1, "follow": 0.3}


def _train_variant(data_dir, **cfg_kwargs):
    cfg = replace(DESK_CONFIG, **cfg_kwargs)
    # validate only at the last epoch: the in-loop validation metric
    # conditions on the top proposed polyline, which is deliberately
    # ambiguous on blind turns, so best-by-validation selection would pick
    # weights that are worse under diverse prediction
    tc = TrainConfig(batch_size=32, lr=2e-3, lr_halve_every=6, val_every=100,
                     patience=30, seed=0, epochs=15,
                     ewta=EWTASchedule(initial=6, decrement_every=2))
    train_s = load_split(data_dir, "train")
    val_s = load_split(data_dir, "val")
    graphs = load_maps(data_dir)
    store, _ = train(train_s, val_s, graphs, cfg, tc)
    ranks = rank_mixtures(store, cfg, val_s, graphs)
    return store, cfg, ranks


@pytest.fixture(scope="session")
def ablation_run(tmp_path_factory):
    started = time.time()
    data = tmp_path_factory.mktemp("ablation") / "data"
    generate_dataset(GeneratorParams(2000, 17, ABLATION_MIX), data)
    full = _train_variant(data)
    none = _train_variant(data, use_map=False, use_social=False)
    return {"data": data, "full": full, "none": none, "started": started}


def _bt_min_fde(data_dir, store, cfg, ranks):
    graphs = load_maps(data_dir)
    subset = bt_filter(load_split(data_dir, "test"))
    assert len(subset) >= 0.3 * len(load_split(data_dir, "test"))
    pairs = [
        (predict_diverse(s, graphs[s.map_id], store, cfg, 6, mixture_ranks=ranks),
         s.focal.future)
        for s in subset
    ]
    return aggregate_metrics(pairs, 6, "bt").min_fde


def test_map_and_social_ablation_gap_on_blind_turns(ablation_run):
    full_fde = _bt_min_fde(ablation_run["data"], *ablation_run["full"])
    none_fde = _bt_min_fde(ablation_run["data"], *ablation_run["none"])
    assert full_fde <= 0.8 * none_fde, (full_fde, none_fde)
    assert time.time() - ablation_run["started"] < 45 * 60


def test_stopped_vehicle_reduces_terminal_speed(ablation_run, tmp_path):
    store, cfg, ranks = ablation_run["full"]
    generate_dataset(GeneratorParams(140, 99, {"follow": 1.0}), tmp_path)
    scenes = [s for s in load_split(tmp_path) if not s.meta.get("lead_stopped")][:50]
    assert len(scenes) == 50
    graphs = load_maps(tmp_path)
    drops = 0
    for scn in scenes:
        obs = scn.focal.observed
        head = obs[-1] - obs[-2]
        head = head / np.linalg.norm(head)
        stopped = np.tile(obs[-1] + 10.0 * head, (len(obs), 1))
        result = counterfactual_predict(
            scn,
            [RemoveActor("lead"), InjectActor("parked", stopped)],
            graphs[scn.map_id], store, cfg, mixture_ranks=ranks,
        )
        top = result["deltas"]["top_ranked"]
        drops += top["terminal_speed_edited"] < top["terminal_speed_baseline"]
    assert drops >= 40, f"terminal speed dropped in only {drops}/50 scenes"


# ---------------------------------------------------------------------------
# 7. Counterfactual identities
# ---------------------------------------------------------------------------


def test_counterfactual_identities(tmp_path):
    generate_dataset(GeneratorParams(10, 23, {"follow": 1.0}), tmp_path)
    scn = load_split(tmp_path)[0]
    graphs = load_maps(tmp_path)
    graph = graphs[scn.map_id]
    cfg = replace(DESK_CONFIG, dropout_rate=0.0)
    store = init_weights(cfg, seed=6)

    result = counterfactual_predict(scn, [], graph, store, cfg)
    assert np.array_equal(result["baseline"].trajectories, result["edited"].trajectories)

    removed = counterfactual_predict(scn, [RemoveActor("lead")], graph, store, cfg)
    never = scn.copy()
    del never.actors["lead"]
    direct = forward(never, graph, store, cfg)
    assert np.array_equal(removed["edited"].trajectories, direct.trajectories)


# ---------------------------------------------------------------------------
# 9. Rigid-motion equivariance
# ---------------------------------------------------------------------------


def test_rigid_motion_equivariance(tmp_path):
    generate_dataset(GeneratorParams(10, 29, {"straight": 0.5, "left": 0.5}), tmp_path)
    scns = load_split(tmp_path)[:4]
    graphs = load_maps(tmp_path)
    cfg = replace(DESK_CONFIG, dropout_rate=0.0)
    store = init_weights(cfg, seed=2)
    theta, shift = 1.1, np.array([250.0, -80.0])
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    for scn in scns:
        graph = graphs[scn.map_id]
        base = forward(scn, graph, store, cfg)
        moved = forward(
            _transform_scenario(scn, rot, shift),
            _transform_graph(graph, rot, shift),
            store, cfg,
        )
        expected = base.trajectories @ rot.T + shift
        assert np.max(np.abs(moved.trajectories - expected)) < 1e-6


# ---------------------------------------------------------------------------
# 10. Serialization and service statelessness
# ---------------------------------------------------------------------------


def test_serialization_round_trips(tmp_path):
    cfg = replace(DESK_CONFIG, dropout_rate=0.0)
    store = init_weights(cfg, seed=9)
    store.m = {n: np.random.default_rng(1).normal(size=v.shape) for n, v in store.params.items()}
    store.v = {n: np.abs(np.random.default_rng(2).normal(size=v.shape)) for n, v in store.params.items()}
    store.step_count = 17
    extra = cfg.to_extra()
    extra["mixture_ranks"] = np.arange(cfg.mixtures, dtype=np.float64)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(store, p1, extra)
    loaded, extra2 = load_checkpoint(p1)
    save_checkpoint(loaded, p2, extra2)
    assert p1.read_bytes() == p2.read_bytes()

    data = tmp_path / "data"
    generate_dataset(GeneratorParams(6, 33, {"straight": 1.0}), data)
    scn = load_split(data)[0]
    save_scenario(scn, tmp_path / "round.json")
    assert scenarios_equal(scn, load_scenario(tmp_path / "round.json"))
    graphs = load_maps(data)
    save_map(graphs["corridor"], tmp_path / "map.json")
    from wimp.lane_graph import load_map
    again = load_map(tmp_path / "map.json")
    assert again.to_dict() == graphs["corridor"].to_dict()

    save_checkpoint(store, tmp_path / "svc.ckpt", extra)
    client = TestClient(create_app(tmp_path / "svc.ckpt", data))
    sid = client.get("/api/scenarios").json()[0]["id"]
    req = {"scenario_id": sid, "k": 2}
    first = client.post("/api/predict", json=req)
    for _ in range(3):
        assert client.post("/api/predict", json=req).content == first.content
