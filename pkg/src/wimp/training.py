"""Winner-takes-all mixture losses with M' annealing, learning-rate
scheduling, the mini-batch training loop with validation-driven early
stopping, and post-hoc mixture ranking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, ShapeMismatch, Tape, adam_step
from .model import (
    ModelConfig,
    PreparedScene,
    forward_on_tape,
    init_weights,
    prepare_scene,
    waypoint_aux_loss,
)

WAYPOINT_LOSS_WEIGHT = 0.3


class InvalidMPrime(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class EWTASchedule:
    initial: int = 6
    decrement_every: int = 10
    floor: int = 1

    def m_prime(self, epoch: int) -> int:
        return max(self.floor, self.initial - epoch // self.decrement_every)


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    lr_halve_every: int = 15
    clip_norm: float = 1.0
    val_every: int = 3
    patience: int = 15
    seed: int = 0
    epochs: int = 60
    aux_weight: float = WAYPOINT_LOSS_WEIGHT
    ewta: EWTASchedule = field(default_factory=EWTASchedule)

    def schedule_lr(self, epoch: int) -> float:
        return self.lr / (2 ** (epoch // self.lr_halve_every))


PAPER_TRAIN_CONFIG = TrainConfig(
    batch_size=100,
    lr=1e-4,
    lr_halve_every=30,
    clip_norm=1.0,
    val_every=3,
    patience=30,
    epochs=100,
    ewta=EWTASchedule(initial=6, decrement_every=10),
)

DESK_TRAIN_CONFIG = TrainConfig(
    batch_size=32,
    lr=1e-3,
    lr_halve_every=15,
    clip_norm=1.0,
    val_every=3,
    patience=15,
    epochs=40,
    ewta=EWTASchedule(initial=6, decrement_every=5),
)


def schedule_mprime(epoch: int, schedule: EWTASchedule = EWTASchedule()) -> int:
    return schedule.m_prime(epoch)


def schedule_lr(epoch: int, lr: float = 1e-4, halve_every: int = 30) -> float:
    return lr / (2 ** (epoch // halve_every))


# ---------------------------------------------------------------------------
# Losses (numpy side)
# ---------------------------------------------------------------------------


def l1_trajectory_distance(pred: np.ndarray, truth: np.ndarray) -> float:
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"{pred.shape} vs {truth.shape}")
    return float(np.sum(np.abs(pred - truth)))


def wta_loss(predictions: np.ndarray, truth: np.ndarray) -> float:
    """Min over mixtures of the summed L1 distance to the truth."""
    return min(l1_trajectory_distance(p, truth) for p in predictions)


def ewta_loss(predictions: np.ndarray, truth: np.ndarray, m_prime: int) -> float:
    """Mean of the m_prime smallest per-mixture L1 distances."""
    if not 1 <= m_prime <= len(predictions):
        raise InvalidMPrime(f"m_prime {m_prime} outside [1, {len(predictions)}]")
    dists = sorted(l1_trajectory_distance(p, truth) for p in predictions)
    return float(np.mean(dists[:m_prime]))


# ---------------------------------------------------------------------------
# Losses (tape side)
# ---------------------------------------------------------------------------


def ewta_loss_on_tape(tape: Tape, mixtures, truth: np.ndarray, m_prime: int):
    """EWTA loss over per-mixture lists of (2,) point Vars. Gradient flows
    only into the m_prime lowest-cost mixtures. Ties pick the lowest index.
    Returns (loss Var, winner index)."""
    if not 1 <= m_prime <= len(mixtures):
        raise InvalidMPrime(f"m_prime {m_prime} outside [1, {len(mixtures)}]")
    per_mixture = []
    for pts in mixtures:
        steps = [ad.l1_distance(tape, p, tape.constant(truth[i])) for i, p in enumerate(pts)]
        total = steps[0]
        for s in steps[1:]:
            total = ad.add(tape, total, s)
        per_mixture.append(total)
    order = sorted(range(len(per_mixture)), key=lambda m: (per_mixture[m].value, m))
    winner = order[0]
    selected = [per_mixture[m] for m in order[:m_prime]]
    loss = selected[0]
    for s in selected[1:]:
        loss = ad.add(tape, loss, s)
    return ad.scale(tape, loss, 1.0 / m_prime), winner


def wta_loss_on_tape(tape: Tape, mixtures, truth: np.ndarray):
    loss, winner = ewta_loss_on_tape(tape, mixtures, truth, 1)
    return loss, winner


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _eval_min_fde(store: ParameterStore, cfg: ModelConfig, prepared: PreparedScene) -> float:
    """minFDE(K=M) of an eval-mode forward in the normalized frame."""
    tape = Tape()
    watched = {name: tape.constant(v) for name, v in store.params.items()}
    out = forward_on_tape(tape, watched, cfg, prepared, rng=None)
    truth_end = prepared.future[-1]
    return min(
        float(np.linalg.norm(pts[-1].value - truth_end)) for pts in out["mixtures"]
    )


def train(
    train_scenarios,
    val_scenarios,
    graphs,
    cfg: ModelConfig,
    tc: TrainConfig,
    store: ParameterStore | None = None,
    log_path=None,
    progress=None,
):
    """Mini-batch Adam training with EWTA annealing and early stopping on
    validation minFDE. Returns (best weights, log records)."""
    if not train_scenarios or not val_scenarios:
        raise EmptyDataset("train and validation sets must be non-empty")
    prepared_train = [
        prepare_scene(s, graphs[s.map_id], cfg, use_oracle_polyline=True)
        for s in train_scenarios
    ]
    prepared_val = [
        prepare_scene(s, graphs[s.map_id], cfg) for s in val_scenarios
    ]
    store = store if store is not None else init_weights(cfg, tc.seed)
    rng = np.random.default_rng([tc.seed, 1])
    drop_rng = np.random.default_rng([tc.seed, 2]) if cfg.dropout_rate > 0 else None
    best_fde = float("inf")
    best_store = store.copy()
    bad_checks = 0
    logs = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(tc.epochs):
            lr = tc.schedule_lr(epoch)
            m_prime = min(tc.ewta.m_prime(epoch), cfg.mixtures)
            order = rng.permutation(len(prepared_train))
            epoch_loss = 0.0
            hist = np.zeros(cfg.mixtures, dtype=int)
            for start in range(0, len(order), tc.batch_size):
                batch = order[start : start + tc.batch_size]
                grad_sum = {name: np.zeros_like(v) for name, v in store.params.items()}
                for idx in batch:
                    tape = Tape()
                    watched = store.watch(tape)
                    out = forward_on_tape(tape, watched, cfg, prepared_train[idx], rng=drop_rng)
                    loss, winner = ewta_loss_on_tape(
                        tape, out["mixtures"], prepared_train[idx].future, m_prime
                    )
                    aux = None
                    if tc.aux_weight > 0:
                        aux = waypoint_aux_loss(tape, cfg, prepared_train[idx], out["focal_waypoints"])
                    total = loss if aux is None else ad.add(tape, loss, ad.scale(tape, aux, tc.aux_weight))
                    tape.backward(total)
                    for name, g in store.gradients(watched).items():
                        grad_sum[name] += g
                    epoch_loss += float(loss.value)
                    hist[winner] += 1
                grads = {name: g / len(batch) for name, g in grad_sum.items()}
                adam_step(store, grads, lr, tc.clip_norm)
            record = {
                "epoch": epoch,
                "train_loss": epoch_loss / len(order),
                "val_minFDE": None,
                "m_prime": m_prime,
                "lr": lr,
                "winner_histogram": hist.tolist(),
            }
            if epoch % tc.val_every == tc.val_every - 1 or epoch == tc.epochs - 1:
                val_fde = float(
                    np.mean([_eval_min_fde(store, cfg, p) for p in prepared_val])
                )
                record["val_minFDE"] = val_fde
                if val_fde < best_fde - 1e-12:
                    best_fde = val_fde
                    best_store = store.copy()
                    bad_checks = 0
                else:
                    bad_checks += tc.val_every
            logs.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if progress:
                progress(record)
            if bad_checks > tc.patience:
                break
    finally:
        if log_file:
            log_file.close()
    if best_fde == float("inf"):
        best_store = store
    return best_store, logs


def rank_mixtures(store: ParameterStore, cfg: ModelConfig, val_scenarios, graphs) -> list[int]:
    """Order mixtures by descending WTA win count on the validation set;
    ties break by ascending mean FDE, then mixture index."""
    if not val_scenarios:
        raise EmptyDataset("validation set must be non-empty")
    wins = np.zeros(cfg.mixtures, dtype=int)
    fde_sum = np.zeros(cfg.mixtures)
    for scn in val_scenarios:
        prepared = prepare_scene(scn, graphs[scn.map_id], cfg)
        tape = Tape()
        watched = {name: tape.constant(v) for name, v in store.params.items()}
        out = forward_on_tape(tape, watched, cfg, prepared, rng=None)
        dists = [
            sum(float(np.sum(np.abs(p.value - prepared.future[i]))) for i, p in enumerate(pts))
            for pts in out["mixtures"]
        ]
        winner = int(np.argmin(dists))
        wins[winner] += 1
        for m, pts in enumerate(out["mixtures"]):
            fde_sum[m] += float(np.linalg.norm(pts[-1].value - prepared.future[-1]))
    mean_fde = fde_sum / len(val_scenarios)
    return sorted(range(cfg.mixtures), key=lambda m: (-wins[m], mean_fde[m], m))
