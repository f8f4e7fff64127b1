"""What-if scene edits: polyline substitution and social-context
injection/removal, followed by a paired baseline/edited re-forecast."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, PredictionSet, forward
from .scenario import TIMESTEP_S, Actor, Scenario


class UnknownActor(ValueError):
    pass


class DuplicateInjectedId(ValueError):
    pass


class FocalRemoval(ValueError):
    pass


class UnknownEditOp(ValueError):
    pass


@dataclass(frozen=True)
class ReplacePolyline:
    """Override the focal actor's conditioning polyline (world frame)."""

    polyline: np.ndarray

    def to_dict(self) -> dict:
        return {"op": "replace_polyline", "polyline": np.asarray(self.polyline).tolist()}


@dataclass(frozen=True)
class InjectActor:
    id: str
    trajectory: np.ndarray  # (T_obs, 2)

    def to_dict(self) -> dict:
        return {"op": "inject_actor", "id": self.id, "trajectory": np.asarray(self.trajectory).tolist()}


@dataclass(frozen=True)
class RemoveActor:
    id: str

    def to_dict(self) -> dict:
        return {"op": "remove_actor", "id": self.id}


@dataclass(frozen=True)
class HaltActor:
    """Freeze the actor's observed trajectory from at_index onward."""

    id: str
    at_index: int

    def to_dict(self) -> dict:
        return {"op": "halt_actor", "id": self.id, "at_index": self.at_index}


SceneEdit = ReplacePolyline | InjectActor | RemoveActor | HaltActor


def edit_from_dict(obj: dict) -> SceneEdit:
    op = obj.get("op")
    if op == "replace_polyline":
        return ReplacePolyline(np.asarray(obj["polyline"], dtype=np.float64))
    if op == "inject_actor":
        return InjectActor(str(obj["id"]), np.asarray(obj["trajectory"], dtype=np.float64))
    if op == "remove_actor":
        return RemoveActor(str(obj["id"]))
    if op == "halt_actor":
        return HaltActor(str(obj["id"]), int(obj["at_index"]))
    raise UnknownEditOp(f"unknown edit op {op!r}")


def apply_edits(scenario: Scenario, edits) -> tuple[Scenario, np.ndarray | None]:
    """Apply edits left to right to a copy of the scenario. Returns the
    edited scenario and the polyline override from the last ReplacePolyline
    edit, if any. The input scenario is untouched."""
    out = scenario.copy()
    override = None
    for edit in edits:
        if isinstance(edit, ReplacePolyline):
            override = np.asarray(edit.polyline, dtype=np.float64)
        elif isinstance(edit, InjectActor):
            if edit.id in out.actors:
                raise DuplicateInjectedId(edit.id)
            traj = np.asarray(edit.trajectory, dtype=np.float64)
            t_obs = len(out.focal.observed)
            if len(traj) != t_obs:
                raise ValueError(f"injected trajectory length {len(traj)} != T_obs {t_obs}")
            out.actors[edit.id] = Actor(observed=traj.copy(), future=None)
        elif isinstance(edit, RemoveActor):
            if edit.id == out.focal_id:
                raise FocalRemoval(edit.id)
            if edit.id not in out.actors:
                raise UnknownActor(edit.id)
            del out.actors[edit.id]
        elif isinstance(edit, HaltActor):
            if edit.id not in out.actors:
                raise UnknownActor(edit.id)
            actor = out.actors[edit.id]
            obs = actor.observed.copy()
            if not 0 <= edit.at_index < len(obs):
                raise ValueError(f"halt index {edit.at_index} outside observed window")
            obs[edit.at_index + 1 :] = obs[edit.at_index]
            out.actors[edit.id] = Actor(observed=obs, future=actor.future)
        else:
            raise UnknownEditOp(repr(edit))
    return out, override


def terminal_speeds(prediction: PredictionSet) -> np.ndarray:
    """Per-mixture terminal speed: length of the last predicted segment over
    one timestep."""
    trajs = prediction.trajectories
    return np.linalg.norm(trajs[:, -1] - trajs[:, -2], axis=1) / TIMESTEP_S


def counterfactual_predict(
    scenario: Scenario,
    edits,
    graph,
    store,
    cfg: ModelConfig,
    polyline_override: np.ndarray | None = None,
    mixture_ranks: list[int] | None = None,
) -> dict:
    """Forecast the original and edited scenes with the same weights and
    report per-mixture endpoint displacement and terminal-speed deltas."""
    edited_scn, edit_override = apply_edits(scenario, edits)
    if polyline_override is not None:
        edit_override = np.asarray(polyline_override, dtype=np.float64)
    baseline = forward(scenario, graph, store, cfg, mixture_ranks=mixture_ranks)
    edited = forward(
        edited_scn, graph, store, cfg,
        polyline_override=edit_override,
        mixture_ranks=mixture_ranks,
    )
    endpoint_shift = np.linalg.norm(
        edited.trajectories[:, -1] - baseline.trajectories[:, -1], axis=1
    )
    v_base = terminal_speeds(baseline)
    v_edit = terminal_speeds(edited)
    top = baseline.mixture_ranks[0]
    deltas = {
        "endpoint_displacement": endpoint_shift.tolist(),
        "terminal_speed_baseline": v_base.tolist(),
        "terminal_speed_edited": v_edit.tolist(),
        "terminal_speed_delta": (v_edit - v_base).tolist(),
        "top_ranked": {
            "endpoint_displacement": float(endpoint_shift[top]),
            "terminal_speed_baseline": float(v_base[top]),
            "terminal_speed_edited": float(v_edit[top]),
        },
    }
    return {"baseline": baseline, "edited": edited, "deltas": deltas}
