"""Forecast quality metrics (minADE, minFDE, miss rate), the blind-turn
scenario filter, and the map-disagreement diagnostic."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import Polyline, project_to_curvilinear

MISS_THRESHOLD_M = 2.0
STRAIGHT_MAX_HEADING_DEG = 15.0
STRAIGHT_MAX_LANE_DEV_M = 0.75
TURN_MIN_HEADING_DEG = 30.0
LANE_CHANGE_MIN_OFFSET_M = 3.0


class EmptyInput(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class MissingFuture(ValueError):
    pass


def _check_shapes(predictions: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if preds.ndim != 3 or preds.shape[2] != 2:
        raise ValueError(f"expected (K, T, 2) predictions, got {preds.shape}")
    if truth.shape != preds.shape[1:]:
        raise LengthMismatch(f"truth shape {truth.shape} does not match horizon {preds.shape[1:]}")
    if preds.shape[0] == 0:
        raise EmptyInput("no predicted trajectories")
    return preds, truth


def _norms(diff: np.ndarray) -> np.ndarray:
    # explicit sqrt(dx^2 + dy^2): bit-identical whether applied to one point
    # or broadcast over many, unlike dot-product-based vector norms
    return np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2)


def final_displacement_errors(predictions: np.ndarray, truth: np.ndarray) -> np.ndarray:
    preds, truth = _check_shapes(predictions, truth)
    return _norms(preds[:, -1] - truth[-1])


def min_fde(predictions: np.ndarray, truth: np.ndarray) -> float:
    """Smallest endpoint L2 error over the K predictions."""
    return float(np.min(final_displacement_errors(predictions, truth)))


def min_ade(predictions: np.ndarray, truth: np.ndarray) -> float:
    """Mean per-step L2 error of the trajectory with the smallest endpoint
    error (ties pick the lowest index)."""
    preds, truth = _check_shapes(predictions, truth)
    winner = int(np.argmin(final_displacement_errors(preds, truth)))
    return float(np.mean(_norms(preds[winner] - truth)))


def miss_rate(fdes, threshold: float = MISS_THRESHOLD_M) -> float:
    """Fraction of scenarios whose minFDE strictly exceeds the threshold."""
    fdes = np.asarray(fdes, dtype=np.float64)
    if fdes.size == 0:
        raise EmptyInput("no minFDE values")
    return float(np.mean(fdes > threshold))


@dataclass
class MetricsReport:
    k: int
    min_ade: float
    min_fde: float
    miss_rate: float
    n_scenarios: int
    subset: str = "all"

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "min_ade": self.min_ade,
            "min_fde": self.min_fde,
            "miss_rate": self.miss_rate,
            "n_scenarios": self.n_scenarios,
            "subset": self.subset,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def aggregate_metrics(per_scenario, k: int, subset: str = "all") -> MetricsReport:
    """per_scenario: iterable of (predictions (K, T, 2), truth (T, 2))."""
    pairs = list(per_scenario)
    if not pairs:
        raise EmptyInput("no scenarios to evaluate")
    fdes, ades = [], []
    for preds, truth in pairs:
        fdes.append(min_fde(preds, truth))
        ades.append(min_ade(preds, truth))
    return MetricsReport(
        k=k,
        min_ade=float(np.mean(ades)),
        min_fde=float(np.mean(fdes)),
        miss_rate=miss_rate(fdes),
        n_scenarios=len(pairs),
        subset=subset,
    )


def _heading(p0: np.ndarray, p1: np.ndarray) -> float:
    d = p1 - p0
    return float(np.arctan2(d[1], d[0]))


def _wrap_deg(angle_rad: float) -> float:
    deg = np.degrees(angle_rad)
    return float((deg + 180.0) % 360.0 - 180.0)


def _max_line_deviation(pts: np.ndarray) -> float:
    """Max perpendicular distance from the line through the endpoints."""
    d = pts[-1] - pts[0]
    norm = np.linalg.norm(d)
    if norm == 0.0:
        return float(np.max(np.linalg.norm(pts - pts[0], axis=1)))
    unit = d / norm
    off = pts - pts[0]
    return float(np.max(np.abs(unit[0] * off[:, 1] - unit[1] * off[:, 0])))


HEADING_CHORD_MIN_M = 1.0


def _chord_heading_from_start(pts: np.ndarray, min_len: float = HEADING_CHORD_MIN_M):
    """Heading of the first chord of at least min_len; None if too short.
    Chords absorb per-point lateral jitter that single segments amplify."""
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - pts[0]) >= min_len:
            return _heading(pts[0], pts[i])
    return None


def _chord_heading_to_end(pts: np.ndarray, min_len: float = HEADING_CHORD_MIN_M):
    for i in range(len(pts) - 2, -1, -1):
        if np.linalg.norm(pts[-1] - pts[i]) >= min_len:
            return _heading(pts[i], pts[-1])
    return None


def is_blind_turn(scenario) -> bool:
    """True when the observed history is near-straight but the future turns
    or changes lanes: observed net heading change < 15 degrees and observed
    deviation from a straight line < 0.75 m, while the future either turns
    by >= 30 degrees or ends >= 3 m laterally off the observed heading."""
    focal = scenario.focal
    if focal.future is None:
        raise MissingFuture(scenario.id)
    obs = np.asarray(focal.observed, dtype=np.float64)
    fut = np.asarray(focal.future, dtype=np.float64)
    mid = len(obs) // 2
    obs_in = _chord_heading_from_start(obs[: mid + 1])
    obs_out = _chord_heading_to_end(obs[mid:])
    if obs_in is None or obs_out is None:
        return False  # near-stationary history has no usable heading
    # half-window chords: long baselines keep lateral jitter from reading
    # as heading change
    obs_in = _heading(obs[0], obs[mid])
    obs_out = _heading(obs[mid], obs[-1])
    straight = (
        abs(_wrap_deg(obs_out - obs_in)) < STRAIGHT_MAX_HEADING_DEG
        and _max_line_deviation(obs) < STRAIGHT_MAX_LANE_DEV_M
    )
    if not straight:
        return False
    obs_heading = _heading(obs[0], obs[-1])
    fut_out = _chord_heading_to_end(np.vstack([obs[-1:], fut]))
    turns = fut_out is not None and abs(_wrap_deg(fut_out - obs_heading)) >= TURN_MIN_HEADING_DEG
    # lateral endpoint offset from the observed heading ray
    ray = Polyline([obs[-1], obs[-1] + 1000.0 * np.array(
        [np.cos(obs_heading), np.sin(obs_heading)]
    )])
    _, lateral = project_to_curvilinear(ray, fut[-1])
    lane_change = abs(lateral) >= LANE_CHANGE_MIN_OFFSET_M
    return turns or lane_change


def bt_filter(scenarios) -> list:
    """Blind-turn subset of a scenario collection."""
    return [s for s in scenarios if is_blind_turn(s)]


def disagreement_rate(scenarios, predict_fn, threshold: float = 2.0) -> dict:
    """Fraction of scenarios, grouped by conditioning polyline, whose
    top-ranked prediction ends more than threshold meters laterally off that
    polyline. predict_fn(scenario) -> (top trajectory (T, 2) world frame,
    conditioning polyline points (P, 2) world frame, group key)."""
    counts: dict = {}
    misses: dict = {}
    for scn in scenarios:
        traj, poly_pts, key = predict_fn(scn)
        ref = Polyline(poly_pts)
        _, normal = project_to_curvilinear(ref, np.asarray(traj)[-1])
        counts[key] = counts.get(key, 0) + 1
        misses[key] = misses.get(key, 0) + (1 if abs(normal) > threshold else 0)
    return {key: misses[key] / counts[key] for key in counts}
