"""Scenario serialization and the seeded synthetic scenario generator
(straight / left / right / lane-change / car-following traffic on a small
set of template maps)."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Polyline
from .lane_graph import LaneGraph, LaneSegment, save_map

TIMESTEP_S = 0.1
DESK_T_OBS = 10
DESK_T_PRED = 15
PAPER_T_OBS = 20
PAPER_T_PRED = 30

SCENARIO_KINDS = ("straight", "left", "right", "lane", "follow")


class SchemaViolation(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer


class InvalidMix(ValueError):
    pass


@dataclass
class Actor:
    observed: np.ndarray  # (T_obs, 2)
    future: np.ndarray | None = None  # (T_pred, 2)


@dataclass
class Scenario:
    id: str
    map_id: str
    focal_id: str
    actors: dict[str, Actor]
    meta: dict = field(default_factory=dict)

    @property
    def focal(self) -> Actor:
        return self.actors[self.focal_id]

    def copy(self) -> "Scenario":
        return Scenario(
            id=self.id,
            map_id=self.map_id,
            focal_id=self.focal_id,
            actors={
                aid: Actor(
                    observed=a.observed.copy(),
                    future=None if a.future is None else a.future.copy(),
                )
                for aid, a in self.actors.items()
            },
            meta=dict(self.meta),
        )

    def to_dict(self) -> dict:
        actors = {}
        for aid, a in self.actors.items():
            rec = {"observed": a.observed.tolist()}
            if a.future is not None:
                rec["future"] = a.future.tolist()
            actors[aid] = rec
        out = {"id": self.id, "map_id": self.map_id, "focal_id": self.focal_id, "actors": actors}
        if self.meta:
            out["meta"] = self.meta
        return out


_KNOWN_SCENARIO_KEYS = {"id", "map_id", "focal_id", "actors", "meta"}
_KNOWN_ACTOR_KEYS = {"observed", "future"}


def _check_points(raw, pointer: str) -> np.ndarray:
    if not isinstance(raw, list) or not raw:
        raise SchemaViolation(pointer, "expected a non-empty list of [x, y] pairs")
    for i, pt in enumerate(raw):
        if not isinstance(pt, list) or len(pt) != 2 or not all(
            isinstance(c, (int, float)) for c in pt
        ):
            raise SchemaViolation(f"{pointer}/{i}", "expected an [x, y] number pair")
    arr = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise SchemaViolation(pointer, "coordinates must be finite")
    return arr


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise SchemaViolation("", "scenario must be a JSON object")
    for key in ("id", "map_id", "focal_id", "actors"):
        if key not in data:
            raise SchemaViolation(f"/{key}", "missing required field")
    unknown = set(data) - _KNOWN_SCENARIO_KEYS
    if unknown:
        warnings.warn(f"ignoring unknown scenario fields: {sorted(unknown)}")
    if not isinstance(data["actors"], dict) or not data["actors"]:
        raise SchemaViolation("/actors", "expected a non-empty object")
    if data["focal_id"] not in data["actors"]:
        raise SchemaViolation("/focal_id", f"focal actor {data['focal_id']!r} not in actors")
    actors = {}
    obs_len = None
    for aid, rec in data["actors"].items():
        if not isinstance(rec, dict):
            raise SchemaViolation(f"/actors/{aid}", "expected an object")
        unknown = set(rec) - _KNOWN_ACTOR_KEYS
        if unknown:
            warnings.warn(f"ignoring unknown actor fields: {sorted(unknown)}")
        if "observed" not in rec:
            raise SchemaViolation(f"/actors/{aid}/observed", "missing required field")
        observed = _check_points(rec["observed"], f"/actors/{aid}/observed")
        if obs_len is None:
            obs_len = len(observed)
        elif len(observed) != obs_len:
            raise SchemaViolation(
                f"/actors/{aid}/observed", f"length {len(observed)} != {obs_len}"
            )
        future = None
        if rec.get("future") is not None:
            future = _check_points(rec["future"], f"/actors/{aid}/future")
        actors[aid] = Actor(observed=observed, future=future)
    meta = data.get("meta", {})
    if not isinstance(meta, dict):
        raise SchemaViolation("/meta", "expected an object")
    return Scenario(
        id=str(data["id"]),
        map_id=str(data["map_id"]),
        focal_id=str(data["focal_id"]),
        actors=actors,
        meta=meta,
    )


def load_scenario(path) -> Scenario:
    with open(path) as f:
        return scenario_from_dict(json.load(f))


def save_scenario(scn: Scenario, path) -> None:
    with open(path, "w") as f:
        json.dump(scn.to_dict(), f)


def scenarios_equal(a: Scenario, b: Scenario) -> bool:
    if (a.id, a.map_id, a.focal_id) != (b.id, b.map_id, b.focal_id):
        return False
    if set(a.actors) != set(b.actors):
        return False
    for aid in a.actors:
        x, y = a.actors[aid], b.actors[aid]
        if not np.array_equal(x.observed, y.observed):
            return False
        if (x.future is None) != (y.future is None):
            return False
        if x.future is not None and not np.array_equal(x.future, y.future):
            return False
    return a.meta == b.meta


# ---------------------------------------------------------------------------
# Map templates
# ---------------------------------------------------------------------------

LANE_HALF_WIDTH = 1.8


def _offset_ring(centerline: np.ndarray, half_width: float = LANE_HALF_WIDTH) -> np.ndarray:
    """Closed polygon ring from left/right offsets of a centerline."""
    d = np.diff(centerline, axis=0)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    # per-point direction: average of adjacent segment directions
    dirs = np.vstack([d[0], (d[:-1] + d[1:]) / 2, d[-1]])
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    normals = np.stack([-dirs[:, 1], dirs[:, 0]], axis=1) * half_width
    left = centerline + normals
    right = centerline - normals
    return np.vstack([left, right[::-1], left[:1]])


def _segment(sid, centerline, successors=(), predecessors=()) -> LaneSegment:
    cl = np.asarray(centerline, dtype=np.float64)
    return LaneSegment(
        id=sid,
        centerline=Polyline(cl),
        polygon=_offset_ring(cl),
        successors=tuple(successors),
        predecessors=tuple(predecessors),
    )


def _line(p0, p1, n=5) -> np.ndarray:
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    return p0 + np.linspace(0, 1, n)[:, None] * (p1 - p0)


def _arc(center, radius, a0, a1, n=9) -> np.ndarray:
    ang = np.linspace(a0, a1, n)
    return np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=1)


def _corridor_map() -> LaneGraph:
    segs = []
    for lane, y in (("a", 0.0), ("b", 3.6)):
        xs = [-60, -20, 20, 60]
        ids = [f"{lane}{i}" for i in range(3)]
        for i in range(3):
            segs.append(
                _segment(
                    ids[i],
                    _line((xs[i], y), (xs[i + 1], y)),
                    successors=[ids[i + 1]] if i < 2 else [],
                    predecessors=[ids[i - 1]] if i > 0 else [],
                )
            )
    return LaneGraph(segs)


def _intersection_map() -> LaneGraph:
    # eastbound approach splitting into left (north), through (east), right (south)
    segs = [
        _segment("ap1", _line((-66, 0), (-36, 0)), successors=["ap2"]),
        _segment("ap2", _line((-36, 0), (-6, 0)), successors=["left", "thru", "right"], predecessors=["ap1"]),
        _segment("thru", _line((-6, 0), (6, 0), n=5), successors=["e1"], predecessors=["ap2"]),
        _segment("e1", _line((6, 0), (36, 0)), successors=["e2"], predecessors=["thru"]),
        _segment("e2", _line((36, 0), (66, 0)), predecessors=["e1"]),
        _segment("left", _arc((-6, 8), 8, -np.pi / 2, 0.0), successors=["n1"], predecessors=["ap2"]),
        _segment("n1", _line((2, 8), (2, 38)), successors=["n2"], predecessors=["left"]),
        _segment("n2", _line((2, 38), (2, 68)), predecessors=["n1"]),
        _segment("right", _arc((-6, -5), 5, np.pi / 2, 0.0), successors=["s1"], predecessors=["ap2"]),
        _segment("s1", _line((-1, -5), (-1, -35)), successors=["s2"], predecessors=["right"]),
        _segment("s2", _line((-1, -35), (-1, -65)), predecessors=["s1"]),
    ]
    return LaneGraph(segs)


def _tee_map() -> LaneGraph:
    segs = [
        _segment("ap1", _line((-66, 0), (-36, 0)), successors=["ap2"]),
        _segment("ap2", _line((-36, 0), (-6, 0)), successors=["left", "right"], predecessors=["ap1"]),
        _segment("left", _arc((-6, 7), 7, -np.pi / 2, 0.0), successors=["n1"], predecessors=["ap2"]),
        _segment("n1", _line((1, 7), (1, 37)), successors=["n2"], predecessors=["left"]),
        _segment("n2", _line((1, 37), (1, 67)), predecessors=["n1"]),
        _segment("right", _arc((-6, -5), 5, np.pi / 2, 0.0), successors=["s1"], predecessors=["ap2"]),
        _segment("s1", _line((-1, -5), (-1, -35)), successors=["s2"], predecessors=["right"]),
        _segment("s2", _line((-1, -35), (-1, -65)), predecessors=["s1"]),
    ]
    return LaneGraph(segs)


def map_templates() -> dict[str, LaneGraph]:
    return {
        "corridor": _corridor_map(),
        "intersection": _intersection_map(),
        "tee": _tee_map(),
    }


# routes used by the generator: (map_id, lane chain, arclength where curvature starts)
_ROUTES = {
    "straight": [("corridor", ("a0", "a1", "a2"), None), ("intersection", ("ap1", "ap2", "thru", "e1", "e2"), None)],
    "left": [("intersection", ("ap1", "ap2", "left", "n1", "n2"), 60.0), ("tee", ("ap1", "ap2", "left", "n1", "n2"), 60.0)],
    "right": [("intersection", ("ap1", "ap2", "right", "s1", "s2"), 60.0), ("tee", ("ap1", "ap2", "right", "s1", "s2"), 60.0)],
    "lane": [("corridor", ("a0", "a1", "a2"), None)],
    "follow": [("corridor", ("a0", "a1", "a2"), None)],
}


def _route_polyline(graph: LaneGraph, chain) -> Polyline:
    pts = []
    for sid in chain:
        cl = graph.segments[sid].centerline.points
        if pts and np.linalg.norm(pts[-1] - cl[0]) < 1e-9:
            cl = cl[1:]
        pts.extend(cl)
    return Polyline(np.array(pts))


def _jitter_lateral(route: Polyline, s_values, rng, sigma=0.15) -> np.ndarray:
    """Points along the route at given arclengths with clipped lateral noise."""
    pts = []
    for s in s_values:
        p = route.point_at_arclength(s)
        s2 = min(s + 0.5, route.length)
        q = route.point_at_arclength(max(s2, 1e-6))
        d = q - route.point_at_arclength(max(s2 - 0.5, 0.0))
        d = d / (np.linalg.norm(d) + 1e-12)
        n = np.array([-d[1], d[0]])
        off = float(np.clip(rng.normal(0.0, sigma), -3 * sigma, 3 * sigma))
        pts.append(p + off * n)
    return np.array(pts)


def _constant_speed_arclengths(s0, v, steps):
    return s0 + v * TIMESTEP_S * np.arange(steps)


@dataclass
class GeneratorParams:
    n_scenarios: int
    seed: int
    mix: dict[str, float]
    t_obs: int = DESK_T_OBS
    t_pred: int = DESK_T_PRED

    def validate(self):
        if set(self.mix) - set(SCENARIO_KINDS):
            raise InvalidMix(f"unknown kinds: {sorted(set(self.mix) - set(SCENARIO_KINDS))}")
        total = sum(self.mix.values())
        if abs(total - 1.0) > 1e-9 or any(v < 0 for v in self.mix.values()):
            raise InvalidMix(f"mix fractions must be nonnegative and sum to 1, got {total}")


def _kind_sequence(params: GeneratorParams) -> list[str]:
    n = params.n_scenarios
    counts = {k: int(np.floor(params.mix.get(k, 0.0) * n)) for k in SCENARIO_KINDS}
    remainder = n - sum(counts.values())
    # hand leftovers to the largest fractions, deterministically
    order = sorted(SCENARIO_KINDS, key=lambda k: -params.mix.get(k, 0.0))
    for i in range(remainder):
        counts[order[i % len(order)]] += 1
    seq = [k for k in SCENARIO_KINDS for _ in range(counts[k])]
    rng = np.random.default_rng([params.seed, 0xD5])
    rng.shuffle(seq)
    return seq


def _generate_one(index: int, kind: str, params: GeneratorParams, maps) -> Scenario:
    rng = np.random.default_rng([params.seed, index])
    t_obs, t_pred = params.t_obs, params.t_pred
    total = t_obs + t_pred
    map_id, chain, curve_start = _ROUTES[kind][rng.integers(len(_ROUTES[kind]))]
    graph = maps[map_id]
    route = _route_polyline(graph, chain)
    base_speed = 8.0
    # turns keep speed >= 85% of base so the short future window still
    # penetrates the curve far enough to read as a turn
    lo = 0.85 if kind in ("left", "right") else 0.55
    v = base_speed * float(np.clip(rng.normal(1.0, 0.15), lo, 1.45))

    actors: dict[str, Actor] = {}
    meta = {"kind": kind}

    if kind in ("straight", "lane"):
        s0 = float(rng.uniform(2.0, route.length - v * TIMESTEP_S * total - 5.0))
        s_vals = _constant_speed_arclengths(s0, v, total)
        pts = _jitter_lateral(route, s_vals, rng)
        if kind == "lane":
            # smooth lateral drift to the adjacent lane over the future window
            shift = 3.6
            ramp = np.zeros(total)
            u = np.linspace(0.0, 1.0, t_pred)
            ramp[t_obs:] = u * u * (3 - 2 * u) * shift
            pts = pts + ramp[:, None] * np.array([0.0, 1.0])
        actors["focal"] = Actor(observed=pts[:t_obs], future=pts[t_obs:])
    elif kind in ("left", "right"):
        # observed window ends just before the curve; future enters the turn
        gap = float(rng.uniform(0.5, 2.0))
        s_last_obs = curve_start - gap
        s0 = s_last_obs - v * TIMESTEP_S * (t_obs - 1)
        s_vals = _constant_speed_arclengths(s0, v, total)
        pts = _jitter_lateral(route, s_vals, rng, sigma=0.10)
        actors["focal"] = Actor(observed=pts[:t_obs], future=pts[t_obs:])
    elif kind == "follow":
        stopped_lead = bool(rng.random() < 0.5)
        meta["lead_stopped"] = stopped_lead
        margin = v * TIMESTEP_S * total + 25.0
        s0 = float(rng.uniform(2.0, max(route.length - margin, 3.0)))
        lead_gap = float(rng.uniform(8.0, 15.0))
        if stopped_lead:
            # lead parked ahead; focal brakes to stop ~4 m behind it
            s_lead = s0 + v * TIMESTEP_S * (t_obs - 1) + lead_gap
            stop_at = s_lead - 4.0
            s_vals = list(_constant_speed_arclengths(s0, v, t_obs))
            cur, speed = s_vals[-1], v
            dist_left = stop_at - cur
            decel = speed * speed / (2 * max(dist_left, 0.5))
            for _ in range(t_pred):
                speed = max(speed - decel * TIMESTEP_S, 0.0)
                cur = min(cur + speed * TIMESTEP_S, stop_at)
                s_vals.append(cur)
            pts = _jitter_lateral(route, np.array(s_vals), rng, sigma=0.08)
            lead_pt = _jitter_lateral(route, [s_lead], rng, sigma=0.05)[0]
            actors["lead"] = Actor(observed=np.tile(lead_pt, (t_obs, 1)))
        else:
            # free-flowing lead at matching speed; focal keeps its speed
            s_vals = _constant_speed_arclengths(s0, v, total)
            pts = _jitter_lateral(route, s_vals, rng, sigma=0.08)
            lead_s0 = s0 + lead_gap
            lead_vals = _constant_speed_arclengths(lead_s0, v * float(rng.uniform(1.0, 1.1)), t_obs)
            actors["lead"] = Actor(observed=_jitter_lateral(route, lead_vals, rng, sigma=0.08))
        actors["focal"] = Actor(observed=pts[:t_obs], future=pts[t_obs:])
    else:
        raise InvalidMix(f"unknown kind {kind}")

    return Scenario(
        id=f"scn_{params.seed}_{index:05d}",
        map_id=map_id,
        focal_id="focal",
        actors=actors,
        meta=meta,
    )


def generate_dataset(params: GeneratorParams, out_dir) -> dict:
    """Write maps, scenarios, and a manifest under out_dir; returns the
    manifest. Deterministic per (params, seed)."""
    params.validate()
    out = Path(out_dir)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    (out / "scenarios").mkdir(parents=True, exist_ok=True)
    maps = map_templates()
    for name, graph in maps.items():
        save_map(graph, out / "maps" / f"{name}.json")
    kinds = _kind_sequence(params)
    records = []
    for i, kind in enumerate(kinds):
        scn = _generate_one(i, kind, params, maps)
        rel = f"scenarios/{scn.id}.json"
        save_scenario(scn, out / rel)
        split = "train" if i % 10 < 8 else ("val" if i % 10 == 8 else "test")
        records.append({"id": scn.id, "path": rel, "split": split, "kind": kind})
    manifest = {
        "seed": params.seed,
        "params": {
            "n_scenarios": params.n_scenarios,
            "mix": {k: params.mix.get(k, 0.0) for k in SCENARIO_KINDS},
            "t_obs": params.t_obs,
            "t_pred": params.t_pred,
        },
        "maps": {name: f"maps/{name}.json" for name in maps},
        "scenarios": records,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def load_manifest(data_dir) -> dict:
    with open(Path(data_dir) / "manifest.json") as f:
        return json.load(f)


def load_split(data_dir, split: str | None = None) -> list[Scenario]:
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    out = []
    for rec in manifest["scenarios"]:
        if split is None or rec["split"] == split:
            out.append(load_scenario(data_dir / rec["path"]))
    return out


def load_maps(data_dir) -> dict[str, LaneGraph]:
    from .lane_graph import load_map

    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    return {name: load_map(data_dir / rel) for name, rel in manifest["maps"].items()}
