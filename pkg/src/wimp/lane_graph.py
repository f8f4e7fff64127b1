"""Directed lane-segment graph and the ranked reference-polyline proposal
pipeline (candidate search, graph traversal, overlap removal, PIP and
alignment scoring, alternating-merge selection)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Polyline, point_in_polygon, project_to_curvilinear, trajectory_length

BASE_SEARCH_RADIUS_M = 2.5
RADIUS_GROWTH_FACTOR = 2.0
MAX_RADIUS_DOUBLINGS = 10
OVERLAP_POINT_TOL_M = 0.5
OVERLAP_FRACTION = 0.9
MAX_CANDIDATES_PER_SEED = 64


class EmptyGraph(ValueError):
    pass


class EmptyResult(ValueError):
    """Radius doubling exhausted without finding a candidate lane."""


class UnknownSeed(KeyError):
    pass


class MapFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LaneSegment:
    id: str
    centerline: Polyline
    polygon: np.ndarray  # closed ring (V, 2)
    successors: tuple[str, ...]
    predecessors: tuple[str, ...]


class LaneGraph:
    """Immutable directed graph of lane segments with symmetric
    successor/predecessor edges."""

    def __init__(self, segments: list[LaneSegment]):
        self.segments: dict[str, LaneSegment] = {s.id: s for s in segments}
        if len(self.segments) != len(segments):
            raise MapFormatError("duplicate segment ids")
        for seg in segments:
            for sid in seg.successors:
                if sid not in self.segments:
                    raise MapFormatError(f"segment {seg.id} references unknown successor {sid}")
                if seg.id not in self.segments[sid].predecessors:
                    raise MapFormatError(f"edge {seg.id}->{sid} lacks the symmetric predecessor entry")
            for pid in seg.predecessors:
                if pid not in self.segments:
                    raise MapFormatError(f"segment {seg.id} references unknown predecessor {pid}")
                if seg.id not in self.segments[pid].successors:
                    raise MapFormatError(f"edge {pid}->{seg.id} lacks the symmetric successor entry")

    def __contains__(self, sid: str) -> bool:
        return sid in self.segments

    def to_dict(self) -> dict:
        return {
            "segments": [
                {
                    "id": s.id,
                    "centerline": s.centerline.points.tolist(),
                    "polygon": s.polygon.tolist(),
                    "successors": list(s.successors),
                    "predecessors": list(s.predecessors),
                }
                for s in self.segments.values()
            ]
        }

    @staticmethod
    def from_dict(data: dict) -> "LaneGraph":
        if "segments" not in data or not isinstance(data["segments"], list):
            raise MapFormatError("/segments: missing or not a list")
        segs = []
        for i, rec in enumerate(data["segments"]):
            for key in ("id", "centerline", "polygon"):
                if key not in rec:
                    raise MapFormatError(f"/segments/{i}/{key}: missing")
            segs.append(
                LaneSegment(
                    id=str(rec["id"]),
                    centerline=Polyline(rec["centerline"]),
                    polygon=np.asarray(rec["polygon"], dtype=np.float64),
                    successors=tuple(rec.get("successors", [])),
                    predecessors=tuple(rec.get("predecessors", [])),
                )
            )
        return LaneGraph(segs)


def load_map(path) -> LaneGraph:
    with open(path) as f:
        return LaneGraph.from_dict(json.load(f))


def save_map(graph: LaneGraph, path) -> None:
    with open(path, "w") as f:
        json.dump(graph.to_dict(), f)


@dataclass
class CandidatePolyline:
    points: Polyline
    lane_ids: tuple[str, ...]
    pip_score: int = 0
    alignment_score: float = 0.0
    polygons: list = field(default_factory=list, repr=False)


def find_candidate_lanes(graph: LaneGraph, query: Polyline) -> set[str]:
    """Segments with a centerline point within the search radius of the
    query's last point; the radius starts at 2.5 m and doubles while empty."""
    if not graph.segments:
        raise EmptyGraph("lane graph has no segments")
    last = query.points[-1]
    radius = BASE_SEARCH_RADIUS_M
    for _ in range(MAX_RADIUS_DOUBLINGS + 1):
        found = {
            seg.id
            for seg in graph.segments.values()
            if np.min(np.linalg.norm(seg.centerline.points - last, axis=1)) <= radius
        }
        if found:
            return found
        radius *= RADIUS_GROWTH_FACTOR
    raise EmptyResult(f"no candidate lanes within {radius / RADIUS_GROWTH_FACTOR} m")


def _chains_from(graph: LaneGraph, seed: str, forward: bool, budget: float) -> list[tuple[str, ...]]:
    """Enumerate maximal successor (or predecessor) chains from seed,
    stopping a chain once its accumulated centerline length reaches budget.
    The seed itself is not part of the returned chains."""
    done: list[tuple[str, ...]] = []
    frontier: list[tuple[tuple[str, ...], float]] = [((), 0.0)]
    while frontier and len(done) + len(frontier) <= MAX_CANDIDATES_PER_SEED:
        chain, acc = frontier.pop(0)
        tail = chain[-1] if chain else seed
        nxt = graph.segments[tail].successors if forward else graph.segments[tail].predecessors
        # cycle guard: never revisit a segment already on the chain
        nxt = [sid for sid in nxt if sid not in chain and sid != seed]
        if acc >= budget or not nxt:
            done.append(chain)
            continue
        for sid in nxt:
            frontier.append((chain + (sid,), acc + graph.segments[sid].centerline.length))
    done.extend(chain for chain, _ in frontier)
    return done


def _concat_centerlines(graph: LaneGraph, lane_ids: tuple[str, ...]) -> Polyline:
    pts: list[np.ndarray] = []
    for sid in lane_ids:
        cl = graph.segments[sid].centerline.points
        if pts and np.linalg.norm(pts[-1] - cl[0]) < 1e-9:
            cl = cl[1:]  # drop duplicated junction point
        pts.extend(cl)
    return Polyline(np.array(pts))


def construct_polylines(graph: LaneGraph, seed: str, query_length: float) -> list[CandidatePolyline]:
    """Cross-product of predecessor chains and successor chains through the
    seed, each direction traversed until 2x the query length is covered."""
    if seed not in graph:
        raise UnknownSeed(seed)
    budget = 2.0 * query_length
    succ_chains = _chains_from(graph, seed, forward=True, budget=budget)
    pred_chains = _chains_from(graph, seed, forward=False, budget=budget)
    cands = []
    for pred in pred_chains:
        for succ in succ_chains:
            lane_ids = tuple(reversed(pred)) + (seed,) + succ
            cands.append(
                CandidatePolyline(
                    points=_concat_centerlines(graph, lane_ids),
                    lane_ids=lane_ids,
                    polygons=[graph.segments[sid].polygon for sid in lane_ids],
                )
            )
            if len(cands) >= MAX_CANDIDATES_PER_SEED:
                return cands
    return cands


def remove_overlapping(
    cands: list[CandidatePolyline],
    tol_m: float = OVERLAP_POINT_TOL_M,
    fraction: float = OVERLAP_FRACTION,
) -> list[CandidatePolyline]:
    """Scan in input order, dropping a candidate iff >= `fraction` of its
    points lie within `tol_m` of some already-retained candidate's points."""
    kept: list[CandidatePolyline] = []
    for cand in cands:
        pts = cand.points.points
        redundant = False
        for prev in kept:
            d = np.linalg.norm(pts[:, None, :] - prev.points.points[None, :, :], axis=2)
            near = np.min(d, axis=1) <= tol_m
            if np.mean(near) >= fraction:
                redundant = True
                break
        if not redundant:
            kept.append(cand)
    return kept


def pip_score(cand: CandidatePolyline, query: Polyline) -> int:
    """Count of query points inside the union of the candidate's lane polygons."""
    count = 0
    for p in query.points:
        if any(point_in_polygon(ring, p) for ring in cand.polygons):
            count += 1
    return count


def alignment_score(cand: CandidatePolyline, query: Polyline) -> float:
    """Maximum tangential coordinate reached by the query along the candidate."""
    return max(project_to_curvilinear(cand.points, p)[0] for p in query.points)


def rank_by_pip(cands: list[CandidatePolyline]) -> list[CandidatePolyline]:
    """Descending pip_score; ties break by lexicographic lane_ids."""
    return sorted(cands, key=lambda c: (-c.pip_score, c.lane_ids))


def rank_by_alignment(cands: list[CandidatePolyline]) -> list[CandidatePolyline]:
    """Descending alignment_score; ties break by lexicographic lane_ids."""
    return sorted(cands, key=lambda c: (-c.alignment_score, c.lane_ids))


def alternating_merge(
    by_pip: list[CandidatePolyline], by_align: list[CandidatePolyline], k: int
) -> list[CandidatePolyline]:
    """Take the best unused candidate from the PIP ranking, then from the
    alignment ranking, alternating, until k are selected or both exhausted.
    Duplicates are identified by lane_id sequence."""
    merged: list[CandidatePolyline] = []
    seen: set[tuple[str, ...]] = set()
    iters = [iter(by_pip), iter(by_align)]
    idx = 0
    exhausted = [False, False]
    while len(merged) < k and not all(exhausted):
        it = iters[idx]
        for cand in it:
            if cand.lane_ids not in seen:
                seen.add(cand.lane_ids)
                merged.append(cand)
                break
        else:
            exhausted[idx] = True
        idx = 1 - idx
    return merged


def propose_polylines(graph: LaneGraph, query: Polyline, k: int) -> list[CandidatePolyline]:
    """Full proposal pipeline: candidate lanes, traversal, overlap removal,
    dual scoring, and alternating-merge selection of the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    seeds = find_candidate_lanes(graph, query)
    qlen = trajectory_length(query.points)
    cands: list[CandidatePolyline] = []
    seen: set[tuple[str, ...]] = set()
    for seed in sorted(seeds):
        for cand in construct_polylines(graph, seed, qlen):
            if cand.lane_ids not in seen:
                seen.add(cand.lane_ids)
                cands.append(cand)
    cands = remove_overlapping(cands)
    for cand in cands:
        cand.pip_score = pip_score(cand, query)
        cand.alignment_score = alignment_score(cand, query)
    return alternating_merge(rank_by_pip(cands), rank_by_alignment(cands), k)


def oracle_polyline(graph: LaneGraph, full_trajectory: Polyline) -> CandidatePolyline:
    """Hindsight-optimal polyline: propose with the full observed+future
    trajectory as the query and keep the top-ranked result."""
    return propose_polylines(graph, full_trajectory, k=1)[0]
