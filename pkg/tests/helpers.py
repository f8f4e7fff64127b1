"""Shared test fixtures: the branching lane-graph map (one seed lane with
two successor chains and two predecessor chains) and small utilities."""

import numpy as np

from wimp.geometry import Polyline
from wimp.lane_graph import LaneGraph, LaneSegment


def _rect_polygon(p0, p1, half_width=2.0):
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    d = d / np.linalg.norm(d)
    n = np.array([-d[1], d[0]]) * half_width
    return np.array([p0 + n, p1 + n, p1 - n, p0 - n, p0 + n])


def _straight_segment(sid, p0, p1, successors=(), predecessors=(), n_pts=3):
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    ts = np.linspace(0.0, 1.0, n_pts)[:, None]
    pts = p0 + ts * (p1 - p0)
    return LaneSegment(
        id=sid,
        centerline=Polyline(pts),
        polygon=_rect_polygon(p0, p1),
        successors=tuple(successors),
        predecessors=tuple(predecessors),
    )


def branching_map() -> LaneGraph:
    """Seed lane A with successor chains A->B->C / A->D->E and predecessor
    chains F->G->A / H->I->A, so traversal from A yields exactly four
    candidate polylines."""
    segs = [
        _straight_segment("F", (-30, 0), (-20, 0), successors=["G"]),
        _straight_segment("G", (-20, 0), (-10, 0), successors=["A"], predecessors=["F"]),
        _straight_segment("H", (-30, -20), (-20, -10), successors=["I"]),
        _straight_segment("I", (-20, -10), (-10, 0), successors=["A"], predecessors=["H"]),
        _straight_segment("A", (-10, 0), (0, 0), successors=["B", "D"], predecessors=["G", "I"]),
        _straight_segment("B", (0, 0), (10, 0), successors=["C"], predecessors=["A"]),
        _straight_segment("C", (10, 0), (20, 0), predecessors=["B"]),
        _straight_segment("D", (0, 0), (7, 7), successors=["E"], predecessors=["A"]),
        _straight_segment("E", (7, 7), (14, 14), predecessors=["D"]),
    ]
    return LaneGraph(segs)


# lane_id sequences of the four expected candidates
L1 = ("F", "G", "A", "B", "C")
L2 = ("H", "I", "A", "B", "C")
L3 = ("F", "G", "A", "D", "E")
L4 = ("H", "I", "A", "D", "E")


def straight_query(n=20, x0=-10.5, x1=-1.0):
    """Query trajectory running straight along the F-G-A corridor."""
    xs = np.linspace(x0, x1, n)
    return Polyline(np.stack([xs, np.zeros(n)], axis=1))
