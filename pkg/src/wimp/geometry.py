"""Planar geometry primitives: normalization frames, curvilinear projection,
point-in-polygon tests, and polyline arithmetic.

All coordinates are meters in 64-bit floats. Points are (2,) arrays, point
sets are (N, 2) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateHeading(ValueError):
    """First point and heading point coincide; no heading is defined."""


class InvalidPolygon(ValueError):
    """Polygon ring has fewer than 3 vertices."""


def as_points(pts) -> np.ndarray:
    """Coerce to a float64 (N, 2) array and reject non-finite values."""
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (N, 2) point array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points contain NaN or Inf")
    return arr


class Polyline:
    """An ordered polyline of >= 2 distinct consecutive points with cached
    cumulative arclength (first entry 0, strictly increasing)."""

    __slots__ = ("points", "cumulative_arclength")

    def __init__(self, points):
        pts = as_points(points)
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 points")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg == 0.0):
            raise ValueError("consecutive polyline points must be distinct")
        self.points = pts
        self.cumulative_arclength = np.concatenate(([0.0], np.cumsum(seg)))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        return float(self.cumulative_arclength[-1])

    def point_at_arclength(self, s: float) -> np.ndarray:
        """Point at arclength s, clamped to [0, length]."""
        cum = self.cumulative_arclength
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(self.points) - 2)
        seg_len = cum[i + 1] - cum[i]
        t = (s - cum[i]) / seg_len
        return self.points[i] + t * (self.points[i + 1] - self.points[i])


@dataclass(frozen=True)
class AffineFrame:
    """Rigid 2D transform: forward maps world points into the normalized
    frame via R(-angle) @ (p - translation)."""

    rotation_angle: float
    translation: np.ndarray  # (2,)

    def apply(self, pts) -> np.ndarray:
        pts = as_points(pts)
        c, s = np.cos(self.rotation_angle), np.sin(self.rotation_angle)
        rot = np.array([[c, s], [-s, c]])
        return (pts - self.translation) @ rot.T

    def invert(self, pts) -> np.ndarray:
        pts = as_points(pts)
        c, s = np.cos(self.rotation_angle), np.sin(self.rotation_angle)
        rot = np.array([[c, -s], [s, c]])
        return pts @ rot.T + self.translation


def build_normalization_frame(observed, heading_index: int | None = None) -> AffineFrame:
    """Frame aligning the +x axis with the heading from point 0 to
    point[heading_index] and placing point 0 at the origin.

    Raises DegenerateHeading when the two points coincide; callers wanting
    the stationary-actor fallback should catch it and use identity rotation.
    """
    pts = as_points(observed)
    if heading_index is None:
        heading_index = len(pts) - 1
    d = pts[heading_index] - pts[0]
    if d[0] == 0.0 and d[1] == 0.0:
        raise DegenerateHeading("heading endpoints coincide")
    return AffineFrame(float(np.arctan2(d[1], d[0])), pts[0].copy())


def normalization_frame_or_identity(observed, heading_index: int | None = None) -> AffineFrame:
    """build_normalization_frame with the stationary fallback: identity
    rotation, translation of the first point to the origin."""
    pts = as_points(observed)
    try:
        return build_normalization_frame(pts, heading_index)
    except DegenerateHeading:
        return AffineFrame(0.0, pts[0].copy())


def apply_frame(frame: AffineFrame, pts) -> np.ndarray:
    return frame.apply(pts)


def project_to_curvilinear(ref: Polyline, p) -> tuple[float, float]:
    """Project p onto ref, returning (tangential, normal).

    tangential is arclength of the closest point in [0, length];
    normal is the signed distance to that closest point, left of travel
    positive (equal to the perpendicular offset for interior projections).
    Ties between equidistant segments resolve to the lower arclength.
    """
    p = np.asarray(p, dtype=np.float64).reshape(2)
    a = ref.points[:-1]
    b = ref.points[1:]
    ab = b - a
    seg_len2 = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / seg_len2, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d2 = np.einsum("ij,ij->i", p - proj, p - proj)
    i = int(np.argmin(d2))  # argmin takes the first minimum: lower arclength
    seg_len = np.sqrt(seg_len2[i])
    tangential = float(ref.cumulative_arclength[i] + t[i] * seg_len)
    dirv = ab[i] / seg_len
    off = p - proj[i]
    side = dirv[0] * off[1] - dirv[1] * off[0]
    normal = float(np.copysign(np.sqrt(d2[i]), side)) if side != 0.0 else float(np.sqrt(d2[i]) * 0.0)
    return tangential, normal


def point_in_polygon(ring, p) -> bool:
    """Even-odd ray-casting test; boundary points count as inside."""
    ring = as_points(ring)
    if len(ring) >= 2 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        raise InvalidPolygon("polygon ring needs at least 3 vertices")
    p = np.asarray(p, dtype=np.float64).reshape(2)
    x, y = p
    n = len(ring)
    inside = False
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        # boundary check: p on segment
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if cross == 0.0 and min(x1, x2) <= x <= max(x1, x2) and min(y1, y2) <= y <= max(y1, y2):
            return True
        if (y1 > y) != (y2 > y):
            x_int = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_int:
                inside = not inside
    return inside


def points_in_polygon(ring, pts) -> np.ndarray:
    """Vectorized-over-points even-odd test (boundary inclusive)."""
    pts = as_points(pts)
    return np.array([point_in_polygon(ring, p) for p in pts], dtype=bool)


def trajectory_length(pts) -> float:
    """Sum of consecutive segment lengths."""
    pts = as_points(pts)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
