"""Track geometry: mesh boundary extraction, centerline derivation, and the
on-track predicates the simulator and reward depend on.

The pipeline turns a triangle mesh of the drivable surface into a closed
centerline polyline with per-waypoint widths:

1. border edges = undirected edges incident to exactly one triangle,
2. border vertices grouped into an inner and an outer closed loop,
3. minimum-cost bipartite matching of inner to outer vertices by Euclidean
   distance (exact rectangular assignment),
4. waypoints = midpoints of matched vertex pairs, widths = pair distances.

Everything here is immutable after construction and safe to share between
threads. Point projection onto the centerline is the hot kernel (it runs on
every simulator step) and has numba and numpy builds, selected in _accel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from dracer._accel import USE_NUMBA, njit
from dracer.errors import TrackGeometryError

__all__ = [
    "TrackMesh",
    "BoundaryLoop",
    "CenterLine",
    "TrackPose",
    "ProgressTracker",
    "extract_border_edges",
    "group_boundaries",
    "match_boundaries",
    "compute_centerline",
    "centerline_from_mesh",
    "project_to_centerline",
    "width_at_pose",
    "is_off_track",
    "unwrap_arclength_delta",
    "progress_fraction",
    "generate_track",
    "oval_polyline",
    "circle_polyline",
    "load_track_file",
    "save_track_file",
    "save_centerline_csv",
]

DUPLICATE_VERTEX_TOL = 1e-9


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrackMesh:
    """Planar triangle mesh of the drivable track surface."""

    vertices: np.ndarray  # (n, 2) float64, meters
    triangles: np.ndarray  # (m, 3) int64 vertex indices
    name: str = "track"

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        tris = np.asarray(self.triangles, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise TrackGeometryError("vertices must be an (n, 2) array")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise TrackGeometryError("triangles must be an (m, 3) array")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise TrackGeometryError("triangle index out of range")
        _check_no_duplicate_vertices(verts)
        _check_no_degenerate_triangles(verts, tris)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)


@dataclass(frozen=True)
class BoundaryLoop:
    """Closed loop of border vertex indices, counterclockwise."""

    vertex_indices: tuple  # cyclic order
    kind: str  # "inner" or "outer"

    def __len__(self):
        return len(self.vertex_indices)


@dataclass(frozen=True)
class TrackPose:
    """Projection of a point onto the centerline."""

    nearest_segment_index: int
    lateral_deviation: float  # meters, unsigned
    arclength_s: float  # meters from waypoint 0
    heading_of_segment: float  # radians


@dataclass(frozen=True)
class CenterLine:
    """Closed waypoint polyline with per-waypoint track widths.

    Derived arrays (segment vectors, headings, curvatures) are precomputed so
    the per-step projection kernel only does arithmetic.
    """

    waypoints: np.ndarray  # (n, 2) float64
    widths: np.ndarray  # (n,) float64
    cumulative_arclength: np.ndarray = field(init=False)
    lap_length: float = field(init=False)
    closed: bool = True

    # kernel inputs, contiguous 1-D
    _seg_ax: np.ndarray = field(init=False, repr=False)
    _seg_ay: np.ndarray = field(init=False, repr=False)
    _seg_dx: np.ndarray = field(init=False, repr=False)
    _seg_dy: np.ndarray = field(init=False, repr=False)
    _seg_len: np.ndarray = field(init=False, repr=False)
    _seg_len2: np.ndarray = field(init=False, repr=False)
    _seg_heading: np.ndarray = field(init=False, repr=False)
    _curvature: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        wp = np.ascontiguousarray(np.asarray(self.waypoints, dtype=np.float64))
        w = np.asarray(self.widths, dtype=np.float64)
        if wp.ndim != 2 or wp.shape[1] != 2 or len(wp) < 3:
            raise TrackGeometryError("need at least 3 waypoints for a closed centerline")
        if len(w) != len(wp):
            raise TrackGeometryError("widths length must match waypoint count")
        if np.any(w <= 0):
            raise TrackGeometryError("track widths must be positive")

        d = np.roll(wp, -1, axis=0) - wp  # segment i: wp[i] -> wp[i+1 mod n]
        seg_len = np.hypot(d[:, 0], d[:, 1])
        if np.any(seg_len <= 0):
            raise TrackGeometryError("degenerate (zero-length) centerline segment")
        cum = np.concatenate(([0.0], np.cumsum(seg_len[:-1])))
        if not np.all(np.diff(cum) > 0):
            raise TrackGeometryError("cumulative arclength must be strictly increasing")

        # discrete curvature at waypoint i: turn angle over mean adjacent length
        heading = np.arctan2(d[:, 1], d[:, 0])
        turn = _wrap_angle(heading - np.roll(heading, 1))
        mean_len = 0.5 * (seg_len + np.roll(seg_len, 1))
        curvature = turn / mean_len

        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "widths", w)
        object.__setattr__(self, "cumulative_arclength", cum)
        object.__setattr__(self, "lap_length", float(seg_len.sum()))
        object.__setattr__(self, "_seg_ax", np.ascontiguousarray(wp[:, 0]))
        object.__setattr__(self, "_seg_ay", np.ascontiguousarray(wp[:, 1]))
        object.__setattr__(self, "_seg_dx", np.ascontiguousarray(d[:, 0]))
        object.__setattr__(self, "_seg_dy", np.ascontiguousarray(d[:, 1]))
        object.__setattr__(self, "_seg_len", seg_len)
        object.__setattr__(self, "_seg_len2", seg_len**2)
        object.__setattr__(self, "_seg_heading", heading)
        object.__setattr__(self, "_curvature", curvature)

    def __len__(self):
        return len(self.waypoints)

    def curvature_at_arclength(self, s: float) -> float:
        """Signed curvature (1/m) at the waypoint nearest to arclength ``s``."""
        s = s % self.lap_length
        idx = int(np.searchsorted(self.cumulative_arclength, s, side="right")) - 1
        # pick the closer endpoint of the containing segment
        s0 = self.cumulative_arclength[idx]
        if s - s0 > 0.5 * self._seg_len[idx]:
            idx = (idx + 1) % len(self)
        return float(self._curvature[idx])


def _wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def _check_no_duplicate_vertices(verts: np.ndarray) -> None:
    if len(verts) < 2:
        return
    order = np.lexsort((verts[:, 1], verts[:, 0]))
    sv = verts[order]
    close = np.all(np.abs(np.diff(sv, axis=0)) <= DUPLICATE_VERTEX_TOL, axis=1)
    if np.any(close):
        i = int(np.argmax(close))
        raise TrackGeometryError(
            f"duplicate vertices {order[i]} and {order[i + 1]} within {DUPLICATE_VERTEX_TOL} m"
        )


def _check_no_degenerate_triangles(verts: np.ndarray, tris: np.ndarray) -> None:
    if not len(tris):
        return
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    if np.any(area2 == 0.0):
        raise TrackGeometryError(f"degenerate triangle {int(np.argmax(area2 == 0.0))}")


# ---------------------------------------------------------------------------
# Boundary extraction and grouping
# ---------------------------------------------------------------------------


def extract_border_edges(mesh: TrackMesh) -> set:
    """Undirected edges that belong to exactly one triangle.

    Edges are canonicalized as (low index, high index). An edge shared by
    more than two triangles makes the mesh non-manifold and is rejected.
    """
    counts: dict = {}
    for tri in mesh.triangles:
        i, j, k = int(tri[0]), int(tri[1]), int(tri[2])
        for a, b in ((i, j), (j, k), (i, k)):
            e = (a, b) if a < b else (b, a)
            counts[e] = counts.get(e, 0) + 1
    for e, c in counts.items():
        if c > 2:
            raise TrackGeometryError(f"non-manifold edge {e} shared by {c} triangles")
    return {e for e, c in counts.items() if c == 1}


def group_boundaries(border_edges: set, mesh: TrackMesh) -> tuple:
    """Group border edges into (inner, outer) counterclockwise loops.

    The loop enclosing the smaller polygon area is the inner one. Anything
    other than exactly two disjoint closed loops is a malformed track.
    """
    adjacency: dict = {}
    for a, b in sorted(border_edges):  # sorted for run-to-run determinism
        adjacency.setdefault(a, []).append(b)
        adjacency.setdefault(b, []).append(a)
    for v, nbrs in adjacency.items():
        if len(nbrs) != 2:
            raise TrackGeometryError(
                f"border vertex {v} has {len(nbrs)} border edges; loops must be closed chains"
            )

    loops = []
    seen: set = set()
    for start in sorted(adjacency):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nxt = [n for n in adjacency[cur] if n != prev]
            if not nxt:  # two-vertex chain: both neighbors equal prev
                raise TrackGeometryError("open border chain; track boundary is not closed")
            step = nxt[0]
            if step == start:
                break
            if step in seen:
                raise TrackGeometryError("border loops intersect; malformed track")
            loop.append(step)
            seen.add(step)
            prev, cur = cur, step
        if len(loop) < 3:
            raise TrackGeometryError("boundary loop with fewer than 3 vertices")
        loops.append(loop)

    if len(loops) != 2:
        raise TrackGeometryError(f"expected 2 boundary loops, found {len(loops)}")

    oriented = []
    for loop in loops:
        pts = mesh.vertices[np.array(loop)]
        area = _signed_area(pts)
        if area < 0:
            loop = [loop[0]] + loop[:0:-1]  # reverse, keep start vertex
            area = -area
        oriented.append((abs(area), tuple(loop)))

    oriented.sort(key=lambda t: t[0])
    inner = BoundaryLoop(vertex_indices=oriented[0][1], kind="inner")
    outer = BoundaryLoop(vertex_indices=oriented[1][1], kind="outer")
    return inner, outer


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


# ---------------------------------------------------------------------------
# Boundary matching and centerline construction
# ---------------------------------------------------------------------------


def match_boundaries(inner: BoundaryLoop, outer: BoundaryLoop, mesh: TrackMesh) -> list:
    """Minimum total Euclidean distance assignment between the two loops.

    Rectangular: every vertex of the smaller loop is matched exactly once.
    Returns (inner_vertex, outer_vertex) index pairs.
    """
    if not len(inner) or not len(outer):
        raise TrackGeometryError("cannot match empty boundary loops")
    ii = np.array(inner.vertex_indices)
    oo = np.array(outer.vertex_indices)
    pi = mesh.vertices[ii]
    po = mesh.vertices[oo]
    cost = np.hypot(
        pi[:, 0:1] - po[None, :, 0], pi[:, 1:2] - po[None, :, 1]
    )
    if len(ii) <= len(oo):
        rows, cols = linear_sum_assignment(cost)
        return [(int(ii[r]), int(oo[c])) for r, c in zip(rows, cols)]
    rows, cols = linear_sum_assignment(cost.T)
    return [(int(ii[c]), int(oo[r])) for r, c in zip(rows, cols)]


def compute_centerline(
    pairs: list, inner: BoundaryLoop, outer: BoundaryLoop, mesh: TrackMesh
) -> CenterLine:
    """Waypoints = midpoints of matched pairs, widths = pair distances.

    Waypoints follow the traversal order of the outer loop, so the centerline
    inherits its counterclockwise orientation.
    """
    if len(pairs) < 3:
        raise TrackGeometryError("fewer than 3 matched pairs; cannot build a centerline")
    outer_pos = {v: i for i, v in enumerate(outer.vertex_indices)}
    ordered = sorted(pairs, key=lambda p: outer_pos[p[1]])
    a = mesh.vertices[np.array([p[0] for p in ordered])]
    b = mesh.vertices[np.array([p[1] for p in ordered])]
    waypoints = 0.5 * (a + b)
    widths = np.hypot(b[:, 0] - a[:, 0], b[:, 1] - a[:, 1])
    return CenterLine(waypoints=waypoints, widths=widths)


def centerline_from_mesh(mesh: TrackMesh) -> CenterLine:
    """Full pipeline: border edges -> loops -> matching -> centerline."""
    edges = extract_border_edges(mesh)
    inner, outer = group_boundaries(edges, mesh)
    pairs = match_boundaries(inner, outer, mesh)
    return compute_centerline(pairs, inner, outer, mesh)


# ---------------------------------------------------------------------------
# Projection kernel (hot path; numba + numpy builds)
# ---------------------------------------------------------------------------


def _project_point_numpy(px, py, ax, ay, dx, dy, len2):
    t = ((px - ax) * dx + (py - ay) * dy) / len2
    t = np.clip(t, 0.0, 1.0)
    cx = ax + t * dx
    cy = ay + t * dy
    d2 = (px - cx) ** 2 + (py - cy) ** 2
    i = int(np.argmin(d2))
    return i, float(t[i]), float(d2[i])


def _project_point_loop(px, py, ax, ay, dx, dy, len2):
    best_d2 = np.inf
    best_i = 0
    best_t = 0.0
    for i in range(ax.shape[0]):
        t = ((px - ax[i]) * dx[i] + (py - ay[i]) * dy[i]) / len2[i]
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        cx = ax[i] + t * dx[i]
        cy = ay[i] + t * dy[i]
        d2 = (px - cx) ** 2 + (py - cy) ** 2
        if d2 < best_d2:
            best_d2 = d2
            best_i = i
            best_t = t
    return best_i, best_t, best_d2


if USE_NUMBA:
    _project_point = njit(_project_point_loop)
else:
    _project_point = _project_point_numpy


def _project_raw(point, cl: CenterLine):
    """Return (segment index, t along segment, deviation, side sign).

    Side is +1 left of segment direction, -1 right, 0 on the line.
    """
    px, py = float(point[0]), float(point[1])
    i, t, d2 = _project_point(
        px, py, cl._seg_ax, cl._seg_ay, cl._seg_dx, cl._seg_dy, cl._seg_len2
    )
    cross = cl._seg_dx[i] * (py - cl._seg_ay[i]) - cl._seg_dy[i] * (px - cl._seg_ax[i])
    side = 0.0 if cross == 0.0 else math.copysign(1.0, cross)
    return int(i), float(t), math.sqrt(d2), side


def project_to_centerline(point, cl: CenterLine) -> TrackPose:
    """Closest point on the closed centerline polyline.

    Ties between equally distant segments resolve to the lower index.
    """
    i, t, dev, _ = _project_raw(point, cl)
    s = float(cl.cumulative_arclength[i] + t * cl._seg_len[i])
    if s >= cl.lap_length:
        s -= cl.lap_length
    return TrackPose(
        nearest_segment_index=i,
        lateral_deviation=dev,
        arclength_s=s,
        heading_of_segment=float(cl._seg_heading[i]),
    )


def width_at_pose(pose: TrackPose, cl: CenterLine) -> float:
    """Track width at the pose, linearly interpolated between waypoints."""
    i = pose.nearest_segment_index
    seg_start = cl.cumulative_arclength[i]
    t = (pose.arclength_s - seg_start) / cl._seg_len[i]
    t = min(max(t, 0.0), 1.0)
    j = (i + 1) % len(cl)
    return float(cl.widths[i] * (1.0 - t) + cl.widths[j] * t)


def is_off_track(pose: TrackPose, cl: CenterLine) -> bool:
    """True iff the deviation exceeds half the local width (strictly)."""
    return pose.lateral_deviation > 0.5 * width_at_pose(pose, cl)


# ---------------------------------------------------------------------------
# Progress along the centerline
# ---------------------------------------------------------------------------


def unwrap_arclength_delta(s_prev: float, s_now: float, lap_length: float) -> float:
    """Signed arclength step in (-lap/2, lap/2], assuming |true step| < lap/2."""
    d = (s_now - s_prev) % lap_length
    if d > 0.5 * lap_length:
        d -= lap_length
    return d


def progress_fraction(s_start: float, s_now: float, direction: str, cl: CenterLine) -> float:
    """Single-step progress fraction from one unwrapped arclength move."""
    d = unwrap_arclength_delta(s_start, s_now, cl.lap_length)
    if direction == "reverse":
        d = -d
    return min(max(d / cl.lap_length, 0.0), 1.0)


class ProgressTracker:
    """Accumulates signed travel along the spline over an episode.

    Each update unwraps the arclength step (valid while per-step moves stay
    under half a lap) and adds it with the episode direction's sign. The
    reported fraction is clamped to [0, 1]; 1.0 means the lap closed.
    """

    def __init__(self, s_start: float, direction: str, lap_length: float):
        if direction not in ("forward", "reverse"):
            raise ValueError(f"unknown direction {direction!r}")
        self.lap_length = float(lap_length)
        self.direction = direction
        self._s_prev = float(s_start)
        self._traveled = 0.0

    @property
    def fraction(self) -> float:
        return min(max(self._traveled / self.lap_length, 0.0), 1.0)

    def update(self, s_now: float) -> float:
        d = unwrap_arclength_delta(self._s_prev, s_now, self.lap_length)
        if self.direction == "reverse":
            d = -d
        self._traveled += d
        self._s_prev = float(s_now)
        return self.fraction


# ---------------------------------------------------------------------------
# Test-track fabrication
# ---------------------------------------------------------------------------


def circle_polyline(radius: float, samples: int = 64) -> np.ndarray:
    th = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    return np.column_stack((radius * np.cos(th), radius * np.sin(th)))


def oval_polyline(lap_length: float, samples: int = 64, aspect: float = 2.0) -> np.ndarray:
    """Stadium oval: two straights of length ``aspect * r`` and two semicircles.

    ``lap_length`` is the centerline perimeter: 2*aspect*r + 2*pi*r.
    """
    r = lap_length / (2.0 * aspect + 2.0 * np.pi)
    a = aspect * r
    s = np.linspace(0.0, lap_length, samples, endpoint=False)
    pts = np.empty((samples, 2))
    for k, sk in enumerate(s):
        if sk < a:  # bottom straight, heading +x
            pts[k] = (-a / 2 + sk, -r)
        elif sk < a + np.pi * r:  # right semicircle
            th = (sk - a) / r
            pts[k] = (a / 2 + r * np.sin(th), -r * np.cos(th))
        elif sk < 2 * a + np.pi * r:  # top straight, heading -x
            pts[k] = (a / 2 - (sk - a - np.pi * r), r)
        else:  # left semicircle
            th = (sk - 2 * a - np.pi * r) / r
            pts[k] = (-a / 2 - r * np.sin(th), r * np.cos(th))
    return pts


def figure_eight_polyline(radius: float = 2.0, samples: int = 64) -> np.ndarray:
    """Lemniscate-style self-crossing loop; useful as an invalid-input fixture."""
    th = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    return np.column_stack((radius * np.sin(th), radius * np.sin(th) * np.cos(th)))


def _segments_properly_intersect(p1, p2, p3, p4) -> bool:
    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    d1 = cross(p3, p4, p1)
    d2 = cross(p3, p4, p2)
    d3 = cross(p1, p2, p3)
    d4 = cross(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != d2 and d3 != d4


def _ring_self_intersects(ring: np.ndarray) -> bool:
    n = len(ring)
    for i in range(n):
        a1, a2 = ring[i], ring[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # adjacent through the wrap
            b1, b2 = ring[j], ring[(j + 1) % n]
            if _segments_properly_intersect(a1, a2, b1, b2):
                return True
    return False


def _rings_intersect(ra: np.ndarray, rb: np.ndarray) -> bool:
    na, nb = len(ra), len(rb)
    for i in range(na):
        a1, a2 = ra[i], ra[(i + 1) % na]
        for j in range(nb):
            b1, b2 = rb[j], rb[(j + 1) % nb]
            if _segments_properly_intersect(a1, a2, b1, b2):
                return True
    return False


def generate_track(
    centerline_points: np.ndarray,
    half_width: float,
    vertices_per_side: int = 64,
    name: str = "generated",
) -> TrackMesh:
    """Triangulated ring between the two half-width offsets of a closed polyline.

    The polyline is resampled to ``vertices_per_side`` equally spaced points
    first. Offsets that self-intersect (too much curvature for the width, or
    a self-crossing centerline) are rejected.
    """
    pts = np.asarray(centerline_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise TrackGeometryError("centerline polyline needs at least 3 points")
    if half_width <= 0:
        raise TrackGeometryError("half-width must be positive")
    if vertices_per_side < 3:
        raise TrackGeometryError("need at least 3 vertices per side")

    if _signed_area(pts) < 0:
        pts = pts[::-1].copy()
    pts = _resample_closed(pts, vertices_per_side)

    # unit normals to the left of travel = toward the interior for CCW loops
    fwd = np.roll(pts, -1, axis=0) - np.roll(pts, 1, axis=0)
    norm = np.hypot(fwd[:, 0], fwd[:, 1])
    if np.any(norm == 0):
        raise TrackGeometryError("coincident points on the centerline polyline")
    nx, ny = -fwd[:, 1] / norm, fwd[:, 0] / norm
    normal = np.column_stack((nx, ny))

    inner_ring = pts + half_width * normal
    outer_ring = pts - half_width * normal

    # an offset is only valid while |curvature| * half_width < 1; past that the
    # offset tangent reverses against the path and the surface folds over
    path_tang = np.roll(pts, -1, axis=0) - pts
    for ring in (inner_ring, outer_ring):
        ring_tang = np.roll(ring, -1, axis=0) - ring
        if np.any(np.einsum("ij,ij->i", ring_tang, path_tang) <= 0.0):
            raise TrackGeometryError(
                "curvature exceeds the half-width limit; offset boundary folds over"
            )

    if _ring_self_intersects(inner_ring) or _ring_self_intersects(outer_ring):
        raise TrackGeometryError("offset curve self-intersects; narrow the track or smooth the path")
    if _rings_intersect(inner_ring, outer_ring):
        raise TrackGeometryError("inner and outer offsets intersect; track geometry invalid")
    inner_area = _signed_area(inner_ring)
    if inner_area <= 0 or inner_area >= _signed_area(outer_ring):
        raise TrackGeometryError("offset orientation flipped; curvature exceeds half-width limit")

    n = vertices_per_side
    vertices = np.vstack((inner_ring, outer_ring))
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris.append((i, n + i, n + j))
        tris.append((i, n + j, j))
    return TrackMesh(vertices=vertices, triangles=np.array(tris, dtype=np.int64), name=name)


def _resample_closed(pts: np.ndarray, count: int) -> np.ndarray:
    d = np.roll(pts, -1, axis=0) - pts
    seg = np.hypot(d[:, 0], d[:, 1])
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    total = cum[-1]
    targets = np.linspace(0.0, total, count, endpoint=False)
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(pts) - 1)
    t = (targets - cum[idx]) / seg[idx]
    nxt = (idx + 1) % len(pts)
    return pts[idx] + t[:, None] * (pts[nxt] - pts[idx])


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def save_track_file(mesh: TrackMesh, path) -> None:
    """Write the `trackmesh v1` text format: one vertex or triangle per line."""
    lines = [f"trackmesh v1 {mesh.name}"]
    for x, y in mesh.vertices:
        lines.append(f"v {float(x)!r} {float(y)!r}")  # repr round-trips exactly
    for i, j, k in mesh.triangles:
        lines.append(f"t {int(i)} {int(j)} {int(k)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_track_file(path) -> TrackMesh:
    verts = []
    tris = []
    name = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if lineno == 1 or name is None:
                if parts[:2] != ["trackmesh", "v1"] or len(parts) != 3:
                    raise TrackGeometryError(f"{path}: bad header {line!r}")
                name = parts[2]
                continue
            if parts[0] == "v" and len(parts) == 3:
                verts.append((float(parts[1]), float(parts[2])))
            elif parts[0] == "t" and len(parts) == 4:
                tris.append((int(parts[1]), int(parts[2]), int(parts[3])))
            else:
                raise TrackGeometryError(f"{path}:{lineno}: unrecognized record {line!r}")
    if name is None:
        raise TrackGeometryError(f"{path}: empty track file")
    return TrackMesh(
        vertices=np.array(verts, dtype=np.float64).reshape(-1, 2),
        triangles=np.array(tris, dtype=np.int64).reshape(-1, 3),
        name=name,
    )


def save_centerline_csv(cl: CenterLine, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("index,x,y,width,cum_s\n")
        for i in range(len(cl)):
            x, y = cl.waypoints[i]
            fh.write(
                f"{i},{float(x)!r},{float(y)!r},"
                f"{float(cl.widths[i])!r},{float(cl.cumulative_arclength[i])!r}\n"
            )
