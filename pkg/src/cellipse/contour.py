"""Boundary tracing, polygon approximation and concave-point splitting.

A blob's outer boundary is traced clockwise into a closed chain of
pixels, simplified to a sparse vertex polygon within a distance
tolerance, and cut at concave vertices (plus two special insertion
rules) into per-cell segments.

Points are (x, y) with x growing rightwards and y downwards; all
coordinates are integers, so the geometric predicates below are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .segmentation import Blob

# Moore neighborhood in clockwise order (image coordinates, y down):
# N, NE, E, SE, S, SW, W, NW as (dy, dx).
_MOORE = (
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
)


@dataclass
class Contour:
    """Closed clockwise chain of boundary pixels, one (x, y) per row."""

    points: np.ndarray

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def degenerate(self) -> bool:
        """Too short to bound an area; skipped by the detection stages."""
        return len(self) < 3


@dataclass
class ApproxContour:
    """Sparse vertex subset of a contour, within dTh of the original.

    source_indices[t] is the position of vertex t in the source
    contour; the source point array is kept so segments can carry their
    dense boundary runs for fitting.
    """

    points: np.ndarray
    source_indices: np.ndarray
    source_points: np.ndarray

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class ConcavitySpec:
    theta_min: float = 35.0
    theta_max: float = 155.0
    nStep: int = 5
    dTh: float = 3.5

    def __post_init__(self):
        if not (0.0 < self.theta_min < self.theta_max < 180.0):
            raise ValueError("need 0 < theta_min < theta_max < 180")
        if self.nStep < 2:
            raise ValueError("nStep must be at least 2")
        if self.dTh <= 0.0:
            raise ValueError("dTh must be positive")


@dataclass
class ContourSegment:
    """Open chain between two split points (or the whole closed contour).

    points is the sparse vertex chain, the primary fitting payload;
    dense_points is the matching run of original boundary pixels, kept
    as the fallback payload and the segment's size measure.  Endpoint
    kinds are 'concave', 'boundary', 'synthetic' or 'none' (closed
    contour).
    """

    points: np.ndarray
    dense_points: np.ndarray
    start_kind: str = "concave"
    end_kind: str = "concave"
    closed: bool = False

    def __len__(self) -> int:
        return int(self.points.shape[0])


def trace_contour(blob: Blob) -> Contour:
    """Clockwise Moore-neighbor boundary trace of a blob.

    Starts at the blob's top-left pixel.  The walk terminates when a
    (pixel, backtrack-direction) state repeats; the emitted cycle is the
    complete outer boundary pass, so thin structures list their spine
    pixels once per side while end pixels appear once.  Interior holes
    are invisible to the trace.
    """
    mask, (ox, oy) = blob.local_mask(pad=1)
    rows, cols = np.nonzero(mask)
    start = (int(rows[0]), int(cols[0]))

    cur = start
    back = (start[0], start[1] - 1)  # scan order guarantees west is empty
    emitted: list = []
    seen: dict = {}
    cycle = None
    while True:
        back_idx = _MOORE.index((back[0] - cur[0], back[1] - cur[1]))
        state = (cur, back_idx)
        if state in seen:
            cycle = emitted[seen[state] :]
            break
        seen[state] = len(emitted)
        emitted.append(cur)
        nxt = None
        for step in range(1, 9):
            d = _MOORE[(back_idx + step) % 8]
            cand = (cur[0] + d[0], cur[1] + d[1])
            if mask[cand]:
                prev = _MOORE[(back_idx + step - 1) % 8]
                back = (cur[0] + prev[0], cur[1] + prev[1])
                nxt = cand
                break
        if nxt is None:
            cycle = emitted  # isolated pixel
            break
        cur = nxt

    if start in cycle:
        k = cycle.index(start)
        cycle = cycle[k:] + cycle[:k]
    points = np.array([(c + ox, r + oy) for r, c in cycle], dtype=np.int64)
    return Contour(points)


def _point_line_distances(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Perpendicular distances from pts to the infinite line through a, b."""
    ab = (b - a).astype(np.float64)
    norm = math.hypot(ab[0], ab[1])
    if norm == 0.0:
        return np.hypot(pts[:, 0] - a[0], pts[:, 1] - a[1])
    cross = (pts[:, 0] - a[0]) * ab[1] - (pts[:, 1] - a[1]) * ab[0]
    return np.abs(cross) / norm


def _point_segment_distances(
    pts: np.ndarray, a: np.ndarray, b: np.ndarray
) -> np.ndarray:
    """Distances from pts to the closed segment a-b."""
    p = pts.astype(np.float64)
    ab = (b - a).astype(np.float64)
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(p[:, 0] - a[0], p[:, 1] - a[1])
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(p[:, 0] - proj[:, 0], p[:, 1] - proj[:, 1])


def approximate_polygon(contour: Contour, spec: ConcavitySpec) -> ApproxContour:
    """Reduce a contour to dominant vertices within dTh of the original.

    Scan phase: a chord runs from the current anchor p_i to p_j, with j
    starting nStep ahead.  While no interior point deviates from the
    chord line by more than dTh, j advances; the first window with a
    violation emits its farthest point as a vertex, which becomes the
    new anchor.  The scan stops once the window wraps past the start.

    Split phase: the scan alone cannot bound the error of the chords it
    skipped over, so every emitted edge is checked against its covered
    run and recursively split at the farthest point until no original
    point is more than dTh from its covering edge.
    """
    pts = contour.points
    n = len(pts)
    if n <= 3:
        return ApproxContour(pts.copy(), np.arange(n, dtype=np.int64), pts)

    indices = [0]
    i = 0
    j = spec.nStep
    while j <= n:
        a = pts[i % n]
        b = pts[j % n]
        window = np.arange(i + 1, j)
        if window.size:
            d = _point_line_distances(pts[window % n], a, b)
            worst = int(d.argmax())
            if d[worst] > spec.dTh:
                t = int(window[worst])
                indices.append(t % n)
                i = t
                j = i + spec.nStep
                continue
        j += 1

    # Enforce the distance bound edge by edge (cyclically, covering the
    # closing edge back to vertex 0 as well).
    refined = [indices[0]]
    m = len(indices)
    for t in range(m):
        s = indices[t]
        e = indices[(t + 1) % m] if t + 1 < m else indices[0] + n
        stack = [(s, e)]
        inserted = []
        while stack:
            lo, hi = stack.pop()
            if hi - lo < 2:
                continue
            interior = np.arange(lo + 1, hi)
            d = _point_segment_distances(pts[interior % n], pts[lo % n], pts[hi % n])
            worst = int(d.argmax())
            if d[worst] <= spec.dTh:
                continue
            mid = int(interior[worst])
            inserted.append(mid)
            stack.append((lo, mid))
            stack.append((mid, hi))
        refined.extend(sorted(inserted))
        if t + 1 < m:
            refined.append(indices[t + 1])
    refined = [idx % n for idx in refined]

    order = np.array(refined, dtype=np.int64)
    return ApproxContour(pts[order], order, pts)


def vertex_angle(prev, mid, nxt) -> float:
    """Angle in degrees between rays mid->prev and mid->nxt.

    Direction angles are taken on the full circle and their absolute
    difference folded into [0, 180].
    """
    px, py = float(prev[0]) - float(mid[0]), float(prev[1]) - float(mid[1])
    nx, ny = float(nxt[0]) - float(mid[0]), float(nxt[1]) - float(mid[1])
    if (px == 0.0 and py == 0.0) or (nx == 0.0 and ny == 0.0):
        raise ValueError("vertex_angle requires pairwise distinct points")
    a1 = math.degrees(math.atan2(py, px)) % 360.0
    a2 = math.degrees(math.atan2(ny, nx)) % 360.0
    d = abs(a1 - a2)
    return d if d <= 180.0 else 360.0 - d


def _orientation(a, b, c) -> int:
    """Sign of the cross product (b - a) x (c - a); exact on integers."""
    v = (int(b[0]) - int(a[0])) * (int(c[1]) - int(a[1])) - (
        int(b[1]) - int(a[1])
    ) * (int(c[0]) - int(a[0]))
    return (v > 0) - (v < 0)


def _properly_intersects(p1, p2, p3, p4) -> bool:
    """True iff open segments p1-p2 and p3-p4 cross at an interior point."""
    d1 = _orientation(p3, p4, p1)
    d2 = _orientation(p3, p4, p2)
    d3 = _orientation(p1, p2, p3)
    d4 = _orientation(p1, p2, p4)
    return d1 * d2 < 0 and d3 * d4 < 0


def chord_crosses_contour(pac: ApproxContour, i: int) -> bool:
    """Does the chord p_{i-1} -> p_{i+1} properly cross the polygon?

    Edges incident to vertices i-1, i or i+1 are excluded: they share
    an endpoint with the chord and cannot cross it properly anyway, but
    skipping them keeps the predicate insensitive to collinear touches.
    """
    pts = pac.points
    m = len(pts)
    if m < 5:
        return False
    a = pts[(i - 1) % m]
    b = pts[(i + 1) % m]
    skip = {(i - 2) % m, (i - 1) % m, i % m, (i + 1) % m}
    for t in range(m):
        if t in skip:
            continue
        if _properly_intersects(a, b, pts[t], pts[(t + 1) % m]):
            return True
    return False


def _polygon_orientation_sign(pts: np.ndarray) -> int:
    """Sign of twice the signed area (shoelace), 0 for degenerate chains."""
    x = pts[:, 0].astype(np.int64)
    y = pts[:, 1].astype(np.int64)
    area2 = int(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
    return (area2 > 0) - (area2 < 0)


def find_concave_points(pac: ApproxContour, spec: ConcavitySpec) -> list:
    """Vertex indices where the polygon folds inward sharply enough.

    A vertex qualifies when its angle lies strictly inside
    (theta_min, theta_max), the chord between its neighbors stays off
    the polygon, and its signed turn opposes the polygon's global
    orientation (the fold points into the shape, not out of it).
    """
    pts = pac.points
    m = len(pts)
    if m < 3:
        return []
    global_sign = _polygon_orientation_sign(pts)
    if global_sign == 0:
        return []
    out = []
    for i in range(m):
        prev = pts[(i - 1) % m]
        mid = pts[i]
        nxt = pts[(i + 1) % m]
        if (tuple(prev) == tuple(mid)) or (tuple(nxt) == tuple(mid)):
            continue
        turn = _orientation(prev, mid, nxt)
        if turn != -global_sign:
            continue
        angle = vertex_angle(prev, mid, nxt)
        if not (spec.theta_min < angle < spec.theta_max):
            continue
        if chord_crosses_contour(pac, i):
            continue
        out.append(i)
    return out


def _border_vertices(pac: ApproxContour, image_bounds) -> np.ndarray:
    width, height = image_bounds
    x = pac.points[:, 0]
    y = pac.points[:, 1]
    return (x == 0) | (y == 0) | (x == width - 1) | (y == height - 1)


def apply_special_cases(pac: ApproxContour, concaves: list, image_bounds) -> list:
    """Complete the split set for the two degenerate touching layouts.

    Rule 1: a single concave point cannot split a closed contour, so a
    synthetic split is inserted at the vertex nearest the cyclically
    opposite position (c + m/2).  Rule 2: every maximal run of vertices
    on the image border contributes splits at its first and last
    vertex, cutting off contours of cells clipped by the frame.  Border
    splits are applied first; when they exist, rule 1 is skipped.
    """
    m = len(pac)
    splits = set(concaves)

    on_border = _border_vertices(pac, image_bounds)
    border_split = False
    if on_border.any() and not on_border.all():
        # Walk maximal cyclic runs of border vertices.
        start = int(np.flatnonzero(~on_border)[0])
        run: list = []
        for offset in range(1, m + 1):
            i = (start + offset) % m
            if on_border[i]:
                run.append(i)
            elif run:
                splits.add(run[0])
                splits.add(run[-1])
                border_split = True
                run = []
    elif on_border.all():
        splits.add(0)
        splits.add(m // 2)
        border_split = True

    if len(concaves) == 1 and not border_split:
        c = concaves[0]
        opposite = int(round(c + m / 2.0)) % m
        splits.add(opposite)
    if len(splits) == 1:
        # A lone split cannot cut a cycle; fall back to the opposite rule.
        c = next(iter(splits))
        splits.add(int(round(c + m / 2.0)) % m)
    return sorted(splits)


def split_segments(pac: ApproxContour, splits: list, kinds: dict | None = None) -> list:
    """Cut the polygon into segments between consecutive split vertices.

    Each segment runs cyclically from one split vertex to the next,
    inclusive of both, and carries the matching dense run of original
    contour points.  No splits means a single closed segment.
    """
    if len(set(splits)) != len(splits):
        raise ValueError("split indices must be distinct")
    if len(splits) == 1:
        raise ValueError("a single split cannot partition a closed contour")
    kinds = kinds or {}
    m = len(pac)
    src = pac.source_points
    n = len(src)
    if not splits:
        return [
            ContourSegment(
                pac.points.copy(),
                src.copy(),
                start_kind="none",
                end_kind="none",
                closed=True,
            )
        ]
    order = sorted(splits)
    segments = []
    for t, s in enumerate(order):
        e = order[(t + 1) % len(order)]
        if e > s:
            vertex_idx = np.arange(s, e + 1)
        else:
            vertex_idx = np.concatenate([np.arange(s, m), np.arange(0, e + 1)])
        ds = int(pac.source_indices[s])
        de = int(pac.source_indices[e])
        if de > ds:
            dense_idx = np.arange(ds, de + 1)
        else:
            dense_idx = np.concatenate([np.arange(ds, n), np.arange(0, de + 1)])
        segments.append(
            ContourSegment(
                pac.points[vertex_idx],
                src[dense_idx % n],
                start_kind=kinds.get(s, "concave"),
                end_kind=kinds.get(e, "concave"),
            )
        )
    return segments


def merge_segments(first: ContourSegment, second: ContourSegment) -> ContourSegment:
    """Concatenate two segments without deduplicating shared endpoints."""
    return ContourSegment(
        np.concatenate([first.points, second.points]),
        np.concatenate([first.dense_points, second.dense_points]),
        start_kind=first.start_kind,
        end_kind=second.end_kind,
    )


def segment_blob_contour(pac: ApproxContour, spec: ConcavitySpec, image_bounds):
    """Run concave detection, special cases and splitting in one step.

    Returns (segments, concaves, splits).  Split-endpoint kinds are
    derived from how each index qualified: detected concave vertices
    keep 'concave', border vertices become 'boundary', the rest are
    'synthetic' insertions.
    """
    concaves = find_concave_points(pac, spec)
    splits = apply_special_cases(pac, concaves, image_bounds)
    on_border = _border_vertices(pac, image_bounds)
    kinds = {}
    for idx in splits:
        if idx in concaves:
            kinds[idx] = "concave"
        elif bool(on_border[idx]):
            kinds[idx] = "boundary"
        else:
            kinds[idx] = "synthetic"
    segments = split_segments(pac, splits, kinds)
    return segments, concaves, splits
