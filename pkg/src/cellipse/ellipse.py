"""Direct least-squares ellipse fitting and segment combination rules.

Fitting minimizes the algebraic residual subject to 4AC - B^2 = 1,
solved through the numerically stable partitioned 3x3 generalized
eigenproblem, which guarantees an ellipse (never a hyperbola) whenever
a solution exists.  Points are normalized to a centroid-origin,
RMS-radius-sqrt(2) frame before fitting; residual thresholds (disTh)
are interpreted in that frame, where they are scale-free.

The combination stage walks all segment pairs, merging those whose
joint fit is better than both parts (Case 2) unless their geometry says
they are genuinely distinct cells (Case 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .contour import ContourSegment, merge_segments
from .errors import EllipseFitError

_C1_INV = np.array(
    [
        [0.0, 0.0, 0.5],
        [0.0, -1.0, 0.0],
        [0.5, 0.0, 0.0],
    ]
)

# 4AC - B^2 evaluated on a unit-norm coefficient vector is scale-free in
# (0, 2]: about 4 r^2 for an ellipse of axis ratio r, and rounding dust
# (< 1e-6) when the exact conic is a degenerate line pair.  Anything at
# or below this floor is the dust, not a usable ellipse.
_DEGENERATE_COND = 1e-5


@dataclass(frozen=True)
class Conic:
    """Coefficients (A,B,C,D,E,F) of Ax^2+Bxy+Cy^2+Dx+Ey+F = 0.

    Coefficients live in the fit's normalization frame: x_norm =
    (x - frame_center) / frame_scale.  They are scaled so that
    4AC - B^2 = 1 and sign-fixed so A > 0.
    """

    coefficients: np.ndarray
    frame_center: np.ndarray
    frame_scale: float


@dataclass(frozen=True)
class Ellipse:
    """Geometric ellipse in pixel coordinates, angle in [0, 180)."""

    cx: float
    cy: float
    a: float
    b: float
    theta_deg: float

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    @property
    def area(self) -> float:
        return math.pi * self.a * self.b


@dataclass(frozen=True)
class FitQuality:
    mean_algebraic_distance: float
    axis_ratio: float


@dataclass(frozen=True)
class CombineParams:
    disTh: float = 0.03
    eTh: float = 0.2
    dMinTh: float = 4.0
    separation_factor: float = 3.0

    def __post_init__(self):
        if min(self.disTh, self.eTh, self.dMinTh, self.separation_factor) <= 0:
            raise ValueError("all combination thresholds must be positive")
        if self.eTh >= 1.0:
            raise ValueError("eTh must be below 1")


@dataclass
class SegmentFit:
    """A contour segment together with its fit, if one exists."""

    segment: ContourSegment
    conic: Conic | None = None
    ellipse: Ellipse | None = None
    quality: FitQuality | None = None

    @property
    def ok(self) -> bool:
        return self.conic is not None


@dataclass
class MergeEvent:
    """One merge, carrying enough geometry to re-check the rules."""

    first_index: int
    second_index: int
    case1_keep_separate: bool
    entities_before: int
    entities_after: int
    first_ellipse: Ellipse | None = None
    second_ellipse: Ellipse | None = None
    merged_ellipse: Ellipse | None = None


@dataclass
class MergeLog:
    events: list = field(default_factory=list)
    scans: int = 0


def _normalize_points(points: np.ndarray):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    centroid = pts.mean(axis=0)
    q = pts - centroid
    rms = math.sqrt(float((q**2).sum()) / pts.shape[0])
    if rms <= 1e-12:
        raise EllipseFitError("points are coincident")
    scale = rms / math.sqrt(2.0)
    return q / scale, centroid, scale


def fit_ellipse_direct(points) -> tuple[Conic, Ellipse, FitQuality]:
    """Fit an ellipse to points by constrained least squares.

    Raises EllipseFitError when fewer than 6 points are given, the
    scatter is rank deficient (collinear points), or the constrained
    problem has no ellipse solution (degenerate conics).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 6:
        raise EllipseFitError("need at least 6 points to fit an ellipse")
    xn, centroid, scale = _normalize_points(pts)
    x = xn[:, 0]
    y = xn[:, 1]
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as exc:
        raise EllipseFitError("rank-deficient point scatter") from exc
    reduced = _C1_INV @ (s1 + s2 @ t)
    eigvals, eigvecs = np.linalg.eig(reduced)

    best = None
    for idx in range(3):
        if abs(eigvals[idx].imag) > 1e-8 * max(1.0, abs(eigvals[idx].real)):
            continue
        v = eigvecs[:, idx].real
        cond = 4.0 * v[0] * v[2] - v[1] ** 2
        if cond > _DEGENERATE_COND and (best is None or cond > best[0]):
            best = (cond, v)
    if best is None:
        raise EllipseFitError("no ellipse satisfies the constraint")
    cond, a1 = best
    a1 = a1 / math.sqrt(cond)  # rescale so 4AC - B^2 = 1 exactly
    a2 = t @ a1
    coeffs = np.concatenate([a1, a2])
    if coeffs[0] < 0:
        coeffs = -coeffs
    conic = Conic(coeffs, centroid, scale)
    ellipse = _conic_to_ellipse(conic)
    quality = FitQuality(
        mean_algebraic_distance(conic, pts),
        ellipse.b / ellipse.a,
    )
    return conic, ellipse, quality


def _conic_to_ellipse(conic: Conic) -> Ellipse:
    """Convert conic coefficients to center/axes/angle in pixel space."""
    a_, b_, c_, d_, e_, f_ = conic.coefficients
    m2 = np.array([[a_, b_ / 2.0], [b_ / 2.0, c_]])
    try:
        cen = np.linalg.solve(m2, [-d_ / 2.0, -e_ / 2.0])
    except np.linalg.LinAlgError as exc:
        raise EllipseFitError("singular quadratic form") from exc
    f_center = f_ + 0.5 * (d_ * cen[0] + e_ * cen[1])
    evals, evecs = np.linalg.eigh(m2)
    if f_center >= 0 or evals[0] <= 0:
        raise EllipseFitError("conic is not a real ellipse")
    semi = np.sqrt(-f_center / evals)  # ascending evals -> descending axes
    major_dir = evecs[:, 0]
    theta = math.degrees(math.atan2(major_dir[1], major_dir[0])) % 180.0
    return Ellipse(
        cx=float(conic.frame_center[0] + conic.frame_scale * cen[0]),
        cy=float(conic.frame_center[1] + conic.frame_scale * cen[1]),
        a=float(conic.frame_scale * semi[0]),
        b=float(conic.frame_scale * semi[1]),
        theta_deg=float(theta),
    )


def mean_algebraic_distance(conic: Conic, points) -> float:
    """Mean |conic polynomial| over points, in the normalization frame."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("points must be nonempty")
    xn = (pts - conic.frame_center) / conic.frame_scale
    x = xn[:, 0]
    y = xn[:, 1]
    a_, b_, c_, d_, e_, f_ = conic.coefficients
    q = a_ * x * x + b_ * x * y + c_ * y * y + d_ * x + e_ * y + f_
    return float(np.abs(q).mean())


def moments_equivalent_ellipse(points) -> Ellipse:
    """Ellipse with the same second moments as a filled pixel set.

    Used as the last-resort shape for blobs nothing could be fitted to.
    Axes are floored at half a pixel so degenerate (collinear) pixel
    sets still produce a valid ellipse.
    """
    pts = np.asarray(points, dtype=np.float64)
    mean = pts.mean(axis=0)
    q = pts - mean
    cov = q.T @ q / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    semi = 2.0 * np.sqrt(np.maximum(evals, 0.0625))  # floor: (0.5/2)^2
    major_dir = evecs[:, 1]
    theta = math.degrees(math.atan2(major_dir[1], major_dir[0])) % 180.0
    return Ellipse(
        cx=float(mean[0]),
        cy=float(mean[1]),
        a=float(semi[1]),
        b=float(semi[0]),
        theta_deg=float(theta),
    )


def fit_segment(segment: ContourSegment) -> SegmentFit:
    """Fit a segment; failures yield a fitless record.

    The vertex chain is the fitting payload: polygon approximation
    already suppressed pixel quantization, so its vertices carry far
    less noise than the raw boundary run.  Chains too short to fit
    (under 6 vertices) fall back to the segment's dense pixel run.
    """
    for payload in (segment.points, segment.dense_points):
        try:
            conic, ellipse, quality = fit_ellipse_direct(payload)
        except EllipseFitError:
            continue
        return SegmentFit(segment, conic, ellipse, quality)
    return SegmentFit(segment)


def passes_selection(quality: FitQuality, params: CombineParams) -> bool:
    return (
        quality.mean_algebraic_distance < params.disTh
        and quality.axis_ratio > params.eTh
    )


def select_ellipses(fits: list, params: CombineParams) -> tuple[list, list]:
    """Split fits into selected ellipses and leftovers.

    Selected fits have mean algebraic distance below disTh and axis
    ratio above eTh; everything else, fit failures included, becomes a
    leftover available to the refinement pass.
    """
    selected = []
    leftovers = []
    for fit in fits:
        if fit.ok and passes_selection(fit.quality, params):
            selected.append(fit)
        else:
            leftovers.append(fit)
    return selected, leftovers


def case1_keep_separate(
    e_i: Ellipse, e_j: Ellipse, e_new: Ellipse, params: CombineParams
) -> bool:
    """True when two ellipses are distinct cells that must not merge.

    Fires when the merged center sits far (> dMinTh) from both original
    centers, or the original centers themselves are far apart
    (> separation_factor * dMinTh).
    """
    d_i = math.dist((e_i.cx, e_i.cy), (e_new.cx, e_new.cy))
    d_j = math.dist((e_j.cx, e_j.cy), (e_new.cx, e_new.cy))
    d_ij = math.dist((e_i.cx, e_i.cy), (e_j.cx, e_j.cy))
    if d_i > params.dMinTh and d_j > params.dMinTh:
        return True
    return d_ij > params.separation_factor * params.dMinTh


def case2_better_fit(d_i: float, d_j: float, d_ij: float) -> bool:
    """True when the joint fit is strictly better than both parts."""
    return d_ij < d_i and d_ij < d_j


def combine_ellipses(
    fits: list, params: CombineParams, log: MergeLog | None = None
) -> list:
    """Merge segment fits that plausibly belong to one cell.

    Doubly nested pair scan: for each pair, the concatenated segment is
    refitted; if the pair is not geometrically distinct (Case 1) and
    the joint fit beats both parts (Case 2), the pair is replaced by
    the merged entity and the scan restarts from the top.  Ends when a
    full scan makes no merge.  Output keeps ascending original order.
    """
    entities = list(fits)
    while True:
        if log is not None:
            log.scans += 1
        merged_any = False
        m = len(entities)
        for i in range(m):
            for j in range(i + 1, m):
                fi, fj = entities[i], entities[j]
                joint = fit_segment(merge_segments(fi.segment, fj.segment))
                if joint.conic is None:
                    continue
                conic, ellipse, quality = joint.conic, joint.ellipse, joint.quality
                keep = case1_keep_separate(fi.ellipse, fj.ellipse, ellipse, params)
                if keep:
                    continue
                if not case2_better_fit(
                    fi.quality.mean_algebraic_distance,
                    fj.quality.mean_algebraic_distance,
                    quality.mean_algebraic_distance,
                ):
                    continue
                if log is not None:
                    log.events.append(
                        MergeEvent(
                            i,
                            j,
                            keep,
                            len(entities),
                            len(entities) - 1,
                            fi.ellipse,
                            fj.ellipse,
                            ellipse,
                        )
                    )
                entities[i] = joint
                del entities[j]
                merged_any = True
                break
            if merged_any:
                break
        if not merged_any:
            return entities


def refine_with_leftovers(
    combined: list, leftovers: list, params: CombineParams
) -> list:
    """Attach leftover segments to the entity they fit best, or drop them.

    Each leftover (smallest first) is trial-concatenated with every
    entity; it joins the one giving the smallest mean algebraic
    distance among joint fits that still pass selection.  Entities are
    refitted by that same joint fit.  Leftovers never found acceptable
    are discarded; no new entities are created here.
    """
    entities = list(combined)
    if not entities:
        return entities
    pending = sorted(leftovers, key=lambda f: len(f.segment.dense_points))
    for leftover in pending:
        best = None
        for idx, entity in enumerate(entities):
            joint = fit_segment(merge_segments(entity.segment, leftover.segment))
            if not joint.ok or not passes_selection(joint.quality, params):
                continue
            score = joint.quality.mean_algebraic_distance
            if best is None or score < best[0]:
                best = (score, idx, joint)
        if best is not None:
            entities[best[1]] = best[2]
    return entities
