"""End-to-end detection pipeline, configuration and report emission.

Flow per image: optional decorrelation stretch, k-means segmentation,
then per non-background class: hole filling, blob extraction, contour
tracing, polygon approximation, concave-point splitting, ellipse
fitting, selection, combination and refinement.  Every blob accounts
for at least one reported cell; blobs nothing could be fitted to fall
back to their second-moment equivalent ellipse, flagged low-confidence.
"""

from __future__ import annotations

import hashlib
import math
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import contour as contour_mod
from . import ellipse as ellipse_mod
from .contour import ConcavitySpec
from .ellipse import CombineParams, Ellipse
from .errors import ConfigError
from .preprocess import decorrelation_stretch
from .raster import PixelImage
from .segmentation import Blob, extract_blobs, segment_image

CSV_HEADER = "image_id,cell_id,class,cx,cy,major,minor,angle_deg,area"


@dataclass
class PipelineConfig:
    """Every tunable of the detection pipeline, with field defaults.

    k counts cell classes plus one for the background.  Angle bounds
    are degrees, dTh/dMinTh pixels, disTh is dimensionless (normalized
    fitting frame), histogram_bin_width is px^2.
    """

    k: int = 3
    enable_decorrelation: bool = True
    target_sigma: float = 50.0
    seed: int = 0
    tol: float = 0.5
    max_iter: int = 100
    min_area: int = 10
    nStep: int = 5
    dTh: float = 3.5
    theta_min: float = 35.0
    theta_max: float = 155.0
    disTh: float = 0.03
    eTh: float = 0.2
    dMinTh: float = 4.0
    separation_factor: float = 3.0
    histogram_bin_width: float = 50.0

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigError("k must be at least 2 (one cell class plus background)")
        positive = (
            "target_sigma",
            "tol",
            "min_area",
            "dTh",
            "theta_min",
            "theta_max",
            "disTh",
            "eTh",
            "dMinTh",
            "separation_factor",
            "histogram_bin_width",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.nStep < 2:
            raise ConfigError("nStep must be at least 2")
        if not (self.theta_min < self.theta_max < 180.0):
            raise ConfigError("need theta_min < theta_max < 180")
        if self.eTh >= 1.0:
            raise ConfigError("eTh must be below 1")

    def concavity_spec(self) -> ConcavitySpec:
        return ConcavitySpec(self.theta_min, self.theta_max, self.nStep, self.dTh)

    def combine_params(self) -> CombineParams:
        return CombineParams(self.disTh, self.eTh, self.dMinTh, self.separation_factor)


@dataclass
class CellRecord:
    cell_id: int
    class_label: int
    ellipse: Ellipse
    area: float
    source_blob: int
    low_confidence: bool = False


@dataclass
class DetectionResult:
    image_id: str
    cells: list
    per_class_counts: dict
    timing_ms: dict
    warnings: list = field(default_factory=list)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def format_config(config: PipelineConfig) -> str:
    """Render a config as the flat key = value text format."""
    lines = [f"{f.name} = {_format_value(getattr(config, f.name))}" for f in fields(PipelineConfig)]
    return "\n".join(lines) + "\n"


def _parse_value(name: str, kind: type, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: expected {kind.__name__}, got {raw!r}") from exc


def parse_config(text: str) -> PipelineConfig:
    """Parse key = value lines into a validated PipelineConfig.

    Unknown keys are errors; '#' starts a comment; blank lines are
    skipped.  Keys not mentioned keep their defaults.
    """
    types = {f.name: f.type for f in fields(PipelineConfig)}
    kinds = {"int": int, "float": float, "bool": bool}
    config = PipelineConfig()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw_line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(config, key, _parse_value(key, kinds[str(types[key])], raw))
    config.validate()
    return config


def derive_seed(seed: int, image_id: str) -> int:
    """Stable per-image seed so batch order cannot perturb results."""
    digest = hashlib.sha256(f"{seed}:{image_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def resolve_thread_cap() -> int:
    """Worker cap from CELLIPSE_THREADS; 0 or unset means auto."""
    raw = os.environ.get("CELLIPSE_THREADS", "0").strip()
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"CELLIPSE_THREADS must be an integer, got {raw!r}") from exc
    if value < 0:
        raise ConfigError("CELLIPSE_THREADS must be non-negative")
    if value == 0:
        return os.cpu_count() or 1
    return value


# Pixel-scaled mean algebraic residual of the raw boundary under a
# whole-contour fit.  Quantization alone keeps correct fits below about
# 0.72 px at any blob size; two fused near-circular regions misfit in
# proportion to their size and land above 1.0 px.
_WHOLE_FIT_DENSE_LIMIT_PX = 0.85


def _whole_contour_cell(tr, pac_points, blob, params):
    """Fit the complete contour as one cell, if it is acceptable.

    The polygon vertex chain is fitted like any segment; the raw
    boundary then has to agree with that ellipse, which rejects blobs
    that are really two fused cells with a neck too shallow to mark.
    """
    fit = ellipse_mod.fit_segment(
        contour_mod.ContourSegment(
            pac_points, tr.points, start_kind="none", end_kind="none", closed=True
        )
    )
    if fit.ok and ellipse_mod.passes_selection(fit.quality, params):
        dense_px = fit.conic.frame_scale * ellipse_mod.mean_algebraic_distance(
            fit.conic, tr.points
        )
        if dense_px <= _WHOLE_FIT_DENSE_LIMIT_PX:
            return fit.ellipse, False
    return ellipse_mod.moments_equivalent_ellipse(blob.pixels), True


def detect_blob_cells(blob: Blob, config: PipelineConfig, image_bounds) -> list:
    """Ellipses of the cells inside one blob.

    Returns (Ellipse, low_confidence) pairs.  An empty list means the
    blob was degenerate (sub-3-pixel boundary) and contributes nothing.
    """
    tr = contour_mod.trace_contour(blob)
    if tr.degenerate:
        return []
    spec = config.concavity_spec()
    params = config.combine_params()
    pac = contour_mod.approximate_polygon(tr, spec)
    if len(pac) < 3:
        return [_whole_contour_cell(tr, pac.points, blob, params)]
    segments, _, splits = contour_mod.segment_blob_contour(pac, spec, image_bounds)
    if not splits:
        return [_whole_contour_cell(tr, pac.points, blob, params)]
    fits = [ellipse_mod.fit_segment(seg) for seg in segments]
    selected, leftovers = ellipse_mod.select_ellipses(fits, params)
    combined = ellipse_mod.combine_ellipses(selected, params)
    final = ellipse_mod.refine_with_leftovers(combined, leftovers, params)
    if not final:
        return [_whole_contour_cell(tr, pac.points, blob, params)]
    return [(entity.ellipse, False) for entity in final]


def run_pipeline(
    img: PixelImage, config: PipelineConfig, image_id: str = "image"
) -> DetectionResult:
    """Detect cells in one image.

    Degenerate segmentation input (fewer distinct colors than k)
    propagates as DegenerateInputError; per-blob fit failures never
    abort the image.
    """
    config.validate()
    warnings = []
    timing = {}
    seed = derive_seed(config.seed, image_id)

    t0 = time.perf_counter()
    work = img
    if config.enable_decorrelation:
        work, degenerate = decorrelation_stretch(img, config.target_sigma)
        if degenerate:
            warnings.append(
                "decorrelation: degenerate color component passed through unscaled"
            )
    timing["preprocess_ms"] = (time.perf_counter() - t0) * 1000.0

    t1 = time.perf_counter()
    labelmap = segment_image(work, config.k, seed, config.tol, config.max_iter)
    timing["segment_ms"] = (time.perf_counter() - t1) * 1000.0

    t2 = time.perf_counter()
    bounds = (img.width, img.height)
    cells = []
    blob_id = 0
    for class_label in range(config.k):
        if class_label == labelmap.background_label:
            continue
        for blob in extract_blobs(labelmap, class_label, config.min_area):
            blob_id += 1
            for shape, low_confidence in detect_blob_cells(blob, config, bounds):
                cells.append(
                    CellRecord(
                        cell_id=len(cells) + 1,
                        class_label=class_label,
                        ellipse=shape,
                        area=shape.area,
                        source_blob=blob_id,
                        low_confidence=low_confidence,
                    )
                )
    timing["detect_ms"] = (time.perf_counter() - t2) * 1000.0
    timing["total_ms"] = (time.perf_counter() - t0) * 1000.0

    counts: dict = {}
    for cell in cells:
        counts[cell.class_label] = counts.get(cell.class_label, 0) + 1
    if any(cell.low_confidence for cell in cells):
        warnings.append(
            f"{sum(c.low_confidence for c in cells)} cell(s) reported from "
            "moment fallback (low confidence)"
        )
    return DetectionResult(image_id, cells, counts, timing, warnings)


def csv_text(result: DetectionResult) -> str:
    """Per-cell CSV (3-decimal floats, rows by cell_id, trailing newline)."""
    lines = [CSV_HEADER]
    for cell in sorted(result.cells, key=lambda c: c.cell_id):
        e = cell.ellipse
        lines.append(
            f"{result.image_id},{cell.cell_id},{cell.class_label},"
            f"{e.cx:.3f},{e.cy:.3f},{e.a:.3f},{e.b:.3f},"
            f"{e.theta_deg:.3f},{cell.area:.3f}"
        )
    return "\n".join(lines) + "\n"


def write_csv(result: DetectionResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(result))


def area_histogram(result: DetectionResult, class_label: int, bin_width: float) -> list:
    """Half-open area bins [i*w, (i+1)*w) from zero, as (start, count).

    Empty bins up to the last populated one are included so consecutive
    rows always step by one bin width.  No cells of the class gives an
    empty list.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    areas = [cell.area for cell in result.cells if cell.class_label == class_label]
    if not areas:
        return []
    top = int(math.floor(max(areas) / bin_width))
    counts = [0] * (top + 1)
    for area in areas:
        counts[int(math.floor(area / bin_width))] += 1
    return [(i * bin_width, counts[i]) for i in range(top + 1)]


def histogram_csv_text(result: DetectionResult, class_label: int, bin_width: float) -> str:
    lines = ["bin_start,count"]
    for start, count in area_histogram(result, class_label, bin_width):
        lines.append(f"{start:.3f},{count}")
    return "\n".join(lines) + "\n"


def cli_main(argv=None) -> int:
    """Console entry point (thin client over the service; see cli)."""
    from .cli import cli_main as main

    return main(argv)
