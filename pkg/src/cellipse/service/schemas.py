"""Request and response bodies of the HTTP service.

Images travel base64-encoded inside JSON so every endpoint speaks one
content type; optional response parts (CSV text, histograms, annotated
render) are included only when asked for.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class CellOut(BaseModel):
    cell_id: int
    class_label: int
    cx: float
    cy: float
    semi_major: float
    semi_minor: float
    angle_deg: float
    area: float
    source_blob: int
    low_confidence: bool


class AnalyzeRequest(BaseModel):
    image_b64: str = Field(description="PNG or binary PPM bytes, base64")
    image_id: str = "image"
    config_text: str | None = Field(
        default=None, description="key = value overrides of the default config"
    )
    seed: int | None = None
    include_csv: bool = False
    include_histograms: bool = False
    include_annotated: bool = False


class AnalyzeResponse(BaseModel):
    image_id: str
    cells: list[CellOut]
    per_class_counts: dict[int, int]
    timing_ms: dict[str, float]
    warnings: list[str]
    csv: str | None = None
    histograms: dict[int, str] | None = None
    annotated_png_b64: str | None = None


class BenchRequest(BaseModel):
    scenes: int = Field(default=5, ge=1)
    seed: int = 0
    width: int = 512
    height: int = 512
    classes: int = 2
    cells_min: int = 10
    cells_max: int = 30
    a_min: float = 8.0
    a_max: float = 20.0
    b_min: float = 8.0
    b_max: float = 20.0
    max_overlap_fraction: float = 0.3
    noise_sigma: float = 5.0
    config_text: str | None = None


class SceneMetricsOut(BaseModel):
    scene_id: str
    n_detected: int
    n_true: int
    count_error: float
    matched_frac: float
    center_rmse: float
    area_mae: float


class BenchResponse(BaseModel):
    scenes: list[SceneMetricsOut]
    csv: str
