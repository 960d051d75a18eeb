"""FastAPI application wrapping the detection pipeline.

Endpoints delegate straight to the core library; all state lives in
the request.  Client errors map to 400 (undecodable input, bad config)
and 422 (well-formed input the pipeline cannot process).
"""

from __future__ import annotations

import base64
import binascii

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse

from .. import __version__
from ..errors import ConfigError, DegenerateInputError, ImageFormatError
from ..pipeline import (
    PipelineConfig,
    csv_text,
    format_config,
    histogram_csv_text,
    parse_config,
    run_pipeline,
)
from ..raster import decode_image, encode_png, render_annotated
from ..synthbench import BenchSpec, bench_csv_text, run_benchmark
from .schemas import (
    AnalyzeRequest,
    AnalyzeResponse,
    BenchRequest,
    BenchResponse,
    CellOut,
    HealthResponse,
    SceneMetricsOut,
)


def _load_config(config_text: str | None, seed: int | None) -> PipelineConfig:
    try:
        config = parse_config(config_text) if config_text else PipelineConfig()
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=f"bad config: {exc}") from exc
    if seed is not None:
        config.seed = seed
    return config


def create_app() -> FastAPI:
    app = FastAPI(title="cellipse", version=__version__)

    @app.get("/healthz", response_model=HealthResponse)
    def healthz() -> HealthResponse:
        return HealthResponse(version=__version__)

    @app.get("/config/default", response_class=PlainTextResponse)
    def default_config() -> str:
        return format_config(PipelineConfig())

    @app.post("/analyze", response_model=AnalyzeResponse)
    def analyze(request: AnalyzeRequest) -> AnalyzeResponse:
        try:
            raw = base64.b64decode(request.image_b64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise HTTPException(
                status_code=400, detail=f"image_b64 is not valid base64: {exc}"
            ) from exc
        try:
            image = decode_image(raw)
        except ImageFormatError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        config = _load_config(request.config_text, request.seed)
        try:
            result = run_pipeline(image, config, image_id=request.image_id)
        except DegenerateInputError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

        cells = [
            CellOut(
                cell_id=c.cell_id,
                class_label=c.class_label,
                cx=c.ellipse.cx,
                cy=c.ellipse.cy,
                semi_major=c.ellipse.a,
                semi_minor=c.ellipse.b,
                angle_deg=c.ellipse.theta_deg,
                area=c.area,
                source_blob=c.source_blob,
                low_confidence=c.low_confidence,
            )
            for c in result.cells
        ]
        histograms = None
        if request.include_histograms:
            histograms = {
                label: histogram_csv_text(result, label, config.histogram_bin_width)
                for label in sorted(result.per_class_counts)
            }
        annotated = None
        if request.include_annotated:
            rendered = render_annotated(image, result.cells)
            annotated = base64.b64encode(encode_png(rendered)).decode("ascii")
        return AnalyzeResponse(
            image_id=result.image_id,
            cells=cells,
            per_class_counts=result.per_class_counts,
            timing_ms=result.timing_ms,
            warnings=result.warnings,
            csv=csv_text(result) if request.include_csv else None,
            histograms=histograms,
            annotated_png_b64=annotated,
        )

    @app.post("/bench", response_model=BenchResponse)
    def bench(request: BenchRequest) -> BenchResponse:
        spec = BenchSpec(
            width=request.width,
            height=request.height,
            classes=request.classes,
            cells_min=request.cells_min,
            cells_max=request.cells_max,
            a_min=request.a_min,
            a_max=request.a_max,
            b_min=request.b_min,
            b_max=request.b_max,
            max_overlap_fraction=request.max_overlap_fraction,
            noise_sigma=request.noise_sigma,
        )
        config = (
            _load_config(request.config_text, request.seed)
            if request.config_text
            else None
        )
        try:
            spec.validate()
            scores = run_benchmark(
                request.scenes, spec, config=config, seed=request.seed
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        rows = [
            SceneMetricsOut(
                scene_id=s.scene_id,
                n_detected=s.metrics.n_detected,
                n_true=s.metrics.n_true,
                count_error=s.metrics.count_error,
                matched_frac=s.metrics.matched_frac,
                center_rmse=s.metrics.center_rmse,
                area_mae=s.metrics.area_mae,
            )
            for s in scores
        ]
        return BenchResponse(scenes=rows, csv=bench_csv_text(scores))

    return app
