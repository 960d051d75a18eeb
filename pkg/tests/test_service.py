"""HTTP endpoints: happy paths, error mapping, optional payload parts."""

import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cellipse import __version__
from cellipse.pipeline import CSV_HEADER, PipelineConfig, format_config
from cellipse.raster import PixelImage, decode_image, encode_png, encode_ppm
from cellipse.service import create_app

from conftest import two_circle_array

TWO_CIRCLE_CONFIG = "k = 2\nenable_decorrelation = false\n"


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def b64_ppm(arr):
    return base64.b64encode(encode_ppm(PixelImage(arr))).decode("ascii")


class TestBasics:
    def test_healthz(self, client):
        r = client.get("/healthz")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "version": __version__}

    def test_default_config_text(self, client):
        r = client.get("/config/default")
        assert r.status_code == 200
        assert r.headers["content-type"].startswith("text/plain")
        assert r.text == format_config(PipelineConfig())


class TestAnalyze:
    def test_two_circles_full_payload(self, client):
        arr, c1, c2 = two_circle_array()
        r = client.post(
            "/analyze",
            json={
                "image_b64": b64_ppm(arr),
                "image_id": "pair",
                "config_text": TWO_CIRCLE_CONFIG,
                "include_csv": True,
                "include_histograms": True,
                "include_annotated": True,
            },
        )
        assert r.status_code == 200
        body = r.json()
        assert body["image_id"] == "pair"
        assert len(body["cells"]) == 2
        found = sorted((c["cx"], c["cy"]) for c in body["cells"])
        for got, want in zip(found, sorted([c1, c2])):
            assert got[0] == pytest.approx(want[0], abs=2.0)
            assert got[1] == pytest.approx(want[1], abs=2.0)
        assert list(body["per_class_counts"].values()) == [2]
        assert body["csv"].startswith(CSV_HEADER)
        assert len(body["csv"].splitlines()) == 3
        (hist,) = body["histograms"].values()
        assert hist.startswith("bin_start,count")
        annotated = decode_image(base64.b64decode(body["annotated_png_b64"]))
        assert (annotated.width, annotated.height) == (
            arr.shape[1],
            arr.shape[0],
        )

    def test_optional_parts_default_off(self, client):
        arr, _, _ = two_circle_array()
        r = client.post(
            "/analyze",
            json={"image_b64": b64_ppm(arr), "config_text": TWO_CIRCLE_CONFIG},
        )
        assert r.status_code == 200
        body = r.json()
        assert body["csv"] is None
        assert body["histograms"] is None
        assert body["annotated_png_b64"] is None

    def test_png_input_accepted(self, client):
        arr, _, _ = two_circle_array()
        png_b64 = base64.b64encode(encode_png(PixelImage(arr))).decode("ascii")
        r = client.post(
            "/analyze",
            json={"image_b64": png_b64, "config_text": TWO_CIRCLE_CONFIG},
        )
        assert r.status_code == 200
        assert len(r.json()["cells"]) == 2

    def test_invalid_base64_is_400(self, client):
        r = client.post("/analyze", json={"image_b64": "!!not-base64!!"})
        assert r.status_code == 400
        assert "base64" in r.json()["detail"]

    def test_undecodable_image_is_400(self, client):
        junk = base64.b64encode(b"not an image at all").decode("ascii")
        r = client.post("/analyze", json={"image_b64": junk})
        assert r.status_code == 400

    def test_bad_config_is_400(self, client):
        arr, _, _ = two_circle_array()
        r = client.post(
            "/analyze", json={"image_b64": b64_ppm(arr), "config_text": "k = 0\n"}
        )
        assert r.status_code == 400
        assert "bad config" in r.json()["detail"]

    def test_degenerate_input_is_422(self, client):
        flat = np.full((16, 16, 3), 120, dtype=np.uint8)
        r = client.post(
            "/analyze",
            json={"image_b64": b64_ppm(flat), "config_text": TWO_CIRCLE_CONFIG},
        )
        assert r.status_code == 422

    def test_missing_image_is_422(self, client):
        assert client.post("/analyze", json={}).status_code == 422


class TestBench:
    def test_small_run(self, client):
        r = client.post(
            "/bench",
            json={
                "scenes": 2,
                "width": 256,
                "height": 256,
                "classes": 1,
                "cells_min": 4,
                "cells_max": 6,
                "max_overlap_fraction": 0.0,
                "noise_sigma": 3.0,
            },
        )
        assert r.status_code == 200
        body = r.json()
        assert [s["scene_id"] for s in body["scenes"]] == [
            "scene_0000",
            "scene_0001",
        ]
        for row in body["scenes"]:
            assert row["n_true"] >= 4
            assert row["matched_frac"] == 1.0
            assert row["count_error"] == 0.0
        assert body["csv"].startswith(
            "scene_id,count_error,matched_frac,center_rmse,area_mae"
        )

    def test_bad_spec_is_400(self, client):
        r = client.post("/bench", json={"scenes": 1, "classes": 0})
        assert r.status_code == 400
