"""RGB raster containers, PNG/PPM codecs and annotation rendering.

Images are kept as ``(h, w, 3)`` uint8 arrays in row-major order with the
origin at the top-left pixel.  A binary mask is a plain ``(h, w)`` bool
array; no wrapper type is used for masks.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ImageFormatError

# Outline colors cycled per class label when rendering annotations.
ANNOTATION_PALETTE = (
    (255, 64, 64),
    (64, 220, 64),
    (80, 128, 255),
    (255, 200, 40),
    (220, 72, 220),
    (64, 220, 220),
    (255, 140, 0),
    (180, 255, 120),
)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass(eq=False)
class PixelImage:
    """An immutable RGB image.

    The pixel buffer is marked read-only on construction; operations that
    change pixels return a new instance.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError("pixels must be an (h, w, 3) uint8 array")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must contain at least one pixel")
        px = px.copy() if not px.flags.owndata or px.base is not None else px
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    def __eq__(self, other):
        if not isinstance(other, PixelImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


def _decode_ppm(data: bytes) -> np.ndarray:
    """Parse a binary (P6) portable pixmap with maxval 255."""
    pos = 2  # past the "P6" magic
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise ImageFormatError("truncated portable pixmap header")
        c = data[pos : pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise ImageFormatError("unterminated comment in pixmap header")
            pos = nl + 1
        elif c.isspace():
            pos += 1
        elif c.isdigit():
            end = pos
            while end < len(data) and data[end : end + 1].isdigit():
                end += 1
            fields.append(int(data[pos:end]))
            pos = end
        else:
            raise ImageFormatError("malformed pixmap header")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError("missing separator after pixmap header")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError("pixmap dimensions must be positive")
    if maxval != 255:
        raise ImageFormatError(f"unsupported pixmap maxval {maxval}")
    n = width * height * 3
    raw = data[pos : pos + n]
    if len(raw) < n:
        raise ImageFormatError("truncated pixmap pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)


def decode_image(data: bytes) -> PixelImage:
    """Decode PNG or binary PPM bytes into a :class:`PixelImage`.

    PNG alpha channels are dropped and grayscale images are replicated
    across the three channels.  Raises :class:`ImageFormatError` for
    anything else.
    """
    if data[:2] == b"P6":
        return PixelImage(_decode_ppm(data))
    if data[:8] == _PNG_MAGIC:
        try:
            with Image.open(io.BytesIO(data)) as im:
                im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.uint8)
        except Exception as exc:
            raise ImageFormatError(f"broken PNG stream: {exc}") from exc
        return PixelImage(arr)
    raise ImageFormatError("unrecognized image format (expected PNG or P6 pixmap)")


def load_image(path) -> PixelImage:
    """Read a PNG or binary PPM file from disk."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    return decode_image(data)


def encode_ppm(img: PixelImage) -> bytes:
    """Serialize as a binary (P6) portable pixmap with maxval 255."""
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def encode_png(img: PixelImage) -> bytes:
    """Serialize as PNG."""
    buf = io.BytesIO()
    Image.fromarray(img.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_image(img: PixelImage, path) -> None:
    """Write PPM when the path ends in .ppm, PNG otherwise."""
    data = encode_ppm(img) if str(path).lower().endswith(".ppm") else encode_png(img)
    with open(path, "wb") as fh:
        fh.write(data)


def _outline_points(cx, cy, a, b, theta_deg, h, w):
    """Integer pixels of a one pixel wide ellipse outline.

    The parametric curve is sampled finely enough that consecutive
    samples land under one pixel apart, then rounded to pixel centers.
    """
    n = max(32, int(np.ceil(4.0 * np.pi * max(a, b, 1.0))))
    phi = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    t = np.deg2rad(theta_deg)
    x = cx + a * np.cos(phi) * np.cos(t) - b * np.sin(phi) * np.sin(t)
    y = cy + a * np.cos(phi) * np.sin(t) + b * np.sin(phi) * np.cos(t)
    xi = np.rint(x).astype(np.int64)
    yi = np.rint(y).astype(np.int64)
    keep = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    return yi[keep], xi[keep]


def render_annotated(img: PixelImage, cells) -> PixelImage:
    """Draw detected ellipse outlines over a copy of ``img``.

    ``cells`` is an iterable of objects carrying ``class_label`` and an
    ``ellipse`` with ``cx, cy, a, b, theta_deg`` attributes.  Each class
    gets a fixed palette color; the input image is never modified.
    """
    out = img.pixels.copy()
    h, w = out.shape[:2]
    for cell in cells:
        e = cell.ellipse
        color = ANNOTATION_PALETTE[int(cell.class_label) % len(ANNOTATION_PALETTE)]
        rr, cc = _outline_points(e.cx, e.cy, e.a, e.b, e.theta_deg, h, w)
        out[rr, cc] = color
    return PixelImage(out)
