"""Color clustering and blob extraction.

Pixels are grouped into k clusters of similar color (k-means with
seeded k-means++ initialization), the background cluster is identified
by its dominance along the image border, and per-class foreground masks
are cleaned by hole filling before connected blobs are collected.

Connectivity convention: 8-connected foreground, 4-connected background,
the complementary pair that keeps blob and hole topology consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError
from .raster import PixelImage

_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


@dataclass
class KMeansModel:
    k: int
    centroids: np.ndarray  # (k, 3) float64
    assignments: np.ndarray  # (N,) int
    objective_history: list = field(default_factory=list)
    n_iter: int = 0


@dataclass
class LabelMap:
    labels: np.ndarray  # (h, w) int
    background_label: int

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])


@dataclass
class Blob:
    """One 8-connected foreground component of a class mask.

    pixels holds (x, y) coordinates, one row per pixel; bounding_box is
    the tight (x_min, y_min, x_max, y_max) with inclusive maxima.
    """

    class_label: int
    pixels: np.ndarray
    bounding_box: tuple

    @property
    def area(self) -> int:
        return int(self.pixels.shape[0])

    def local_mask(self, pad: int = 1):
        """Boolean mask of the blob with a clear border of width pad.

        Returns the mask and the (x, y) image coordinate of mask[0, 0].
        """
        x0, y0, x1, y1 = self.bounding_box
        h = y1 - y0 + 1 + 2 * pad
        w = x1 - x0 + 1 + 2 * pad
        mask = np.zeros((h, w), dtype=bool)
        mask[self.pixels[:, 1] - y0 + pad, self.pixels[:, 0] - x0 + pad] = True
        return mask, (x0 - pad, y0 - pad)


def _count_distinct_colors(pixels: np.ndarray, needed: int) -> bool:
    """True when the image holds at least ``needed`` distinct colors.

    Checks a prefix first: finding enough distinct values in any subset
    settles the question without scanning the full image.
    """
    flat = pixels.reshape(-1, 3).astype(np.uint32)
    packed = (flat[:, 0] << 16) | (flat[:, 1] << 8) | flat[:, 2]
    head = packed[: 1 << 16]
    if np.unique(head).size >= needed:
        return True
    return np.unique(packed).size >= needed


def _seed_centroids(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd_run(x, x2, k, rng, tol, max_iter):
    """One seeded k-means run; returns (centroids, labels, history, n_iter).

    Stops when the assignment reaches a fixed point, the largest
    centroid move drops below tol, or max_iter passes.  An emptied
    cluster is re-seeded to the pixel farthest from its nearest
    centroid.  The last history entry is the objective of the returned
    labeling except after max_iter exhaustion, where it is an upper
    bound (the final centroid update can only improve it).
    """
    n = x.shape[0]
    centroids = _seed_centroids(x, k, rng)
    history = []
    labels = np.full(n, -1, dtype=np.int64)
    n_iter = 0
    for _ in range(max_iter):
        n_iter += 1
        d2 = x2[:, None] - 2.0 * (x @ centroids.T) + (centroids**2).sum(axis=1)
        new_labels = d2.argmin(axis=1)
        nearest = d2[np.arange(n), new_labels]
        history.append(float(np.maximum(nearest, 0.0).sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

        counts = np.bincount(labels, minlength=k).astype(np.float64)
        sums = np.empty((k, 3))
        for c in range(3):
            sums[:, c] = np.bincount(labels, weights=x[:, c], minlength=k)
        nonempty = counts > 0
        new_centroids = centroids.copy()
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            far = np.maximum(nearest, 0.0).copy()
            for j in np.flatnonzero(~nonempty):
                idx = int(far.argmax())
                new_centroids[j] = x[idx]
                far[idx] = -1.0
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            d2 = x2[:, None] - 2.0 * (x @ centroids.T) + (centroids**2).sum(axis=1)
            labels = d2.argmin(axis=1)
            nearest = d2[np.arange(n), labels]
            history.append(float(np.maximum(nearest, 0.0).sum()))
            break
    return centroids, labels, history, n_iter


def kmeans_cluster(
    img: PixelImage,
    k: int,
    seed: int,
    tol: float = 0.5,
    max_iter: int = 100,
    n_init: int = 3,
) -> KMeansModel:
    """Cluster pixel colors into k groups.

    Runs n_init independently seeded k-means++ starts and keeps the one
    with the lowest final objective: a single start can land two seeds
    in one tight color mode and never recover.  Deterministic for a
    fixed seed.  Clusters are numbered by centroid color (lexicographic
    R, G, B), so the same colors get the same labels in every image of
    a batch regardless of per-image seeding.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if n_init < 1:
        raise ValueError("n_init must be at least 1")
    if not _count_distinct_colors(img.pixels, k):
        raise DegenerateInputError(
            f"image has fewer than {k} distinct colors; cannot form {k} clusters"
        )
    x = img.pixels.reshape(-1, 3).astype(np.float64)
    x2 = (x**2).sum(axis=1)
    best = None
    for run in range(n_init):
        rng = np.random.default_rng([seed, run])
        result = _lloyd_run(x, x2, k, rng, tol, max_iter)
        if best is None or result[2][-1] < best[2][-1]:
            best = result
    centroids, assignments, history, n_iter = best
    order = np.lexsort((centroids[:, 2], centroids[:, 1], centroids[:, 0]))
    remap = np.empty(k, dtype=assignments.dtype)
    remap[order] = np.arange(k)
    return KMeansModel(k, centroids[order], remap[assignments], history, n_iter)


def identify_background_label(labels: np.ndarray) -> int:
    """Label dominating the image border.

    Ties go to the label with the larger total pixel count, then to the
    smaller label index.
    """
    labels = np.asarray(labels)
    border = np.concatenate(
        [
            labels[0, :],
            labels[-1, :],
            labels[1:-1, 0],
            labels[1:-1, -1],
        ]
    )
    n = int(labels.max()) + 1
    border_counts = np.bincount(border, minlength=n)
    total_counts = np.bincount(labels.ravel(), minlength=n)
    order = sorted(range(n), key=lambda j: (-border_counts[j], -total_counts[j], j))
    return order[0]


def segment_image(
    img: PixelImage, k: int, seed: int, tol: float = 0.5, max_iter: int = 100
) -> LabelMap:
    """Cluster colors and reshape assignments onto the raster."""
    model = kmeans_cluster(img, k, seed, tol, max_iter)
    labels = model.assignments.reshape(img.height, img.width)
    return LabelMap(labels, identify_background_label(labels))


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Fill background regions not 4-connected to the image border."""
    return ndimage.binary_fill_holes(np.asarray(mask, dtype=bool))


def extract_blobs(labelmap: LabelMap, class_label: int, min_area: int = 10) -> list:
    """Hole-filled 8-connected components of one class, by scan order.

    Components smaller than min_area are dropped.  Order follows the
    raster position of each component's first pixel, so blob identity
    is stable across runs.
    """
    if class_label == labelmap.background_label:
        raise ValueError("cannot extract blobs for the background class")
    mask = fill_holes(labelmap.labels == class_label)
    components, n = ndimage.label(mask, structure=_STRUCTURE_8)
    blobs = []
    for index, slices in enumerate(ndimage.find_objects(components), start=1):
        if slices is None:
            continue
        local = components[slices] == index
        if int(local.sum()) < min_area:
            continue
        rows, cols = np.nonzero(local)
        rows = rows + slices[0].start
        cols = cols + slices[1].start
        pixels = np.column_stack([cols, rows]).astype(np.int64)
        bbox = (
            int(cols.min()),
            int(rows.min()),
            int(cols.max()),
            int(rows.max()),
        )
        blobs.append(Blob(class_label, pixels, bbox))
    return blobs
