"""Channel-space decorrelation stretch.

Whitens the inter-channel covariance in its PCA basis, rescales every
non-degenerate component to a common target standard deviation and
rotates back, keeping the original channel means.  Classes that differ
mostly along low-variance color directions become far easier to
separate by clustering afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import PixelImage

# Variance floor below which a principal component carries no usable
# signal and is passed through unscaled.
EIGENVALUE_FLOOR = 1e-12


@dataclass(frozen=True)
class ChannelStats:
    """First and second moments of the channel distribution.

    Attributes
    ----------
    mean : ndarray, shape (3,)
        Per-channel mean.
    covariance : ndarray, shape (3, 3)
        Channel covariance with 1/N normalization.
    """

    mean: np.ndarray
    covariance: np.ndarray


def channel_statistics(img: PixelImage) -> ChannelStats:
    """Mean and 1/N covariance of the pixel channels."""
    flat = img.pixels.reshape(-1, 3).astype(np.float64)
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / flat.shape[0]
    return ChannelStats(mean, cov)


def stretch_matrix(stats: ChannelStats, target_sigma: float):
    """Linear map E diag(g) E^T applied to centered pixels.

    Component gains are target_sigma / sqrt(lambda_i); components with
    lambda_i at or below the variance floor keep gain 1 so constant
    color directions pass through untouched.  Returns the 3x3 matrix
    and a flag telling whether any component was degenerate.
    """
    evals, evecs = np.linalg.eigh(stats.covariance)
    degenerate = evals <= EIGENVALUE_FLOOR
    gains = np.ones(3)
    ok = ~degenerate
    gains[ok] = target_sigma / np.sqrt(evals[ok] + EIGENVALUE_FLOOR)
    return evecs @ np.diag(gains) @ evecs.T, bool(degenerate.any())


def decorrelation_stretch(
    img: PixelImage, target_sigma: float = 50.0
) -> tuple[PixelImage, bool]:
    """Decorrelate channels and equalize component variance.

    Returns the stretched image (clamped to [0, 255] and rounded) and a
    diagnostic flag that is True when one or more principal components
    were degenerate and passed through unscaled.  A fully degenerate
    (single color) image comes back unchanged with the flag set.
    """
    if target_sigma <= 0:
        raise ValueError("target_sigma must be positive")
    stats = channel_statistics(img)
    matrix, degenerate = stretch_matrix(stats, target_sigma)
    flat = img.pixels.reshape(-1, 3).astype(np.float64)
    out = (flat - stats.mean) @ matrix.T + stats.mean
    out = np.clip(np.rint(out), 0.0, 255.0).astype(np.uint8)
    return PixelImage(out.reshape(img.pixels.shape)), degenerate
