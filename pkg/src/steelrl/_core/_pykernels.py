"""Pure-numpy implementations of the pairwise-kernel primitives.

Used when the compiled extension is unavailable (or explicitly requested via
``STEELRL_BACKEND=numpy``).  Semantics match ``_ckernels`` to rounding.
"""

import numpy as np
from scipy.spatial.distance import cdist

BACKEND_NAME = "numpy"

# Chunk rows so the KDE never materializes a full (n_query, n_point) block
# for large samples.
_KDE_CHUNK = 512


def gaussian_gram(x, y, sigma):
    """Pairwise Gaussian kernel matrix exp(-||x_i - y_j||^2 / (2 sigma^2))."""
    d2 = cdist(x, y, "sqeuclidean")
    return np.exp(-d2 / (2.0 * sigma * sigma))


def gaussian_kde(queries, points, weights, sigma):
    """Weighted Gaussian product-kernel density estimate at the query points.

    Returns sum_i w_i * (2 pi sigma^2)^(-d/2) * exp(-||q - p_i||^2 / (2 sigma^2)).
    """
    d = points.shape[1]
    norm = (2.0 * np.pi * sigma * sigma) ** (-0.5 * d)
    out = np.empty(len(queries))
    for lo in range(0, len(queries), _KDE_CHUNK):
        block = queries[lo : lo + _KDE_CHUNK]
        k = np.exp(-cdist(block, points, "sqeuclidean") / (2.0 * sigma * sigma))
        out[lo : lo + _KDE_CHUNK] = k @ weights
    out *= norm
    return out


def weighted_cross_sum(x, wx, y, wy, sigma):
    """sum_ij wx_i wy_j k(x_i, y_j) without keeping the full kernel block."""
    total = 0.0
    for lo in range(0, len(x), _KDE_CHUNK):
        block = x[lo : lo + _KDE_CHUNK]
        k = np.exp(-cdist(block, y, "sqeuclidean") / (2.0 * sigma * sigma))
        total += wx[lo : lo + _KDE_CHUNK] @ (k @ wy)
    return float(total)
