"""Gaussian kernel evaluation, Gram matrices, bandwidth selection and MMD.

All estimators here are plain kernel-sum formulas; the pairwise work is
delegated to the selected compute backend (compiled or numpy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _core

MEDIAN_HEURISTIC_CAP = 1000


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidth.  Only the Gaussian kernel ships."""

    bandwidth: float
    family: str = "gaussian"

    def __post_init__(self):
        if self.family != "gaussian":
            raise ValueError(f"unsupported kernel family: {self.family!r}")
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive and finite")


@dataclass(frozen=True)
class GramMatrix:
    """Dense kernel matrix together with the points that produced it."""

    entries: np.ndarray
    points: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def _as_points(x, name="points"):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"{name} must be a nonempty 2-d array")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Evaluate exp(-||x - y||^2 / (2 sigma^2)) for a single pair."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("non-finite input")
    d2 = float(np.sum((x - y) ** 2))
    return float(np.exp(-d2 / (2.0 * spec.bandwidth**2)))


def gram(spec: KernelSpec, points) -> GramMatrix:
    """Pairwise kernel matrix over a point set."""
    pts = _as_points(points)
    return GramMatrix(entries=_core.gaussian_gram(pts, pts, spec.bandwidth), points=pts)


def cross_gram(spec: KernelSpec, a, b) -> np.ndarray:
    """Kernel matrix between two point sets (rows of a vs rows of b)."""
    pa, pb = _as_points(a, "a"), _as_points(b, "b")
    if pa.shape[1] != pb.shape[1]:
        raise ValueError("dimension mismatch between samples")
    return _core.gaussian_gram(pa, pb, spec.bandwidth)


def median_heuristic(points, max_points: int = MEDIAN_HEURISTIC_CAP, seed: int = 0) -> float:
    """Median pairwise Euclidean distance, on a seeded subsample of at most
    ``max_points`` points to bound the O(n^2) cost."""
    pts = _as_points(points)
    if pts.shape[0] < 2:
        raise ValueError("median heuristic needs at least 2 points")
    if pts.shape[0] > max_points:
        idx = np.random.default_rng(seed).choice(pts.shape[0], size=max_points, replace=False)
        pts = pts[np.sort(idx)]
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    iu = np.triu_indices(pts.shape[0], k=1)
    med = float(np.median(d[iu]))
    if med <= 0.0:
        raise ValueError("degenerate sample: all points identical")
    return med


def mmd2(sample_a, sample_b, spec: KernelSpec, estimator: str = "biased") -> float:
    """Squared MMD between two samples.

    ``biased`` is the V-statistic (always >= 0, exactly 0 for identical
    samples); ``unbiased`` excludes within-sample diagonals and may be
    negative.
    """
    a, b = _as_points(sample_a, "sample_a"), _as_points(sample_b, "sample_b")
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch between samples")
    kaa = _core.gaussian_gram(a, a, spec.bandwidth)
    kbb = _core.gaussian_gram(b, b, spec.bandwidth)
    kab = _core.gaussian_gram(a, b, spec.bandwidth)
    n, m = len(a), len(b)
    if estimator == "biased":
        val = kaa.mean() - 2.0 * kab.mean() + kbb.mean()
        return max(0.0, float(val))
    if estimator == "unbiased":
        if n < 2 or m < 2:
            raise ValueError("unbiased estimator needs at least 2 points per sample")
        saa = (kaa.sum() - np.trace(kaa)) / (n * (n - 1))
        sbb = (kbb.sum() - np.trace(kbb)) / (m * (m - 1))
        return float(saa + sbb - 2.0 * kab.mean())
    raise ValueError(f"unknown estimator: {estimator!r}")


def mmd2_weighted(sample_a, weights_a, sample_b, weights_b, spec: KernelSpec) -> float:
    """Biased squared MMD between two weighted empirical measures.

    Weights must each sum to 1; the value is the squared RKHS distance of the
    two weighted mean embeddings, clamped at 0 against rounding.
    """
    a, b = _as_points(sample_a, "sample_a"), _as_points(sample_b, "sample_b")
    wa = np.ascontiguousarray(np.asarray(weights_a, dtype=float))
    wb = np.ascontiguousarray(np.asarray(weights_b, dtype=float))
    if wa.shape != (len(a),) or wb.shape != (len(b),):
        raise ValueError("weights must match sample lengths")
    if np.any(wa < 0) or np.any(wb < 0):
        raise ValueError("weights must be nonnegative")
    s = _core.weighted_cross_sum
    val = (
        s(a, wa, a, wa, spec.bandwidth)
        - 2.0 * s(a, wa, b, wb, spec.bandwidth)
        + s(b, wb, b, wb, spec.bandwidth)
    )
    return max(0.0, float(val))


def mean_embedding_eval(sample, spec: KernelSpec, z) -> float:
    """Empirical mean embedding (1/n) sum_i k(z_i, z) evaluated at z."""
    pts = _as_points(sample)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape[0] != pts.shape[1]:
        raise ValueError(f"dimension mismatch: sample dim {pts.shape[1]}, z dim {z.shape[0]}")
    k = _core.gaussian_gram(pts, np.ascontiguousarray(z[None, :]), spec.bandwidth)
    return float(k.mean())
