"""Ground-truth density maps and the density-level interval partition."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .data import PointAnnotations

DEFAULT_SIGMA = 4.0
DEFAULT_SIGMA_CAP = 25.0
KERNEL_TRUNCATE = 4.0  # kernel support radius, in units of sigma
OUTPUT_STRIDE = 8
LEVELS = 25


class ShapeNotDivisible(ValueError):
    pass


class DegenerateSample(UserWarning):
    pass


@dataclass(frozen=True)
class DensityMap:
    """Nonnegative scalar field whose sum approximates the object count."""

    values: np.ndarray
    stride: int = 1

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError(f"density map must be 2-D, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class ClassMap:
    """Per-cell density-level labels on the stride-8 output grid."""

    levels: np.ndarray
    stride: int = OUTPUT_STRIDE

    def __post_init__(self):
        object.__setattr__(self, "levels", np.asarray(self.levels, dtype=np.int64))


def _add_kernel(values: np.ndarray, x: float, y: float, sigma: float) -> None:
    # One truncated Gaussian, renormalized so its in-image mass is exactly 1.
    h, w = values.shape
    r = KERNEL_TRUNCATE * sigma
    y0 = max(0, int(np.floor(y - r)))
    y1 = min(h, int(np.ceil(y + r)) + 1)
    x0 = max(0, int(np.floor(x - r)))
    x1 = min(w, int(np.ceil(x + r)) + 1)
    ys = np.arange(y0, y1, dtype=np.float64) - y
    xs = np.arange(x0, x1, dtype=np.float64) - x
    kernel = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma * sigma))
    kernel *= (np.abs(ys) <= r)[:, None] & (np.abs(xs) <= r)[None, :]
    mass = kernel.sum()
    if mass <= 0.0:
        # Support fell entirely outside a truncation corner; degrade to the
        # nearest in-image cell so the point still contributes mass 1.
        iy = min(max(int(round(y)), 0), h - 1)
        ix = min(max(int(round(x)), 0), w - 1)
        values[iy, ix] += 1.0
        return
    values[y0:y1, x0:x1] += kernel / mass


def fixed_kernel_density(
    points: PointAnnotations, shape: tuple[int, int], sigma: float = DEFAULT_SIGMA
) -> DensityMap:
    """Stride-1 density map with one fixed-bandwidth Gaussian per point."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    values = np.zeros(shape, dtype=np.float64)
    for x, y in points.points:
        _add_kernel(values, x, y, sigma)
    return DensityMap(values, stride=1)


def adaptive_kernel_density(
    points: PointAnnotations,
    shape: tuple[int, int],
    k: int = 3,
    beta: float = 0.3,
    sigma_cap: float = DEFAULT_SIGMA_CAP,
) -> DensityMap:
    """Stride-1 density map with geometry-adaptive bandwidths.

    Each point's sigma is ``beta`` times its mean distance to the ``k``
    nearest other points, capped at ``sigma_cap``. With ``k`` or fewer
    points in total there are no usable neighbors and every point falls
    back to the fixed default bandwidth.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = points.count
    if n <= k:
        sigmas = np.full(n, DEFAULT_SIGMA)
    else:
        tree = cKDTree(points.points)
        dists, _ = tree.query(points.points, k=k + 1)
        sigmas = np.minimum(beta * dists[:, 1:].mean(axis=1), sigma_cap)
        sigmas = np.maximum(sigmas, 1e-3)  # coincident points give distance 0
    values = np.zeros(shape, dtype=np.float64)
    for (x, y), sigma in zip(points.points, sigmas):
        _add_kernel(values, x, y, sigma)
    return DensityMap(values, stride=1)


def downsample_density(dmap: DensityMap, factor: int = OUTPUT_STRIDE) -> DensityMap:
    """Sum-pool over factor x factor blocks; the total is preserved exactly."""
    h, w = dmap.shape
    if h % factor or w % factor:
        raise ShapeNotDivisible(f"{h}x{w} map not divisible by {factor}")
    pooled = dmap.values.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))
    return DensityMap(pooled, stride=dmap.stride * factor)


def pad_image_to_multiple(image: np.ndarray, multiple: int = OUTPUT_STRIDE) -> np.ndarray:
    """Reflect-pad image pixels on the bottom/right up to the next multiple."""
    h, w = image.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return image
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pad, mode="reflect")


def pad_density_to_multiple(dmap: DensityMap, multiple: int = OUTPUT_STRIDE) -> DensityMap:
    """Zero-pad density on the bottom/right; conserves the total count."""
    h, w = dmap.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return dmap
    return DensityMap(np.pad(dmap.values, [(0, ph), (0, pw)]), stride=dmap.stride)


@dataclass(frozen=True)
class Partition:
    """Ordered density intervals with per-interval mean-count proxies.

    ``boundaries[0] == 0`` and interval 0 is the singleton {0}; interval k
    (k >= 1) is the half-open range (boundaries[k-1], boundaries[k]].
    Counts above the last boundary clamp to the top level.
    """

    boundaries: np.ndarray
    proxies: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        p = np.asarray(self.proxies, dtype=np.float64)
        if b[0] != 0.0:
            raise ValueError("first boundary must be 0")
        if len(b) != len(p):
            raise ValueError("boundaries and proxies must have equal length")
        if len(b) > 1 and not np.all(np.diff(b) > 0):
            raise ValueError("boundaries must be strictly ascending")
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "proxies", p)

    @property
    def levels(self) -> int:
        return len(self.proxies)

    def classify(self, counts: np.ndarray) -> np.ndarray:
        """Map nonnegative per-cell counts to level indices in [0, K-1]."""
        counts = np.asarray(counts, dtype=np.float64)
        idx = np.searchsorted(self.boundaries, counts, side="left")
        return np.minimum(idx, self.levels - 1).astype(np.int64)

    def to_json(self) -> dict:
        return {
            "boundaries": self.boundaries.tolist(),
            "proxies": self.proxies.tolist(),
            "K": self.levels,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Partition":
        return cls(np.asarray(payload["boundaries"]), np.asarray(payload["proxies"]))


def save_partition(path: str | Path, partition: Partition) -> None:
    Path(path).write_text(json.dumps(partition.to_json()) + "\n", encoding="utf-8")


def load_partition(path: str | Path) -> Partition:
    return Partition.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def build_partition(cell_counts: np.ndarray, levels: int = LEVELS) -> Partition:
    """Fit a K-level interval partition to a sample of per-cell counts.

    Interval 0 is the singleton {0}. The remaining K-1 boundaries are
    placed geometrically over (0, max]: b_j = max**(j / (K-1)), which
    concentrates resolution at low counts. Proxies are empirical interval
    means, or the interval midpoint when the sample leaves one empty.
    """
    counts = np.asarray(cell_counts, dtype=np.float64).ravel()
    if counts.size == 0:
        raise ValueError("cell_counts must be nonempty")
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    top = float(counts.max())
    if top <= 0.0:
        warnings.warn(
            "all sampled cell counts are zero; partition collapses to one level",
            DegenerateSample,
            stacklevel=2,
        )
        return Partition(np.array([0.0]), np.array([0.0]))
    exponents = np.arange(1, levels) / (levels - 1)
    if top > 1.0:
        upper = top**exponents
    else:
        # The power ladder is non-ascending for max <= 1; use a fixed-ratio
        # geometric ladder ending at the sample max instead.
        upper = top * 2.0 ** (np.arange(1, levels, dtype=np.float64) - (levels - 1))
    boundaries = np.concatenate([[0.0], upper])
    proxies = np.zeros(levels)
    positive = counts[counts > 0.0]
    idx = np.minimum(np.searchsorted(boundaries, positive, side="left"), levels - 1)
    for level in range(1, levels):
        members = positive[idx == level]
        if members.size:
            proxies[level] = members.mean()
        else:
            proxies[level] = 0.5 * (boundaries[level - 1] + boundaries[level])
    return Partition(boundaries, proxies)


def density_to_class(dmap: DensityMap, partition: Partition) -> ClassMap:
    """Label every stride-8 cell with the interval containing its count."""
    return ClassMap(partition.classify(dmap.values), stride=dmap.stride)


def class_to_count(classmap: ClassMap, partition: Partition) -> float:
    """Decode a class map to a count by summing interval proxies."""
    return float(partition.proxies[classmap.levels].sum())
