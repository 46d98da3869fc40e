"""Weak and strong input perturbations, including patch-aligned random masking."""
from __future__ import annotations

from dataclasses import dataclass, replace

import cv2
import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .data import PointAnnotations, SceneRecord, _clamp_points_inward

SCALE_RANGE = (0.7, 1.3)
DEFAULT_PATCH_SIZE = 32
DEFAULT_MASK_RATIO = 0.3
# Jitter is applied within +/- strength; the hue shift is in [0, 1) hue units.
JITTER_BRIGHTNESS = 0.4
JITTER_CONTRAST = 0.4
JITTER_SATURATION = 0.4
JITTER_HUE = 0.1
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


class BadGeometry(ValueError):
    pass


class GeometryMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TransformRecord:
    flip: bool
    scale: float
    crop_origin: tuple[int, int]  # (x, y)
    crop_size: int


@dataclass(frozen=True)
class MaskSpec:
    """The set of masked patches, indexed on the patch grid."""

    patch_size: int
    ratio: float
    grid: tuple[int, int]  # (rows, cols)
    masked: np.ndarray  # (M, 2) int array of (row, col), lexicographically sorted

    def __post_init__(self):
        patches = np.asarray(self.masked, dtype=np.int64).reshape(-1, 2)
        rows, cols = self.grid
        if self.patch_size % 8:
            raise BadGeometry(f"patch size {self.patch_size} not divisible by 8")
        expected = round(self.ratio * rows * cols)
        if len(patches) != expected:
            raise BadGeometry(f"expected {expected} masked patches, got {len(patches)}")
        if len(patches) and (
            patches.min() < 0 or patches[:, 0].max() >= rows or patches[:, 1].max() >= cols
        ):
            raise BadGeometry("masked patch index outside grid")
        object.__setattr__(self, "masked", patches)

    @property
    def n_masked(self) -> int:
        return len(self.masked)

    def to_json(self) -> dict:
        return {
            "patch_size": self.patch_size,
            "ratio": self.ratio,
            "grid": list(self.grid),
            "masked": self.masked.tolist(),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "MaskSpec":
        return cls(
            patch_size=payload["patch_size"],
            ratio=payload["ratio"],
            grid=tuple(payload["grid"]),
            masked=np.asarray(payload["masked"], dtype=np.int64).reshape(-1, 2),
        )


def _resize_scene(record: SceneRecord, new_h: int, new_w: int) -> SceneRecord:
    h, w = record.shape
    if (new_h, new_w) == (h, w):
        return record
    image = cv2.resize(record.image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    annotations = record.annotations
    if annotations is not None:
        pts = annotations.points * np.array([new_w / w, new_h / h])
        annotations = PointAnnotations(_clamp_points_inward(pts, new_h, new_w))
    return replace(record, image=image, annotations=annotations)


def apply_weak(
    record: SceneRecord, scale: float, flip: bool, origin: tuple[int, int], crop: int
) -> SceneRecord:
    """Deterministic core of the weak perturbation: scale, flip, crop.

    Point annotations are transformed identically and re-filtered to the
    crop window; the density map is meant to be regenerated from the
    surviving points rather than interpolated.
    """
    h, w = record.shape
    record = _resize_scene(record, max(1, round(h * scale)), max(1, round(w * scale)))
    h, w = record.shape
    image = record.image
    points = record.annotations.points if record.annotations is not None else None
    if flip:
        image = np.ascontiguousarray(image[:, ::-1])
        if points is not None:
            points = points.copy()
            points[:, 0] = np.clip((w - 1) - points[:, 0], 0.0, None)
    ox, oy = origin
    if not (0 <= ox <= w - crop and 0 <= oy <= h - crop):
        raise ValueError(f"crop {crop} at {origin} outside {h}x{w} image")
    view = image[oy : oy + crop, ox : ox + crop].copy()
    annotations = None
    if points is not None:
        shifted = points - np.array([ox, oy], dtype=np.float64)
        inside = (
            (shifted[:, 0] >= 0)
            & (shifted[:, 0] < crop)
            & (shifted[:, 1] >= 0)
            & (shifted[:, 1] < crop)
        )
        annotations = PointAnnotations(shifted[inside])
    return replace(record, image=view, annotations=annotations)


def weak_augment(
    record: SceneRecord, crop: int, rng: np.random.Generator
) -> tuple[SceneRecord, TransformRecord]:
    """Random scale in [0.7, 1.3], horizontal flip (p=0.5), random crop.

    When the drawn scale leaves either side shorter than the crop, the
    scene is rescaled up just enough for the crop window to fit.
    """
    h, w = record.shape
    scale = float(rng.uniform(*SCALE_RANGE))
    new_h, new_w = max(1, round(h * scale)), max(1, round(w * scale))
    if min(new_h, new_w) < crop:
        grow = crop / min(new_h, new_w)
        new_h, new_w = max(crop, round(new_h * grow)), max(crop, round(new_w * grow))
        scale = min(new_h / h, new_w / w)
    flip = bool(rng.random() < 0.5)
    ox = int(rng.integers(0, new_w - crop + 1))
    oy = int(rng.integers(0, new_h - crop + 1))
    scaled = _resize_scene(record, new_h, new_w)
    view = apply_weak(scaled, 1.0, flip, (ox, oy), crop)
    return view, TransformRecord(flip=flip, scale=scale, crop_origin=(ox, oy), crop_size=crop)


def apply_jitter(
    image: np.ndarray, brightness: float, contrast: float, saturation: float, hue: float
) -> np.ndarray:
    """Deterministic jitter core: multiplicative factors and a hue shift."""
    out = image.astype(np.float32, copy=True)
    if brightness != 1.0:
        out *= brightness
    if contrast != 1.0:
        mean = float((out @ _LUMA).mean())
        out = mean + (out - mean) * contrast
    if saturation != 1.0:
        gray = (out @ _LUMA)[..., None]
        out = gray + (out - gray) * saturation
    out = np.clip(out, 0.0, 1.0)
    if hue != 0.0:
        hsv = rgb_to_hsv(out)
        hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
        out = hsv_to_rgb(hsv).astype(np.float32)
    return out


def color_jitter(
    image: np.ndarray,
    rng: np.random.Generator,
    brightness: float = JITTER_BRIGHTNESS,
    contrast: float = JITTER_CONTRAST,
    saturation: float = JITTER_SATURATION,
    hue: float = JITTER_HUE,
) -> np.ndarray:
    """Randomized brightness/contrast/saturation/hue shifts, clipped to [0, 1].

    Each strength of 0 disables its component exactly, leaving those pixels
    bit-identical; pixel geometry never changes.
    """
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("color_jitter expects an image in [0, 1]")
    fb = float(rng.uniform(max(0.0, 1 - brightness), 1 + brightness)) if brightness > 0 else 1.0
    fc = float(rng.uniform(max(0.0, 1 - contrast), 1 + contrast)) if contrast > 0 else 1.0
    fs = float(rng.uniform(max(0.0, 1 - saturation), 1 + saturation)) if saturation > 0 else 1.0
    dh = float(rng.uniform(-hue, hue)) if hue > 0 else 0.0
    if (fb, fc, fs, dh) == (1.0, 1.0, 1.0, 0.0):
        return image.copy()
    return apply_jitter(image, fb, fc, fs, dh)


def sample_mask(
    image_size: int | tuple[int, int],
    rng: np.random.Generator,
    patch_size: int = DEFAULT_PATCH_SIZE,
    ratio: float = DEFAULT_MASK_RATIO,
) -> MaskSpec:
    """Choose exactly round(ratio * n_patches) patches uniformly, without replacement."""
    if isinstance(image_size, (int, np.integer)):
        image_size = (int(image_size), int(image_size))
    h, w = image_size
    if h % patch_size or w % patch_size:
        raise BadGeometry(f"{h}x{w} image not divisible by patch size {patch_size}")
    rows, cols = h // patch_size, w // patch_size
    n_patches = rows * cols
    n_masked = round(ratio * n_patches)
    chosen = np.sort(rng.choice(n_patches, size=n_masked, replace=False))
    masked = np.stack([chosen // cols, chosen % cols], axis=1)
    return MaskSpec(patch_size=patch_size, ratio=ratio, grid=(rows, cols), masked=masked)


def apply_mask(image: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Zero-fill masked patches in all channels; unmasked pixels are untouched."""
    rows, cols = spec.grid
    ps = spec.patch_size
    if image.shape[0] != rows * ps or image.shape[1] != cols * ps:
        raise GeometryMismatch(
            f"image {image.shape[:2]} does not match grid {spec.grid} at patch {ps}"
        )
    out = image.copy()
    for r, c in spec.masked:
        out[r * ps : (r + 1) * ps, c * ps : (c + 1) * ps] = 0.0
    return out


def mask_to_output_grid(spec: MaskSpec, stride: int = 8) -> np.ndarray:
    """Boolean map of the masked cells on the stride-8 output grid."""
    if spec.patch_size % stride:
        raise BadGeometry(f"patch size {spec.patch_size} not divisible by stride {stride}")
    per = spec.patch_size // stride
    rows, cols = spec.grid
    omega = np.zeros((rows * per, cols * per), dtype=bool)
    for r, c in spec.masked:
        omega[r * per : (r + 1) * per, c * per : (c + 1) * per] = True
    return omega
