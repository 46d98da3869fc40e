"""Synthetic crowd scenes: shaded blob "heads" with density gradients, scale
variation, and background clutter, annotated with exact center points."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import PointAnnotations, SceneRecord, save_annotations, save_image

GRADIENT_DIRECTIONS = ("none", "down", "up", "right", "left")


@dataclass
class SceneSpec:
    size: int = 256
    count_range: tuple[int, int] = (20, 80)
    gradient_direction: str = "down"  # axis along which crowds thicken
    gradient_strength: float = 0.7  # 0 = uniform, 1 = fully ramped
    head_radius_range: tuple[float, float] = (3.0, 8.0)
    clutter_level: float = 0.3
    head_level_range: tuple[float, float] = (0.05, 0.3)  # head brightness family
    background_range: tuple[float, float] = (0.5, 0.75)  # per-channel tint family
    # With variety > 0 each generated scene perturbs direction, gradient
    # strength, clutter, head sizes, head brightness, and background tint
    # around this base spec, so a small labeled subset cannot cover the
    # whole scene distribution.
    variety: float = 0.0

    def __post_init__(self):
        if self.gradient_direction not in GRADIENT_DIRECTIONS:
            raise ValueError(f"unknown gradient direction {self.gradient_direction!r}")
        if self.count_range[0] < 0 or self.count_range[1] < self.count_range[0]:
            raise ValueError(f"bad count range {self.count_range}")
        if self.head_radius_range[0] < 1.0:
            raise ValueError("head radii must be >= 1 pixel")
        if not 0.0 <= self.variety <= 1.0:
            raise ValueError("variety must lie in [0, 1]")


def vary_spec(spec: SceneSpec, rng: np.random.Generator) -> SceneSpec:
    """Per-scene perturbation of a base spec, driven by the scene's rng."""
    if spec.variety <= 0.0:
        return spec
    v = spec.variety
    direction = spec.gradient_direction
    if direction != "none":
        direction = str(rng.choice(GRADIENT_DIRECTIONS[1:]))
    strength = float(np.clip(spec.gradient_strength + v * rng.uniform(-0.5, 0.5), 0.0, 1.0))
    clutter = float(np.clip(spec.clutter_level * (1.0 + v * rng.uniform(-0.8, 0.8)), 0.0, 1.0))
    r_lo, r_hi = spec.head_radius_range
    grow = 1.0 + v * rng.uniform(-0.3, 0.5)
    radii = (max(1.0, r_lo * grow), max(1.5, r_hi * grow))
    level_lo = rng.uniform(0.05, 0.05 + v * 0.3)
    levels = (level_lo, min(level_lo + 0.2, 0.55))
    bg_lo = rng.uniform(0.45, 0.45 + v * 0.3)
    background = (bg_lo, min(bg_lo + 0.25, 0.95))
    return SceneSpec(
        size=spec.size,
        count_range=spec.count_range,
        gradient_direction=direction,
        gradient_strength=strength,
        head_radius_range=radii,
        clutter_level=clutter,
        head_level_range=levels,
        background_range=background,
        variety=0.0,
    )


def _gradient_coord(spec: SceneSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Position along the density gradient, normalized to [0, 1]."""
    s = spec.size
    if spec.gradient_direction == "down":
        return y / s
    if spec.gradient_direction == "up":
        return 1.0 - y / s
    if spec.gradient_direction == "right":
        return x / s
    if spec.gradient_direction == "left":
        return 1.0 - x / s
    return np.full_like(np.asarray(x, dtype=np.float64), 0.5)


def _sample_centers(spec: SceneSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample n centers against a linear density ramp."""
    g = spec.gradient_strength
    centers = np.empty((n, 2))
    placed = 0
    while placed < n:
        m = max(16, 2 * (n - placed))
        x = rng.uniform(1.0, spec.size - 1.0, size=m)
        y = rng.uniform(1.0, spec.size - 1.0, size=m)
        t = _gradient_coord(spec, x, y)
        accept = rng.random(m) < (1.0 - g) + g * t
        xs, ys = x[accept], y[accept]
        take = min(len(xs), n - placed)
        centers[placed : placed + take, 0] = xs[:take]
        centers[placed : placed + take, 1] = ys[:take]
        placed += take
    return centers


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.size
    base = rng.uniform(*spec.background_range, size=3)  # per-channel tint
    img = np.broadcast_to(base, (s, s, 3)).astype(np.float64).copy()
    if spec.clutter_level > 0:
        field = gaussian_filter(rng.standard_normal((s, s)), sigma=s / 24.0)
        field /= max(field.std(), 1e-9)
        tint = rng.uniform(0.5, 1.0, size=3)
        img += 0.22 * spec.clutter_level * field[..., None] * tint
        img += 0.03 * spec.clutter_level * rng.standard_normal((s, s, 3))
    return img


def _draw_head(
    img: np.ndarray,
    x: float,
    y: float,
    radius: float,
    level_range: tuple[float, float],
    rng: np.random.Generator,
):
    """Anti-aliased disc with radial shading, blended over the background."""
    s = img.shape[0]
    r = int(np.ceil(radius)) + 1
    y0, y1 = max(0, int(y) - r), min(s, int(y) + r + 1)
    x0, x1 = max(0, int(x) - r), min(s, int(x) + r + 1)
    ys = np.arange(y0, y1, dtype=np.float64) - y
    xs = np.arange(x0, x1, dtype=np.float64) - x
    dist = np.sqrt(ys[:, None] ** 2 + xs[None, :] ** 2)
    coverage = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    profile = np.clip(1.0 - (dist / radius) ** 2, 0.0, 1.0)
    level = rng.uniform(*level_range)
    tint = level + rng.uniform(-0.04, 0.04, size=3)
    shade = (level + 0.5 * (1.0 - profile))[..., None] * tint / max(level, 1e-6)
    alpha = coverage[..., None]
    img[y0:y1, x0:x1] = img[y0:y1, x0:x1] * (1.0 - alpha) + np.clip(shade, 0.0, 1.0) * alpha


def gen_scene(spec: SceneSpec, rng: np.random.Generator, scene_id: str = "scene") -> SceneRecord:
    """Render one scene; its annotations are the exact head centers."""
    spec = vary_spec(spec, rng)
    lo, hi = spec.count_range
    n = int(rng.integers(lo, hi + 1))
    img = _background(spec, rng)
    centers = _sample_centers(spec, n, rng) if n else np.empty((0, 2))
    r_lo, r_hi = spec.head_radius_range
    for x, y in centers:
        t = float(_gradient_coord(spec, np.array(x), np.array(y)))
        # Heads shrink along the gradient, mimicking perspective.
        radius = (r_hi + (r_lo - r_hi) * t) * (1.0 + 0.15 * rng.uniform(-1.0, 1.0))
        _draw_head(img, x, y, max(1.0, radius), spec.head_level_range, rng)
    image = np.clip(img, 0.0, 1.0).astype(np.float32)
    return SceneRecord(
        image=image, annotations=PointAnnotations(centers), id=scene_id, source="synthetic"
    )


def gen_dataset(
    spec: SceneSpec, n_images: int, seed: int, out_dir: str | Path, prefix: str = "scene"
) -> dict:
    """Write a deterministic dataset: PNGs, .pts sidecars, and a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_images):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        scene_id = f"{prefix}_{i:04d}"
        record = gen_scene(spec, rng, scene_id=scene_id)
        save_image(out_dir / f"{scene_id}.png", record.image)
        save_annotations(out_dir / f"{scene_id}.pts", record.annotations)
        entries.append({"id": scene_id, "file": f"{scene_id}.png", "count": record.annotations.count})
    manifest = {
        "seed": seed,
        "n_images": n_images,
        "spec": _spec_dict(spec),
        "images": entries,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def _spec_dict(spec: SceneSpec) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()}


def spec_from_dict(payload: dict) -> SceneSpec:
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in payload.items()}
    return SceneSpec(**kwargs)
