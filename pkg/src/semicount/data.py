"""Scene records, point annotations, and deterministic labeled/unlabeled splits."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

MAX_SIDE = 1920
MIN_SIDE = 64


class MissingFile(FileNotFoundError):
    pass


class MalformedRecord(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class PointAnnotations:
    """Head locations as an (N, 2) array of (x, y) pixel coordinates."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]


@dataclass(frozen=True)
class SceneRecord:
    """One crowd image plus optional point annotations.

    ``image`` is (H, W, 3) float32 in [0, 1]. ``annotations`` is None for
    unlabeled scenes.
    """

    image: np.ndarray
    annotations: PointAnnotations | None
    id: str
    source: str = "unknown"

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float32)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"scene {self.id}: image must be (H, W, 3), got {img.shape}")
        h, w = img.shape[:2]
        if h < MIN_SIDE or w < MIN_SIDE:
            raise ValueError(f"scene {self.id}: sides must be >= {MIN_SIDE}, got {h}x{w}")
        object.__setattr__(self, "image", img)
        if self.annotations is not None and self.annotations.count:
            x, y = self.annotations.x, self.annotations.y
            if x.min() < 0 or y.min() < 0 or x.max() >= w or y.max() >= h:
                raise ValueError(f"scene {self.id}: annotation outside image bounds")

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]

    @property
    def labeled(self) -> bool:
        return self.annotations is not None


def load_annotations(path: str | Path) -> PointAnnotations:
    """Parse a ``.pts`` sidecar: one ``x,y`` pair of decimal floats per line."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    points = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 2:
            raise MalformedRecord(f"{path}:{lineno}: expected 'x,y', got {line!r}")
        coords = []
        for field_no, field in enumerate(fields):
            try:
                value = float(field)
            except ValueError:
                raise MalformedRecord(
                    f"{path}:{lineno}: field {field_no + 1} is not a float: {field!r}"
                ) from None
            if not np.isfinite(value):
                raise MalformedRecord(
                    f"{path}:{lineno}: field {field_no + 1} is non-finite: {field!r}"
                )
            coords.append(value)
        points.append(coords)
    return PointAnnotations(np.array(points, dtype=np.float64).reshape(-1, 2))


def save_annotations(path: str | Path, annotations: PointAnnotations) -> None:
    lines = [f"{float(x)!r},{float(y)!r}" for x, y in annotations.points]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_image(path: str | Path) -> np.ndarray:
    """Read a PNG/JPEG file as (H, W, 3) float32 in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
    return rgb / 255.0


def save_image(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image) * 255.0, 0, 255).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_scene(image_path: str | Path, source: str = "unknown") -> SceneRecord:
    """Load one image and, when its ``.pts`` sidecar exists, its annotations.

    Scenes are size-normalized on ingestion: the longer side is capped at
    1920 pixels.
    """
    image_path = Path(image_path)
    image = load_image(image_path)
    sidecar = image_path.with_suffix(".pts")
    annotations = load_annotations(sidecar) if sidecar.is_file() else None
    record = SceneRecord(image=image, annotations=annotations, id=image_path.stem, source=source)
    return resize_to_limit(record)


def discover_scenes(directory: str | Path, source: str = "unknown") -> list[SceneRecord]:
    """Load every PNG/JPEG under ``directory`` (non-recursive), sorted by id."""
    directory = Path(directory)
    paths = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    return [load_scene(p, source=source) for p in paths]


def _clamp_points_inward(points: np.ndarray, h: int, w: int) -> np.ndarray:
    # Points landing exactly on the right/bottom edge move inward by one pixel
    # so every point stays inside a valid density-map cell.
    pts = points.copy()
    pts[:, 0] = np.where(pts[:, 0] >= w, w - 1.0, np.maximum(pts[:, 0], 0.0))
    pts[:, 1] = np.where(pts[:, 1] >= h, h - 1.0, np.maximum(pts[:, 1], 0.0))
    return pts


def resize_to_limit(record: SceneRecord, max_side: int = MAX_SIDE) -> SceneRecord:
    """Scale a scene down so its longer side is at most ``max_side``.

    Images already within the limit pass through unchanged. Bilinear
    interpolation for pixels; point coordinates are multiplied by the same
    scale factor.
    """
    h, w = record.shape
    longer = max(h, w)
    if longer <= max_side:
        return record
    s = max_side / longer
    new_h, new_w = int(round(h * s)), int(round(w * s))
    image = cv2.resize(record.image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    annotations = record.annotations
    if annotations is not None:
        pts = _clamp_points_inward(annotations.points * s, new_h, new_w)
        annotations = PointAnnotations(pts)
    return replace(record, image=image, annotations=annotations)


@dataclass
class SplitSpec:
    """Deterministic labeled/unlabeled partition of a training set."""

    labeled_fraction: float
    seed: int
    labeled_ids: list[str] | None = None
    unlabeled_ids: list[str] | None = None

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "labeled_fraction": self.labeled_fraction,
            "labeled_ids": self.labeled_ids,
            "unlabeled_ids": self.unlabeled_ids,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "SplitSpec":
        return cls(
            labeled_fraction=payload["labeled_fraction"],
            seed=payload["seed"],
            labeled_ids=payload.get("labeled_ids"),
            unlabeled_ids=payload.get("unlabeled_ids"),
        )


def make_split(ids: list[str], spec: SplitSpec) -> tuple[list[str], list[str]]:
    """Split ids into (labeled, unlabeled) lists.

    The split depends only on the id *set* and the seed: ids are sorted
    before shuffling, so permuting the input order changes nothing.
    """
    if not 0.0 < spec.labeled_fraction <= 1.0:
        raise ValueError(f"labeled_fraction must be in (0, 1], got {spec.labeled_fraction}")
    if not ids:
        raise EmptyDataset("cannot split an empty id list")
    ordered = sorted(ids)
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(len(ordered))
    n_labeled = round(spec.labeled_fraction * len(ordered))
    labeled = sorted(ordered[i] for i in perm[:n_labeled])
    unlabeled = sorted(ordered[i] for i in perm[n_labeled:])
    return labeled, unlabeled


def materialize_split(ids: list[str], spec: SplitSpec) -> SplitSpec:
    labeled, unlabeled = make_split(ids, spec)
    return replace(spec, labeled_ids=labeled, unlabeled_ids=unlabeled)


def save_split(path: str | Path, spec: SplitSpec) -> None:
    Path(path).write_text(json.dumps(spec.to_json(), indent=2) + "\n", encoding="utf-8")


def load_split(path: str | Path) -> SplitSpec:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    return SplitSpec.from_json(json.loads(path.read_text(encoding="utf-8")))
