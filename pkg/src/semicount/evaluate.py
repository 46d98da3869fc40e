"""Counting metrics (MAE / root-MSE) and the progressive corruption probes."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .data import SceneRecord
from .model import CountingModel, predict

PROBE_NOISE_STD = 50.0 / 255.0  # std 50 on the 0-255 intensity scale
PROBE_PATCH = 32


class EmptyResults(ValueError):
    pass


@dataclass(frozen=True)
class EvalRow:
    id: str
    pred: float
    gt: float

    @property
    def abs_err(self) -> float:
        return abs(self.pred - self.gt)


@dataclass(frozen=True)
class EvalResult:
    rows: tuple[EvalRow, ...]
    mae: float
    mse: float
    abs_err_sum: float  # raw (un-normalized) absolute-error sum, kept for the record

    @classmethod
    def from_rows(cls, rows: list[EvalRow]) -> "EvalResult":
        mae, mse = mae_mse([(r.pred, r.gt) for r in rows])
        return cls(
            rows=tuple(rows), mae=mae, mse=mse, abs_err_sum=sum(r.abs_err for r in rows)
        )


def predict_count(model: CountingModel, image: np.ndarray, flip_average: bool = False) -> float:
    """Predicted count: the sum of the stride-8 density map.

    With ``flip_average`` the counts of the image and its mirror are
    averaged (off by default).
    """
    density, _ = predict(model, image)
    count = density.total
    if flip_average:
        mirrored, _ = predict(model, np.ascontiguousarray(image[:, ::-1]))
        count = 0.5 * (count + mirrored.total)
    return count


def mae_mse(pairs) -> tuple[float, float]:
    """MAE and root-mean-squared count error over (pred, gt) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyResults("no results to aggregate")
    errors = np.array([float(p) - float(g) for p, g in pairs])
    mae = float(np.abs(errors).mean())
    mse = float(math.sqrt((errors**2).mean()))
    return mae, mse


def evaluate_records(
    model: CountingModel, records: list[SceneRecord], flip_average: bool = False
) -> EvalResult:
    rows = []
    for record in records:
        if record.annotations is None:
            continue
        pred = predict_count(model, record.image, flip_average=flip_average)
        rows.append(EvalRow(id=record.id, pred=pred, gt=float(record.annotations.count)))
    return EvalResult.from_rows(rows)


def _patch_grid(h: int, w: int, patch: int) -> list[tuple[int, int, int, int]]:
    # Ceil tiling, so edge remainders are still coverable patches.
    windows = []
    for y0 in range(0, h, patch):
        for x0 in range(0, w, patch):
            windows.append((y0, min(y0 + patch, h), x0, min(x0 + patch, w)))
    return windows


def _corrupt(
    image: np.ndarray,
    fraction: float,
    patch: int,
    rng: np.random.Generator,
    kind: str,
    noise_std: float,
) -> np.ndarray:
    """Corrupt round(fraction * n_patches) patches of one image.

    The patch order and, for blur, the noise field are drawn once from
    ``rng``; fractions then select nested prefixes, so heavier corruption
    strictly extends lighter corruption.
    """
    windows = _patch_grid(image.shape[0], image.shape[1], patch)
    order = rng.permutation(len(windows))
    noise = rng.normal(0.0, noise_std, size=image.shape) if kind == "blur" else None
    n = round(fraction * len(windows))
    if n == 0:
        return image
    out = image.copy()
    for idx in order[:n]:
        y0, y1, x0, x1 = windows[idx]
        if kind == "blur":
            out[y0:y1, x0:x1] = np.clip(
                out[y0:y1, x0:x1] + noise[y0:y1, x0:x1], 0.0, 1.0
            ).astype(image.dtype)
        else:
            out[y0:y1, x0:x1] = 0.0
    return out


def _probe(
    model: CountingModel,
    records: list[SceneRecord],
    fractions: list[float],
    patch: int,
    seed: int,
    kind: str,
    noise_std: float,
) -> list[tuple[float, float, float]]:
    labeled = [r for r in records if r.annotations is not None]
    curve = []
    for fraction in fractions:
        pairs = []
        for i, record in enumerate(labeled):
            # Per-image stream keyed only by (seed, image index): two models
            # probed with the same seed see identical corrupted inputs.
            rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
            corrupted = _corrupt(record.image, fraction, patch, rng, kind, noise_std)
            pairs.append((predict_count(model, corrupted), float(record.annotations.count)))
        mae, mse = mae_mse(pairs)
        curve.append((float(fraction), mae, mse))
    return curve


def blur_probe(
    model: CountingModel,
    records: list[SceneRecord],
    fractions: list[float],
    noise_std: float = PROBE_NOISE_STD,
    patch: int = PROBE_PATCH,
    seed: int = 0,
) -> list[tuple[float, float, float]]:
    """Progressively add Gaussian noise to random patches and re-evaluate."""
    return _probe(model, records, fractions, patch, seed, "blur", noise_std)


def mask_probe(
    model: CountingModel,
    records: list[SceneRecord],
    fractions: list[float],
    patch: int = PROBE_PATCH,
    seed: int = 0,
) -> list[tuple[float, float, float]]:
    """Progressively zero-fill random patches and re-evaluate."""
    return _probe(model, records, fractions, patch, seed, "mask", noise_std=0.0)


def report(result: EvalResult, curves: dict[str, list], out_dir: str | Path) -> dict[str, Path]:
    """Write per-image CSV, aggregate JSON, and per-probe curve CSV + plot."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    per_image = out_dir / "per_image.csv"
    with per_image.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "pred", "gt", "abs_err"])
        for row in result.rows:
            writer.writerow([row.id, repr(row.pred), repr(row.gt), repr(row.abs_err)])
    paths["per_image"] = per_image

    aggregates = out_dir / "aggregates.json"
    aggregates.write_text(
        json.dumps(
            {
                "n": len(result.rows),
                "mae": result.mae,
                "mse": result.mse,
                "abs_err_sum": result.abs_err_sum,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    paths["aggregates"] = aggregates

    for name, curve in curves.items():
        curve_csv = out_dir / f"curve_{name}.csv"
        with curve_csv.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fraction", "mae", "mse"])
            for fraction, mae, mse in curve:
                writer.writerow([repr(fraction), repr(mae), repr(mse)])
        paths[f"curve_{name}"] = curve_csv

        fig, ax = plt.subplots(figsize=(5, 3.5))
        fracs = [p[0] for p in curve]
        ax.plot(fracs, [p[1] for p in curve], marker="o", label="MAE")
        ax.plot(fracs, [p[2] for p in curve], marker="s", label="MSE")
        ax.set_xlabel("corrupted fraction")
        ax.set_ylabel("count error")
        ax.set_title(name)
        ax.legend()
        fig.tight_layout()
        plot_path = out_dir / f"curve_{name}.png"
        fig.savefig(plot_path, dpi=120)
        plt.close(fig)
        paths[f"plot_{name}"] = plot_path

    return paths


def load_report_rows(per_image_csv: str | Path) -> list[EvalRow]:
    rows = []
    with Path(per_image_csv).open(newline="", encoding="utf-8") as fh:
        for entry in csv.DictReader(fh):
            rows.append(EvalRow(id=entry["id"], pred=float(entry["pred"]), gt=float(entry["gt"])))
    return rows
