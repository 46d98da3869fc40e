"""Run configuration: the training config dataclass, TOML/JSON loading, and
dotted-path overrides for CLI ``--set`` flags."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .losses import LossWeights
from .model import ModelConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    labeled_unlabeled_ratio: str = "1:3"
    learning_rate: float = 1e-5
    weight_decay: float = 1e-4
    crop_size: int = 256
    mask_patch_size: int = 32
    mask_ratio: float = 0.3
    seed: int = 0
    ema_momentum: float = 0.999
    grad_clip_norm: float = 10.0
    val_fraction: float = 0.1
    deterministic: bool = False
    # Ground-truth kernel choice: "fixed" or "adaptive".
    kernel: str = "fixed"
    kernel_sigma: float = 4.0
    adaptive_k: int = 3
    adaptive_beta: float = 0.3
    sigma_cap: float = 25.0
    jitter_brightness: float = 0.4
    jitter_contrast: float = 0.4
    jitter_saturation: float = 0.4
    jitter_hue: float = 0.1
    loss: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.crop_size < 8:
            raise ValueError("sizes must be positive")
        self.ratio_counts()  # validates the ratio string
        if self.crop_size % self.mask_patch_size:
            raise ValueError(
                f"crop size {self.crop_size} not divisible by mask patch {self.mask_patch_size}"
            )

    def ratio_counts(self) -> tuple[int, int]:
        """Parse 'a:b' into integer labeled/unlabeled parts."""
        try:
            a, b = (int(part) for part in self.labeled_unlabeled_ratio.split(":"))
        except ValueError:
            raise ValueError(
                f"labeled_unlabeled_ratio must look like '1:3', got "
                f"{self.labeled_unlabeled_ratio!r}"
            ) from None
        if a < 1 or b < 0:
            raise ValueError(f"ratio parts must be positive, got {a}:{b}")
        return a, b


def _to_plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, tuple):
        return [_to_plain(v) for v in value]
    return value


def config_to_dict(config: TrainConfig) -> dict:
    return {"trainer": _to_plain(config)}


def _build_dataclass(cls, payload: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(payload) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in payload.items():
        f = known[name]
        if dataclasses.is_dataclass(f.type) or f.name in ("loss", "model"):
            sub_cls = LossWeights if f.name == "loss" else ModelConfig
            kwargs[name] = _build_dataclass(sub_cls, value)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(payload: dict) -> TrainConfig:
    body = payload.get("trainer", payload)
    return _build_dataclass(TrainConfig, dict(body))


def load_config(path: str | Path) -> TrainConfig:
    """Read a TOML or JSON config file mirroring TrainConfig field names."""
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        payload = json.loads(text)
    else:
        payload = tomllib.loads(text.decode("utf-8"))
    return config_from_dict(payload)


def save_config(path: str | Path, config: TrainConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2) + "\n", encoding="utf-8")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _find_unique_path(node: dict, key: str, prefix: tuple = ()) -> list[tuple]:
    hits = []
    if key in node:
        hits.append(prefix + (key,))
    for name, child in node.items():
        if isinstance(child, dict):
            hits.extend(_find_unique_path(child, key, prefix + (name,)))
    return hits


def apply_overrides(document: dict, overrides: list[str]) -> dict:
    """Apply dotted KEY=VALUE overrides to a nested config document.

    Each path segment must either exist at the current level or resolve
    to a unique nested field below it, so ``trainer.lambda_u=0`` reaches
    ``trainer.loss.lambda_u`` without spelling out the section.
    """
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like KEY=VALUE, got {item!r}")
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        node = document
        for i, part in enumerate(parts):
            last = i == len(parts) - 1
            if part in node:
                if last:
                    node[part] = _parse_value(raw)
                else:
                    node = node[part]
                continue
            hits = _find_unique_path(node, part)
            if len(hits) != 1:
                state = "ambiguous" if hits else "unknown"
                raise ValueError(f"{state} config key {dotted!r} (segment {part!r})")
            for step in hits[0][:-1]:
                node = node[step]
            if last:
                node[hits[0][-1]] = _parse_value(raw)
            else:
                node = node[hits[0][-1]]
    return document


def resolve_config(
    config_path: str | Path | None,
    overrides: list[str] | None = None,
    seed: int | None = None,
    deterministic: bool | None = None,
) -> TrainConfig:
    """Load (or default) a config, then apply --set/--seed/--deterministic."""
    if config_path is not None:
        base = load_config(config_path)
    else:
        base = TrainConfig()
    document = config_to_dict(base)
    apply_overrides(document, overrides or [])
    config = config_from_dict(document)
    if seed is not None:
        config.seed = seed
    if deterministic is not None:
        config.deterministic = deterministic
    return config
