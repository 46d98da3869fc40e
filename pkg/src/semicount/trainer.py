"""Mean-teacher training: mixed labeled/unlabeled batching, weak/strong view
construction, the optimizer step, EMA updates, checkpointing, and resume."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import augment
from .config import TrainConfig, config_from_dict, config_to_dict
from .data import EmptyDataset, SceneRecord, SplitSpec, make_split
from .density import (
    DensityMap,
    Partition,
    adaptive_kernel_density,
    build_partition,
    density_to_class,
    downsample_density,
    fixed_kernel_density,
    pad_density_to_multiple,
    save_partition,
)
from .evaluate import evaluate_records
from .losses import (
    LossParts,
    NonFiniteLoss,
    clamp_teacher,
    rampup_weight,
    supervised_cls_loss,
    supervised_reg_loss,
    total_loss,
    unsup_cls_loss,
    unsup_reg_loss,
)
from .model import CountingModel, build_model, ema_update, init_teacher

CHECKPOINT_VERSION = 1
# Stream tags keep the per-purpose rng derivations disjoint.
_RNG_BATCH = 11
_RNG_AUGMENT = 22
_RNG_VAL = 33


class IndivisibleBatch(ValueError):
    pass


@dataclass
class TrainData:
    labeled: list[SceneRecord]
    unlabeled: list[SceneRecord]
    val: list[SceneRecord] = field(default_factory=list)


@dataclass
class Batch:
    labeled: list[SceneRecord]
    unlabeled: list[SceneRecord]
    labeled_rngs: list[np.random.Generator]
    unlabeled_rngs: list[np.random.Generator]


@dataclass
class TrainState:
    student: CountingModel
    teacher: CountingModel
    optimizer: torch.optim.AdamW
    partition: Partition
    epoch: int = 0
    global_step: int = 0
    best_mae: float = math.inf
    best_epoch: int = -1


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def split_train_data(
    records: list[SceneRecord], split: SplitSpec, val_fraction: float, seed: int
) -> TrainData:
    """Assemble labeled/unlabeled/validation sets from a materialized split.

    Unlabeled records keep their pixels but drop annotations. When
    ``val_fraction`` > 0, that share of the labeled images is held out for
    per-epoch validation (deterministic in the seed).
    """
    if split.labeled_ids is None or split.unlabeled_ids is None:
        labeled_ids, unlabeled_ids = make_split([r.id for r in records], split)
    else:
        labeled_ids, unlabeled_ids = split.labeled_ids, split.unlabeled_ids
    by_id = {r.id: r for r in records}
    labeled = [by_id[i] for i in labeled_ids]
    for record in labeled:
        if record.annotations is None:
            raise EmptyDataset(f"labeled scene {record.id} has no annotations")
    unlabeled = [replace(by_id[i], annotations=None) for i in unlabeled_ids]
    n_val = round(val_fraction * len(labeled))
    if n_val:
        order = _stream(seed, _RNG_VAL).permutation(len(labeled))
        val = [labeled[i] for i in sorted(order[:n_val])]
        labeled = [labeled[i] for i in sorted(order[n_val:])]
    else:
        val = []
    return TrainData(labeled=labeled, unlabeled=unlabeled, val=val)


def _cycled(n: int, total: int, rng: np.random.Generator) -> list[int]:
    out: list[int] = []
    while len(out) < total:
        out.extend(rng.permutation(n).tolist())
    return out[:total]


def make_batches(
    n_labeled: int,
    n_unlabeled: int,
    ratio: tuple[int, int],
    batch_size: int,
    rng: np.random.Generator,
) -> list[tuple[list[int], list[int]]]:
    """Index batches for one epoch of mixed labeled/unlabeled training.

    Each batch holds batch_size * a/(a+b) labeled and the rest unlabeled
    samples. The epoch length is set by the stream needing the most
    batches; the other set cycles with reshuffling. An empty unlabeled set
    degrades to pure supervised batches.
    """
    a, b = ratio
    if n_labeled < 1:
        raise EmptyDataset("need at least one labeled sample")
    if n_unlabeled == 0:
        n_l, n_u = batch_size, 0
    else:
        if batch_size % (a + b):
            raise IndivisibleBatch(f"batch size {batch_size} not divisible by {a + b}")
        n_l = batch_size * a // (a + b)
        n_u = batch_size - n_l
    per_stream = [n_labeled // n_l]
    if n_u:
        per_stream.append(n_unlabeled // n_u)
    steps = max(1, max(per_stream))
    labeled_stream = _cycled(n_labeled, steps * n_l, rng)
    unlabeled_stream = _cycled(n_unlabeled, steps * n_u, rng) if n_u else []
    return [
        (
            labeled_stream[i * n_l : (i + 1) * n_l],
            unlabeled_stream[i * n_u : (i + 1) * n_u],
        )
        for i in range(steps)
    ]


def _make_density(points, shape, config: TrainConfig) -> DensityMap:
    if config.kernel == "adaptive":
        return adaptive_kernel_density(
            points, shape, k=config.adaptive_k, beta=config.adaptive_beta,
            sigma_cap=config.sigma_cap,
        )
    return fixed_kernel_density(points, shape, sigma=config.kernel_sigma)


def _image_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.transpose(image, (2, 0, 1)), dtype=np.float32))

def _view_targets(
    view: SceneRecord, config: TrainConfig, partition: Partition
) -> tuple[torch.Tensor, torch.Tensor]:
    dmap = _make_density(view.annotations, view.shape, config)
    dmap8 = downsample_density(pad_density_to_multiple(dmap, 8), 8)
    levels = density_to_class(dmap8, partition)
    return (
        torch.from_numpy(dmap8.values.astype(np.float32)).unsqueeze(0),
        torch.from_numpy(levels.levels),
    )


def build_unlabeled_views(
    record: SceneRecord, config: TrainConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, augment.MaskSpec, np.ndarray]:
    """One weak view and its strong (jitter + mask) counterpart.

    The strong view is built on top of the weak view, so student and
    teacher outputs stay cellwise aligned; outside masked patches and
    before jitter the two views are pixel-identical.
    """
    weak, _ = augment.weak_augment(record, config.crop_size, rng)
    jittered = augment.color_jitter(
        weak.image,
        rng,
        brightness=config.jitter_brightness,
        contrast=config.jitter_contrast,
        saturation=config.jitter_saturation,
        hue=config.jitter_hue,
    )
    spec = augment.sample_mask(
        config.crop_size, rng, patch_size=config.mask_patch_size, ratio=config.mask_ratio
    )
    strong = augment.apply_mask(jittered, spec)
    omega = augment.mask_to_output_grid(spec, stride=8)
    return weak.image, strong, spec, omega


def fit_partition(data: TrainData, config: TrainConfig) -> Partition:
    """Fit the density-level intervals over the labeled training set."""
    samples = []
    for record in data.labeled:
        dmap = _make_density(record.annotations, record.shape, config)
        dmap8 = downsample_density(pad_density_to_multiple(dmap, 8), 8)
        samples.append(dmap8.values.ravel())
    return build_partition(np.concatenate(samples), levels=config.model.levels)


def train_step(state: TrainState, batch: Batch, config: TrainConfig) -> dict:
    """One optimizer step; on a non-finite loss the step is skipped whole."""
    weights = config.loss
    state.student.train()

    x_l, y_l, cls_l = [], [], []
    for record, rng in zip(batch.labeled, batch.labeled_rngs):
        view, _ = augment.weak_augment(record, config.crop_size, rng)
        y8, levels = _view_targets(view, config, state.partition)
        x_l.append(_image_tensor(view.image))
        y_l.append(y8)
        cls_l.append(levels)
    pred, logits = state.student(torch.stack(x_l))
    ls_reg = supervised_reg_loss(pred, torch.stack(y_l), weights)
    ls_cls = supervised_cls_loss(logits, torch.stack(cls_l))

    lam_u = rampup_weight(state.epoch, weights.rampup_epochs, weights.lambda_u)
    use_unsup = bool(batch.unlabeled) and weights.lambda_u > 0
    if use_unsup:
        x_weak, x_strong, omegas = [], [], []
        for record, rng in zip(batch.unlabeled, batch.unlabeled_rngs):
            weak_img, strong_img, _, omega = build_unlabeled_views(record, config, rng)
            x_weak.append(_image_tensor(weak_img))
            x_strong.append(_image_tensor(strong_img))
            omegas.append(torch.from_numpy(omega))
        with torch.no_grad():
            t_density, t_logits = state.teacher(torch.stack(x_weak))
            t_density = clamp_teacher(t_density, weights.clamp_min, weights.clamp_max)
            t_probs = torch.softmax(t_logits, dim=1)
        s_density, s_logits = state.student(torch.stack(x_strong))
        s_probs = torch.softmax(s_logits, dim=1)
        omega = torch.stack(omegas)
        lu_reg = unsup_reg_loss(s_density, t_density, omega)
        lu_cls = unsup_cls_loss(s_probs, t_probs, omega)
    else:
        lu_reg = pred.new_zeros(())
        lu_cls = pred.new_zeros(())

    parts = LossParts(ls_reg, ls_cls, lu_reg, lu_cls)
    loss = total_loss(parts, weights, state.epoch)

    state.optimizer.zero_grad()
    loss.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(
        state.student.parameters(), config.grad_clip_norm
    )
    state.optimizer.step()
    ema_update(state.teacher, state.student, config.ema_momentum)
    state.global_step += 1

    log = {
        "step": state.global_step,
        "Ls_reg": float(ls_reg.detach()),
        "Ls_cls": float(ls_cls.detach()),
        "Lu_reg": float(lu_reg.detach()),
        "Lu_cls": float(lu_cls.detach()),
        "lambda_u": lam_u,
        "total": float(loss.detach()),
    }
    if float(grad_norm) > config.grad_clip_norm:
        log["grad_clipped_from"] = float(grad_norm)
    return log


def init_state(config: TrainConfig, partition: Partition) -> TrainState:
    torch.manual_seed(config.seed)
    student = build_model(config.model)
    teacher = init_teacher(student)
    optimizer = torch.optim.AdamW(
        student.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    return TrainState(student=student, teacher=teacher, optimizer=optimizer, partition=partition)


def _setup_determinism(config: TrainConfig) -> None:
    if config.deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def train(
    config: TrainConfig,
    data: TrainData,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> tuple[TrainState, list[dict]]:
    """Run the full schedule; returns the final state and per-epoch history.

    Writes steps.jsonl / epochs.jsonl plus last/best checkpoints when
    ``out_dir`` is given. ``resume_from`` continues a checkpointed run and,
    under fixed seeds, reproduces the uninterrupted loss trajectory.
    """
    _setup_determinism(config)
    if resume_from is not None:
        state, _ = load_checkpoint(resume_from)
    else:
        state = init_state(config, fit_partition(data, config))

    out_dir = Path(out_dir) if out_dir is not None else None
    steps_path = epochs_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_partition(out_dir / "partition.json", state.partition)
        steps_path = out_dir / "steps.jsonl"
        epochs_path = out_dir / "epochs.jsonl"
        if resume_from is None:
            steps_path.write_text("", encoding="utf-8")
            epochs_path.write_text("", encoding="utf-8")

    ratio = config.ratio_counts()
    history: list[dict] = []
    for epoch in range(state.epoch, config.epochs):
        state.epoch = epoch
        batches = make_batches(
            len(data.labeled), len(data.unlabeled), ratio, config.batch_size,
            _stream(config.seed, _RNG_BATCH, epoch),
        )
        epoch_logs = []
        for step_in_epoch, (l_idx, u_idx) in enumerate(batches):
            batch = Batch(
                labeled=[data.labeled[i] for i in l_idx],
                unlabeled=[data.unlabeled[i] for i in u_idx],
                labeled_rngs=[
                    _stream(config.seed, _RNG_AUGMENT, epoch, step_in_epoch, slot)
                    for slot in range(len(l_idx))
                ],
                unlabeled_rngs=[
                    _stream(config.seed, _RNG_AUGMENT, epoch, step_in_epoch, 1000 + slot)
                    for slot in range(len(u_idx))
                ],
            )
            try:
                log = train_step(state, batch, config)
            except NonFiniteLoss as exc:
                log = {"step": state.global_step, "skipped": True, "error": str(exc)}
            epoch_logs.append(log)
            if steps_path is not None:
                with steps_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(log, sort_keys=True) + "\n")

        finished = [log for log in epoch_logs if not log.get("skipped")]
        record = {
            "epoch": epoch,
            "steps": len(epoch_logs),
            "skipped": len(epoch_logs) - len(finished),
            "lambda_u": rampup_weight(epoch, config.loss.rampup_epochs, config.loss.lambda_u),
        }
        for key in ("Ls_reg", "Ls_cls", "Lu_reg", "Lu_cls", "total"):
            record[key] = (
                sum(log[key] for log in finished) / len(finished) if finished else math.nan
            )
        if data.val:
            result = evaluate_records(state.student, data.val)
            record["val_mae"] = result.mae
            record["val_mse"] = result.mse
            if result.mae < state.best_mae:
                state.best_mae = result.mae
                state.best_epoch = epoch
                if out_dir is not None:
                    save_checkpoint(out_dir / "best.ckpt", state, config)
        history.append(record)
        state.epoch = epoch + 1
        if out_dir is not None:
            with epochs_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            save_checkpoint(out_dir / "last.ckpt", state, config)

    if out_dir is not None and not (out_dir / "best.ckpt").exists():
        save_checkpoint(out_dir / "best.ckpt", state, config)
    return state, history


def config_hash(config: TrainConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path: str | Path, state: TrainState, config: TrainConfig) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "student": state.student.state_dict(),
        "teacher": state.teacher.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "epoch": state.epoch,
        "global_step": state.global_step,
        "best_mae": state.best_mae,
        "best_epoch": state.best_epoch,
        "partition": state.partition.to_json(),
        "torch_rng": torch.get_rng_state(),
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[TrainState, TrainConfig]:
    payload = torch.load(path, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    config = config_from_dict(payload["config"])
    partition = Partition.from_json(payload["partition"])
    state = init_state(config, partition)
    state.student.load_state_dict(payload["student"])
    state.teacher.load_state_dict(payload["teacher"])
    state.optimizer.load_state_dict(payload["optimizer"])
    state.epoch = payload["epoch"]
    state.global_step = payload["global_step"]
    state.best_mae = payload["best_mae"]
    state.best_epoch = payload["best_epoch"]
    torch.set_rng_state(payload["torch_rng"])
    return state, config
