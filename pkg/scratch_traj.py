"""Scratch: per-epoch test-MAE trajectories for student and teacher."""
import json
import sys
from pathlib import Path

import numpy as np

import semicount as sc
from semicount.config import TrainConfig
from semicount.data import SplitSpec, discover_scenes
from semicount.evaluate import evaluate_records
from semicount.trainer import (
    Batch,
    _stream,
    fit_partition,
    init_state,
    make_batches,
    split_train_data,
    train_step,
)

ROOT = Path("/tmp/trend2")
lam = float(sys.argv[1])
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

cfg = TrainConfig(
    epochs=30, batch_size=8, labeled_unlabeled_ratio="1:3", learning_rate=1e-3,
    crop_size=96, mask_patch_size=32, mask_ratio=0.3, seed=seed, ema_momentum=0.99,
    val_fraction=0.0, loss=sc.LossWeights(lambda_u=lam),
    model=sc.ModelConfig(stage_channels=(8, 16, 32, 48), reg_channels=(48, 24), cls_channels=24),
)
train_records = discover_scenes(ROOT / "data" / "train")
test_records = discover_scenes(ROOT / "data" / "test")
split = SplitSpec(labeled_fraction=0.05, seed=100)
data = split_train_data(train_records, split, 0.0, cfg.seed)
state = init_state(cfg, fit_partition(data, cfg))

for epoch in range(cfg.epochs):
    state.epoch = epoch
    batches = make_batches(len(data.labeled), len(data.unlabeled), (1, 3), 8,
                           _stream(cfg.seed, 11, epoch))
    logs = []
    for si, (l, u) in enumerate(batches):
        batch = Batch(
            labeled=[data.labeled[i] for i in l],
            unlabeled=[data.unlabeled[i] for i in u],
            labeled_rngs=[_stream(cfg.seed, 22, epoch, si, s) for s in range(len(l))],
            unlabeled_rngs=[_stream(cfg.seed, 22, epoch, si, 1000 + s) for s in range(len(u))],
        )
        logs.append(train_step(state, batch, cfg))
    if epoch % 2 == 1 or epoch >= 24:
        s_mae = evaluate_records(state.student, test_records).mae
        t_mae = evaluate_records(state.teacher, test_records).mae
        mean = {k: float(np.mean([x[k] for x in logs])) for k in ("Ls_reg", "Lu_reg", "Lu_cls")}
        print(json.dumps({"lam": lam, "seed": seed, "ep": epoch,
                          "student_mae": round(s_mae, 2), "teacher_mae": round(t_mae, 2),
                          **{k: round(v, 3) for k, v in mean.items()}}), flush=True)
