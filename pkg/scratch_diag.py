"""Scratch: watch the collapse dynamics epoch by epoch."""
import json

import numpy as np
import torch

import semicount as sc
from semicount.config import TrainConfig
from semicount.data import SplitSpec, discover_scenes
from semicount.evaluate import predict_count
from semicount.trainer import split_train_data, _stream, make_batches, Batch, train_step, init_state, fit_partition

ROOT = "/tmp/trend"

cfg = TrainConfig(
    epochs=30, batch_size=8, labeled_unlabeled_ratio="1:3", learning_rate=1e-3,
    crop_size=96, mask_patch_size=32, mask_ratio=0.3, seed=1, ema_momentum=0.99,
    val_fraction=0.0, loss=sc.LossWeights(lambda_u=0.1),
    model=sc.ModelConfig(stage_channels=(8, 16, 32, 48), reg_channels=(48, 24), cls_channels=24),
)
train_records = discover_scenes(f"{ROOT}/data/train")
split = SplitSpec(labeled_fraction=0.05, seed=100)
data = split_train_data(train_records, split, 0.0, cfg.seed)
state = init_state(cfg, fit_partition(data, cfg))
probe_img = data.labeled[0].image
gt = 0  # count on labeled[0]
for epoch in range(12):
    state.epoch = epoch
    batches = make_batches(len(data.labeled), len(data.unlabeled), (1, 3), 8, _stream(cfg.seed, 11, epoch))
    logs = []
    for si, (l, u) in enumerate(batches):
        batch = Batch(
            labeled=[data.labeled[i] for i in l],
            unlabeled=[data.unlabeled[i] for i in u],
            labeled_rngs=[_stream(cfg.seed, 22, epoch, si, s) for s in range(len(l))],
            unlabeled_rngs=[_stream(cfg.seed, 22, epoch, si, 1000 + s) for s in range(len(u))],
        )
        logs.append(train_step(state, batch, cfg))
    mean = {k: float(np.mean([x[k] for x in logs])) for k in ("Ls_reg", "Ls_cls", "Lu_reg", "Lu_cls", "total")}
    bias = float(state.student.reg_head[-2].bias.detach())
    wnorm = float(state.student.reg_head[-2].weight.detach().norm())
    pc = predict_count(state.student, probe_img)
    print(json.dumps({"ep": epoch, **{k: round(v, 4) for k, v in mean.items()},
                      "final_bias": round(bias, 4), "final_wnorm": round(wnorm, 4),
                      "pred_count_img0": round(pc, 2)}), flush=True)
