"""Scratch: stabilize the MRC run (lr x lambda_u sweep on the collapsing seed)."""
import itertools
import json
import sys
import time
from pathlib import Path

import numpy as np

import semicount as sc
from semicount.config import TrainConfig
from semicount.data import SplitSpec, discover_scenes
from semicount.evaluate import evaluate_records, mask_probe
from semicount.trainer import split_train_data, train

ROOT = Path("/tmp/trend")


def run(seed, lr, lam, ema):
    cfg = TrainConfig(
        epochs=30, batch_size=8, labeled_unlabeled_ratio="1:3", learning_rate=lr,
        crop_size=96, mask_patch_size=32, mask_ratio=0.3, seed=seed, ema_momentum=ema,
        val_fraction=0.0, loss=sc.LossWeights(lambda_u=lam),
        model=sc.ModelConfig(stage_channels=(8, 16, 32, 48), reg_channels=(48, 24), cls_channels=24),
    )
    train_records = discover_scenes(ROOT / "data" / "train")
    test_records = discover_scenes(ROOT / "data" / "test")
    split = SplitSpec(labeled_fraction=0.05, seed=100)
    data = split_train_data(train_records, split, cfg.val_fraction, cfg.seed)
    t0 = time.time()
    state, history = train(cfg, data)
    res = evaluate_records(state.student, test_records)
    curve = mask_probe(state.student, test_records, [0.0, 0.5], seed=77)
    return {
        "mae": res.mae,
        "masked_mae": curve[1][1],
        "secs": round(time.time() - t0, 1),
        "last_Lu_reg": history[-1]["Lu_reg"],
    }


def main():
    grid = [
        (1, 1e-3, 0.3, 0.99),
        (1, 1e-3, 0.1, 0.99),
        (1, 3e-4, 1.0, 0.99),
        (1, 3e-4, 0.3, 0.99),
    ]
    out = {}
    for seed, lr, lam, ema in grid:
        key = f"s{seed}_lr{lr}_lam{lam}_ema{ema}"
        out[key] = run(seed, lr, lam, ema)
        print(json.dumps({key: out[key]}), flush=True)
    (ROOT / "sweep.json").write_text(json.dumps(out, indent=2))
    print("DONE")


if __name__ == "__main__":
    sys.exit(main())
