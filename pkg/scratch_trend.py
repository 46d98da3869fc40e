"""Scratch: check the directional SSL-vs-supervised trend (criterion 8 profile)."""
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

ROOT = Path("/tmp/trend2")
ROOT.mkdir(exist_ok=True)
LAMBDAS = [float(x) for x in (sys.argv[1].split(",") if len(sys.argv) > 1 else ["1.0"])]
SEEDS = [int(x) for x in (sys.argv[2].split(",") if len(sys.argv) > 2 else ["0", "1", "2"])]


def make_config(seed, lambda_u):
    return TrainConfig(
        epochs=30,
        batch_size=8,
        labeled_unlabeled_ratio="1:3",
        learning_rate=1e-3,
        crop_size=96,
        mask_patch_size=32,
        mask_ratio=0.3,
        seed=seed,
        ema_momentum=0.99,
        val_fraction=0.0,
        loss=sc.LossWeights(lambda_u=lambda_u),
        model=sc.ModelConfig(stage_channels=(8, 16, 32, 48), reg_channels=(48, 24), cls_channels=24),
    )


def main():
    spec = sc.SceneSpec(size=256, count_range=(20, 80), variety=1.0)
    data_dir = ROOT / "data"
    if not (data_dir / "train" / "manifest.json").exists():
        sc.gen_dataset(spec, 160, seed=100, out_dir=data_dir / "train")
        sc.gen_dataset(spec, 40, seed=200, out_dir=data_dir / "test")

    train_records = discover_scenes(data_dir / "train")
    test_records = discover_scenes(data_dir / "test")
    split = SplitSpec(labeled_fraction=0.05, seed=100)

    results = {}
    for seed in SEEDS:
        for lam in LAMBDAS:
            name = f"lam{lam}_s{seed}"
            t0 = time.time()
            cfg = make_config(seed, lam)
            data = split_train_data(train_records, split, cfg.val_fraction, cfg.seed)
            state, _ = train(cfg, data)
            res = evaluate_records(state.student, test_records)
            tres = evaluate_records(state.teacher, test_records)
            curve = mask_probe(state.student, test_records, [0.0, 0.5], seed=77)
            results[name] = {
                "mae": round(res.mae, 3),
                "mse": round(res.mse, 3),
                "teacher_mae": round(tres.mae, 3),
                "teacher_mse": round(tres.mse, 3),
                "masked_mae": round(curve[1][1], 3),
                "rel_increase": round((curve[1][1] - curve[0][1]) / curve[0][1], 3),
                "secs": round(time.time() - t0, 1),
            }
            print(json.dumps({name: results[name]}), flush=True)
    print("DONE")


if __name__ == "__main__":
    main()
