"""End-to-end miniature run: train with and without unlabeled data, then
compare clean accuracy and robustness to progressive patch masking.

This is a scaled-down version of the acceptance experiment (fewer images
and epochs) so it finishes in a couple of minutes on a laptop CPU.
"""
import time
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

import semicount as sc
from semicount.config import TrainConfig
from semicount.data import SplitSpec, discover_scenes
from semicount.evaluate import evaluate_records, mask_probe
from semicount.trainer import split_train_data, train

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

data_dir = OUT / "demo_data"
spec = sc.SceneSpec(size=192, count_range=(10, 50), variety=1.0)
if not (data_dir / "train" / "manifest.json").exists():
    sc.gen_dataset(spec, 48, seed=1, out_dir=data_dir / "train")
    sc.gen_dataset(spec, 16, seed=2, out_dir=data_dir / "test")

train_records = discover_scenes(data_dir / "train")
test_records = discover_scenes(data_dir / "test")
split = SplitSpec(labeled_fraction=0.1, seed=1)


def config(lambda_u):
    return TrainConfig(
        epochs=12, batch_size=8, labeled_unlabeled_ratio="1:3", learning_rate=1e-3,
        crop_size=96, seed=0, ema_momentum=0.99, val_fraction=0.0,
        loss=sc.LossWeights(lambda_u=lambda_u, rampup_epochs=8),
        model=sc.ModelConfig(stage_channels=(8, 16, 24, 32), reg_channels=(32, 16),
                             cls_channels=16),
    )


fractions = [0.0, 0.25, 0.5]
curves = {}
for name, lam in (("supervised only", 0.0), ("with unlabeled data", 0.2)):
    t0 = time.time()
    data = split_train_data(train_records, split, val_fraction=0.0, seed=0)
    state, _ = train(config(lam), data)
    result = evaluate_records(state.teacher, test_records)
    curves[name] = mask_probe(state.teacher, test_records, fractions, seed=5)
    print(f"{name}: test MAE {result.mae:.2f}  MSE {result.mse:.2f}  ({time.time() - t0:.0f}s)")

fig, ax = plt.subplots(figsize=(6, 4))
for name, curve in curves.items():
    ax.plot([p[0] for p in curve], [p[1] for p in curve], marker="o", label=name)
ax.set_xlabel("masked fraction of 32x32 patches")
ax.set_ylabel("test MAE")
ax.set_title("robustness to progressive masking")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "probe_curves.png", dpi=110)
print(f"wrote {OUT / 'probe_curves.png'}")
