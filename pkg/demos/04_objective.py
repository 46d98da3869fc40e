"""A tour of the training objective on toy tensors.

Supervised side: multi-scale SSIM on dense regions plus a count-normalized
total-variation term, and cross-entropy on density levels. Unsupervised
side: L1 between student and teacher on masked cells only, for both heads,
weighted by a ramp that grows over the first 20 epochs.
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

import semicount as sc

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)
rng = np.random.default_rng(0)
weights = sc.LossWeights()

gt = torch.tensor(rng.uniform(0, 3, size=(1, 1, 16, 16)))
noisy = gt + torch.tensor(rng.normal(0, 0.3, size=gt.shape))
print(f"supervised regression loss, perfect pred: {float(sc.supervised_reg_loss(gt, gt, weights)):.2e}")
print(f"supervised regression loss, noisy pred:   {float(sc.supervised_reg_loss(noisy.abs(), gt, weights)):.4f}")

logits = torch.zeros(1, 25, 16, 16)
targets = torch.zeros(1, 16, 16, dtype=torch.long)
print(f"uniform-logit cross-entropy = ln(25) = {float(sc.supervised_cls_loss(logits, targets)):.4f}")

# Teacher targets are clamped to [0, 25] before supervising the student.
wild = torch.tensor([[-3.0, 12.0, 99.0]])
print(f"teacher clamp of {wild.tolist()} -> {sc.clamp_teacher(wild).tolist()}")

# Consistency is summed per sample over masked cells only: perturbing the
# teacher outside the masked set provably changes nothing.
student = torch.tensor(rng.uniform(0, 2, size=(1, 1, 8, 8)))
teacher = torch.tensor(rng.uniform(0, 2, size=(1, 1, 8, 8)))
omega = torch.tensor(rng.random((1, 8, 8)) < 0.3)
base = float(sc.unsup_reg_loss(student, teacher, omega))
teacher_poked = teacher.clone()
teacher_poked[0, 0][~omega[0]] += 100.0
assert float(sc.unsup_reg_loss(student, teacher_poked, omega)) == base
print(f"masked-consistency loss {base:.4f} is invariant to values outside the masked set")

epochs = np.arange(0, 41)
ramp = [sc.rampup_weight(int(e)) for e in epochs]
fig, ax = plt.subplots(figsize=(6, 3.5))
ax.plot(epochs, ramp, marker=".")
ax.axvline(20, color="gray", ls="--", lw=0.8)
ax.set_xlabel("epoch")
ax.set_ylabel("unsupervised weight")
ax.set_title("ramp-up: ~0 at epoch 0, full weight from epoch 20")
fig.tight_layout()
fig.savefig(OUT / "rampup.png", dpi=110)
print(f"wrote {OUT / 'rampup.png'}")
