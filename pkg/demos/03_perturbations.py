"""Weak vs strong views and the masked-cell bookkeeping.

The teacher consumes the weak view (flip + scale + crop). The student
consumes the same view after color jitter and patch-aligned masking; the
consistency losses are restricted to the masked cells on the stride-8
output grid, so the student must fill them in from context.
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

import semicount as sc

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)
rng = np.random.default_rng(11)

scene = sc.gen_scene(sc.SceneSpec(size=256, count_range=(50, 50)), rng)
weak, transform = sc.weak_augment(scene, crop=128, rng=rng)
print(f"weak view: flip={transform.flip} scale={transform.scale:.3f} "
      f"origin={transform.crop_origin} kept {weak.annotations.count} points")

jittered = sc.color_jitter(weak.image, rng)
mask = sc.sample_mask(128, rng, patch_size=32, ratio=0.3)
strong = sc.apply_mask(jittered, mask)
omega = sc.mask_to_output_grid(mask, stride=8)
print(f"masked {mask.n_masked}/{mask.grid[0] * mask.grid[1]} patches "
      f"-> {int(omega.sum())} stride-8 cells in the consistency set")

fig, axes = plt.subplots(1, 4, figsize=(16, 4))
axes[0].imshow(scene.image)
axes[0].set_title("original")
axes[1].imshow(weak.image)
axes[1].set_title("weak view (teacher input)")
axes[2].imshow(strong)
axes[2].set_title("strong view (student input)")
axes[3].imshow(omega, cmap="gray")
axes[3].set_title("masked output cells")
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig(OUT / "perturbations.png", dpi=110)
print(f"wrote {OUT / 'perturbations.png'}")
