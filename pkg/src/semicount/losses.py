"""Training objective: pyramid SSIM + TV regression, cross-entropy density-level
classification, masked L1 consistency on both heads, and the ramp-up schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F


class TooSmallForPyramid(ValueError):
    pass


class BadTargetRange(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class LossWeights:
    """Weights and constants of the full objective.

    ``clamp_max`` doubles as the dynamic range of the SSIM stabilizers,
    since density maps are bounded by the teacher clamp rather than by an
    8-bit intensity scale.
    """

    alpha: float = 0.01  # TV weight inside the supervised regression loss
    lambda_s_cls: float = 1.0
    lambda_u: float = 1.0
    pyramid_levels: int = 3
    epsilon: float = 1e-5  # dense-region threshold on stride-8 GT cells
    clamp_min: float = 0.0
    clamp_max: float = 25.0
    rampup_epochs: int = 20
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    # Per-head toggles inside the unsupervised loss, used by head ablations.
    unsup_reg_weight: float = 1.0
    unsup_cls_weight: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.lambda_s_cls, self.lambda_u) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid needs at least one level")
        if self.clamp_min >= self.clamp_max:
            raise ValueError("clamp range must be nonempty")


class LossParts(NamedTuple):
    ls_reg: torch.Tensor | float
    ls_cls: torch.Tensor | float
    lu_reg: torch.Tensor | float
    lu_cls: torch.Tensor | float


def _as_b1hw(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 2:
        return x[None, None]
    if x.dim() == 3:
        return x[:, None]
    return x


def dense_region_mask(gt: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Binary map separating dense cells (gt > epsilon) from sparse ones."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    return (gt > epsilon).to(gt.dtype)


def gaussian_window(size: int, sigma: float, dtype=torch.float32) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma * sigma))
    window = g[:, None] * g[None, :]
    return (window / window.sum()).to(dtype)


def ssim_index(
    a: torch.Tensor,
    b: torch.Tensor,
    window: int = 11,
    sigma: float = 1.5,
    c1: float = (0.01 * 25.0) ** 2,
    c2: float = (0.03 * 25.0) ** 2,
) -> torch.Tensor:
    """Per-cell structural similarity of two maps, in [-1, 1].

    Local statistics use a normalized Gaussian window over a
    reflect-padded input; the window shrinks to fit maps smaller than its
    nominal size.
    """
    a, b = _as_b1hw(a), _as_b1hw(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    h, w = a.shape[-2:]
    win = min(window, h, w)
    if win % 2 == 0:
        win -= 1
    kernel = gaussian_window(win, sigma, dtype=a.dtype)[None, None]
    pad = win // 2

    def local_mean(x: torch.Tensor) -> torch.Tensor:
        if pad:
            x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
        return F.conv2d(x, kernel)

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def pyramid_ssim_loss(
    pred: torch.Tensor,
    gt: torch.Tensor,
    mask: torch.Tensor,
    levels: int = 3,
    window: int = 11,
    sigma: float = 1.5,
    c1: float = (0.01 * 25.0) ** 2,
    c2: float = (0.03 * 25.0) ** 2,
) -> torch.Tensor:
    """Mean over pyramid levels of (1 - mean SSIM) on masked maps.

    Level j applies average pooling that downsamples to 1/2**(j-1) scale
    before scoring, so structural agreement is rewarded at several
    granularities.
    """
    pred, gt = _as_b1hw(pred), _as_b1hw(gt)
    mask = _as_b1hw(mask).to(pred.dtype)
    pm = pred * mask
    gm = gt * mask
    h, w = pm.shape[-2:]
    if min(h, w) < 2 ** (levels - 1):
        raise TooSmallForPyramid(f"{h}x{w} map cannot support {levels} pyramid levels")
    total = pm.new_zeros(())
    for j in range(1, levels + 1):
        k = 2 ** (j - 1)
        pj = F.avg_pool2d(pm, k) if k > 1 else pm
        gj = F.avg_pool2d(gm, k) if k > 1 else gm
        score = ssim_index(pj, gj, window=window, sigma=sigma, c1=c1, c2=c2)
        total = total + (1.0 - score.mean())
    return total / levels


def tv_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Count-normalized total variation between prediction and ground truth.

    Per sample: half the L1 distance of the two count-normalized maps,
    rescaled by the ground-truth count; defined as 0 whenever either map
    has (near-)zero total mass.
    """
    pred, gt = _as_b1hw(pred), _as_b1hw(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    pred_sum = pred.sum(dim=(1, 2, 3))
    gt_sum = gt.sum(dim=(1, 2, 3))
    valid = (pred_sum >= 1e-6) & (gt_sum >= 1e-6)
    safe_p = torch.where(pred_sum > 0, pred_sum, torch.ones_like(pred_sum))
    safe_g = torch.where(gt_sum > 0, gt_sum, torch.ones_like(gt_sum))
    diff = gt / safe_g[:, None, None, None] - pred / safe_p[:, None, None, None]
    per_sample = 0.5 * diff.abs().sum(dim=(1, 2, 3)) * gt_sum
    return torch.where(valid, per_sample, torch.zeros_like(per_sample)).mean()


def supervised_reg_loss(pred: torch.Tensor, gt: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """Pyramid SSIM on dense regions plus alpha-weighted TV."""
    gt = _as_b1hw(gt)
    mask = dense_region_mask(gt, weights.epsilon)
    c1 = (0.01 * weights.clamp_max) ** 2
    c2 = (0.03 * weights.clamp_max) ** 2
    pyramid = pyramid_ssim_loss(
        pred,
        gt,
        mask,
        levels=weights.pyramid_levels,
        window=weights.ssim_window,
        sigma=weights.ssim_sigma,
        c1=c1,
        c2=c2,
    )
    return pyramid + weights.alpha * tv_loss(pred, gt)


def supervised_cls_loss(class_logits: torch.Tensor, target_levels: torch.Tensor) -> torch.Tensor:
    """Standard cross-entropy over cells and samples for the level head."""
    if class_logits.dim() == 3:
        class_logits = class_logits[None]
    if target_levels.dim() == 2:
        target_levels = target_levels[None]
    k = class_logits.shape[1]
    if target_levels.numel() and (target_levels.min() < 0 or target_levels.max() >= k):
        raise BadTargetRange(
            f"targets must lie in [0, {k - 1}], got "
            f"[{int(target_levels.min())}, {int(target_levels.max())}]"
        )
    return F.cross_entropy(class_logits, target_levels.long())


def clamp_teacher(density: torch.Tensor, lo: float = 0.0, hi: float = 25.0) -> torch.Tensor:
    """Keep teacher regression targets inside a sane range before they supervise."""
    return torch.clamp(density, lo, hi)


def _omega_like(omega: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    omega = _as_b1hw(omega.to(ref.dtype))
    if omega.shape[0] == 1 and ref.shape[0] > 1:
        omega = omega.expand(ref.shape[0], -1, -1, -1)
    return omega


def unsup_reg_loss(
    student_density: torch.Tensor, teacher_density: torch.Tensor, omega: torch.Tensor
) -> torch.Tensor:
    """Per-sample sum over masked output cells of |student - teacher|, batch-averaged.

    Teacher values are detached; cells outside omega contribute exactly 0.
    """
    s = _as_b1hw(student_density)
    t = _as_b1hw(teacher_density).detach()
    mask = _omega_like(omega, s)
    per_sample = ((s - t).abs() * mask).sum(dim=(1, 2, 3))
    return per_sample.mean()


def unsup_cls_loss(
    student_probs: torch.Tensor, teacher_probs: torch.Tensor, omega: torch.Tensor
) -> torch.Tensor:
    """Masked L1 between per-cell probability distributions, batch-averaged."""
    s = student_probs[None] if student_probs.dim() == 3 else student_probs
    t = (teacher_probs[None] if teacher_probs.dim() == 3 else teacher_probs).detach()
    l1 = (s - t).abs().sum(dim=1, keepdim=True)  # L1 over the K-vector per cell
    mask = _omega_like(omega, l1)
    per_sample = (l1 * mask).sum(dim=(1, 2, 3))
    return per_sample.mean()


def rampup_weight(epoch: int, rampup_epochs: int = 20, lambda_u: float = 1.0) -> float:
    """Gaussian ramp from ~0 at epoch 0 to lambda_u at rampup_epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if rampup_epochs <= 0:
        return lambda_u
    t = min(epoch / rampup_epochs, 1.0)
    return lambda_u * math.exp(-5.0 * (1.0 - t) ** 2)


def _check_finite(name: str, value: torch.Tensor | float) -> None:
    finite = torch.isfinite(value).all() if torch.is_tensor(value) else math.isfinite(value)
    if not finite:
        raise NonFiniteLoss(f"{name} is non-finite: {value}")


def total_loss(parts: LossParts, weights: LossWeights, epoch: int):
    """L = (Ls_reg + lambda_s_cls * Ls_cls) + lambda_u(epoch) * (Lu_reg + Lu_cls)."""
    for name, value in parts._asdict().items():
        _check_finite(name, value)
    lam_u = rampup_weight(epoch, weights.rampup_epochs, weights.lambda_u)
    supervised = parts.ls_reg + weights.lambda_s_cls * parts.ls_cls
    unsupervised = (
        weights.unsup_reg_weight * parts.lu_reg + weights.unsup_cls_weight * parts.lu_cls
    )
    return supervised + lam_u * unsupervised
