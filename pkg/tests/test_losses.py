import math

import numpy as np
import pytest
import torch

import oracles
from semicount.losses import (
    BadTargetRange,
    LossParts,
    LossWeights,
    NonFiniteLoss,
    TooSmallForPyramid,
    clamp_teacher,
    dense_region_mask,
    pyramid_ssim_loss,
    rampup_weight,
    ssim_index,
    supervised_cls_loss,
    supervised_reg_loss,
    total_loss,
    tv_loss,
    unsup_cls_loss,
    unsup_reg_loss,
)

WEIGHTS = LossWeights()


def rand_maps(rng, b=2, h=8, w=8, scale=5.0):
    pred = torch.tensor(rng.uniform(0, scale, size=(b, 1, h, w)))
    gt = torch.tensor(rng.uniform(0, scale, size=(b, 1, h, w)))
    gt[0, 0, 0, :3] = 0.0  # keep some exactly-sparse cells
    return pred, gt


def rand_probs(rng, b=2, k=5, h=8, w=8):
    raw = rng.uniform(0.1, 1.0, size=(b, k, h, w))
    return torch.tensor(raw / raw.sum(axis=1, keepdims=True))


def relative_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    small = scale < floor
    rel = np.abs(analytic - numeric) / np.where(small, 1.0, scale)
    rel[small] = np.abs(analytic - numeric)[small]
    return rel.max()


def central_difference(fn, x, h=1e-6):
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        up = float(fn(x))
        flat[i] = orig - h
        down = float(fn(x))
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


class TestDenseRegionMask:
    def test_all_zero(self):
        gt = torch.zeros(1, 1, 4, 4)
        assert not dense_region_mask(gt, 1e-5).any()

    def test_epsilon_zero_positive_cell(self):
        gt = torch.zeros(1, 1, 4, 4)
        gt[0, 0, 2, 2] = 0.01
        mask = dense_region_mask(gt, 0.0)
        assert mask[0, 0, 2, 2] == 1.0
        assert mask.sum() == 1.0

    def test_matches_elementwise_oracle(self, rng):
        gt = torch.tensor(rng.uniform(0, 1, size=(3, 1, 6, 6)))
        mask = dense_region_mask(gt, 0.5)
        np.testing.assert_array_equal(mask.numpy(), (gt.numpy() > 0.5).astype(float))


class TestSsimIndex:
    def test_identical_maps_score_one(self, rng):
        a = torch.tensor(rng.uniform(0, 10, size=(16, 16)))
        score = ssim_index(a, a)
        np.testing.assert_allclose(score.numpy(), 1.0, atol=1e-12)

    def test_constant_offset_luminance_closed_form(self):
        va, vb = 3.0, 9.0
        a = torch.full((16, 16), va, dtype=torch.float64)
        b = torch.full((16, 16), vb, dtype=torch.float64)
        c1 = (0.01 * 25.0) ** 2
        expected = (2 * va * vb + c1) / (va**2 + vb**2 + c1)
        score = ssim_index(a, b)
        np.testing.assert_allclose(score.numpy(), expected, atol=1e-12)
        assert expected < 1.0

    def test_independent_maps_score_near_zero(self, rng):
        a = torch.tensor(rng.uniform(0, 25, size=(32, 32)))
        b = torch.tensor(rng.uniform(0, 25, size=(32, 32)))
        assert abs(float(ssim_index(a, b).mean())) < 0.1

    def test_matches_oracle(self, rng):
        a = rng.uniform(0, 8, size=(16, 16))
        b = rng.uniform(0, 8, size=(16, 16))
        ours = ssim_index(torch.tensor(a), torch.tensor(b))[0, 0].numpy()
        np.testing.assert_allclose(ours, oracles.ssim_map(a, b), rtol=1e-9, atol=1e-12)

    def test_window_shrinks_to_fit(self, rng):
        a = torch.tensor(rng.uniform(0, 1, size=(4, 4)))
        score = ssim_index(a, a, window=11)
        assert score.shape[-2:] == (4, 4)
        np.testing.assert_allclose(score.numpy(), 1.0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim_index(torch.zeros(4, 4), torch.zeros(5, 5))


class TestPyramidSsim:
    def test_perfect_prediction_zero(self, rng):
        gt = torch.tensor(rng.uniform(0, 5, size=(2, 1, 16, 16)))
        mask = torch.ones_like(gt)
        assert float(pyramid_ssim_loss(gt, gt, mask)) <= 1e-6

    def test_single_level_reduces_to_single_scale(self, rng):
        pred, gt = rand_maps(rng, h=16, w=16)
        mask = dense_region_mask(gt, 1e-5)
        single = pyramid_ssim_loss(pred, gt, mask, levels=1)
        direct = 1.0 - ssim_index(pred * mask, gt * mask).mean()
        torch.testing.assert_close(single, direct)

    def test_matches_oracle(self, rng):
        pred, gt = rand_maps(rng, b=2, h=16, w=16)
        mask = dense_region_mask(gt, 1e-5)
        ours = float(pyramid_ssim_loss(pred, gt, mask, levels=3))
        ref = oracles.pyramid_ssim_loss(
            pred[:, 0].numpy(), gt[:, 0].numpy(), mask[:, 0].numpy(), levels=3
        )
        assert abs(ours - ref) <= 1e-6 * max(abs(ref), 1.0)

    def test_too_small(self):
        with pytest.raises(TooSmallForPyramid):
            pyramid_ssim_loss(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 2, 2),
                              torch.ones(1, 1, 2, 2), levels=3)


class TestTvLoss:
    def test_perfect_prediction_zero(self, rng):
        gt = torch.tensor(rng.uniform(0, 5, size=(2, 1, 8, 8)))
        assert float(tv_loss(gt, gt)) == 0.0

    def test_hand_computed_permutation(self):
        gt = torch.tensor([[1.0, 0.0], [0.0, 1.0]]).reshape(1, 1, 2, 2)
        pred = torch.tensor([[0.0, 1.0], [1.0, 0.0]]).reshape(1, 1, 2, 2)
        # Normalized maps differ by 0.5 in all four cells: 0.5 * 2 * sum(gt) = 2.
        assert float(tv_loss(pred, gt)) == pytest.approx(2.0)

    def test_zero_gt_guard(self, rng):
        pred = torch.tensor(rng.uniform(0, 1, size=(1, 1, 4, 4)))
        assert float(tv_loss(pred, torch.zeros_like(pred))) == 0.0
        assert float(tv_loss(torch.zeros_like(pred), pred)) == 0.0

    def test_matches_oracle(self, rng):
        pred, gt = rand_maps(rng, b=3)
        ours = float(tv_loss(pred, gt))
        ref = oracles.tv_loss(pred[:, 0].numpy(), gt[:, 0].numpy())
        assert abs(ours - ref) <= 1e-9


class TestSupervisedRegLoss:
    def test_perfect_prediction_zero(self, rng):
        gt = torch.tensor(rng.uniform(0, 5, size=(2, 1, 16, 16)))
        assert float(supervised_reg_loss(gt, gt, WEIGHTS)) <= 1e-6

    def test_alpha_zero_is_pyramid_alone(self, rng):
        pred, gt = rand_maps(rng, h=16, w=16)
        weights = LossWeights(alpha=0.0)
        mask = dense_region_mask(gt, weights.epsilon)
        torch.testing.assert_close(
            supervised_reg_loss(pred, gt, weights), pyramid_ssim_loss(pred, gt, mask)
        )

    def test_recomposition(self, rng):
        pred, gt = rand_maps(rng, h=16, w=16)
        mask = dense_region_mask(gt, WEIGHTS.epsilon)
        total = supervised_reg_loss(pred, gt, WEIGHTS)
        recomposed = pyramid_ssim_loss(pred, gt, mask) + 0.01 * tv_loss(pred, gt)
        assert abs(float(total) - float(recomposed)) <= 1e-6


class TestSupervisedClsLoss:
    def test_confident_correct_logits_vanish(self, rng):
        k = 25
        targets = torch.tensor(rng.integers(0, k, size=(2, 4, 4)))
        logits = torch.full((2, k, 4, 4), -50.0)
        logits.scatter_(1, targets[:, None], 50.0)
        assert float(supervised_cls_loss(logits, targets)) <= 1e-6

    def test_uniform_logits_log_k(self):
        logits = torch.zeros(1, 25, 4, 4)
        targets = torch.zeros(1, 4, 4, dtype=torch.long)
        assert float(supervised_cls_loss(logits, targets)) == pytest.approx(math.log(25))

    def test_matches_oracle(self, rng):
        logits = torch.tensor(rng.normal(size=(2, 7, 5, 5)))
        targets = torch.tensor(rng.integers(0, 7, size=(2, 5, 5)))
        ours = float(supervised_cls_loss(logits, targets))
        ref = oracles.cross_entropy(logits.numpy(), targets.numpy())
        assert abs(ours - ref) <= 1e-6 * max(abs(ref), 1.0)

    def test_bad_target_range(self):
        logits = torch.zeros(1, 5, 2, 2)
        with pytest.raises(BadTargetRange):
            supervised_cls_loss(logits, torch.full((1, 2, 2), 5, dtype=torch.long))


class TestClampTeacher:
    def test_reference_values(self):
        values = torch.tensor([30.0, -1.0, 12.5])
        out = clamp_teacher(values)
        np.testing.assert_array_equal(out.numpy(), [25.0, 0.0, 12.5])

    def test_idempotent(self, rng):
        values = torch.tensor(rng.uniform(-10, 40, size=(64,)))
        once = clamp_teacher(values)
        np.testing.assert_array_equal(clamp_teacher(once).numpy(), once.numpy())


class TestUnsupRegLoss:
    def test_agreement_on_omega_is_zero(self, rng):
        t = torch.tensor(rng.uniform(0, 5, size=(2, 1, 8, 8)))
        omega = torch.tensor(rng.random((2, 8, 8)) < 0.3)
        s = t.clone()
        s[~omega[:, None]] += 1.0  # disagreement only outside omega
        assert float(unsup_reg_loss(s, t, omega)) == 0.0

    def test_outside_omega_perturbation_ignored(self, rng):
        s = torch.tensor(rng.uniform(0, 5, size=(2, 1, 8, 8)))
        t = torch.tensor(rng.uniform(0, 5, size=(2, 1, 8, 8)))
        omega = torch.tensor(rng.random((2, 8, 8)) < 0.3)
        base = float(unsup_reg_loss(s, t, omega))
        t2 = t.clone()
        t2[~omega[:, None]] += 100.0
        assert float(unsup_reg_loss(s, t2, omega)) == base

    def test_hand_arithmetic(self):
        s = torch.zeros(1, 1, 2, 2)
        t = torch.zeros(1, 1, 2, 2)
        t[0, 0, 0, 0] = 0.5
        t[0, 0, 1, 1] = 1.5
        omega = torch.ones(1, 2, 2, dtype=torch.bool)
        assert float(unsup_reg_loss(s, t, omega)) == pytest.approx(2.0)

    def test_empty_omega(self, rng):
        s, t = rand_maps(rng)
        assert float(unsup_reg_loss(s, t, torch.zeros(2, 8, 8, dtype=torch.bool))) == 0.0

    def test_matches_oracle(self, rng):
        s, t = rand_maps(rng, b=3)
        omega = torch.tensor(rng.random((3, 8, 8)) < 0.4)
        ours = float(unsup_reg_loss(s, t, omega))
        ref = oracles.unsup_reg_loss(s[:, 0].numpy(), t[:, 0].numpy(), omega.numpy())
        assert abs(ours - ref) <= 1e-9


class TestUnsupClsLoss:
    def test_identical_distributions_zero(self, rng):
        p = rand_probs(rng)
        omega = torch.ones(2, 8, 8, dtype=torch.bool)
        assert float(unsup_cls_loss(p, p.clone(), omega)) == 0.0

    def test_disjoint_one_hots_give_two_per_cell(self):
        s = torch.zeros(1, 4, 2, 2)
        t = torch.zeros(1, 4, 2, 2)
        s[0, 0] = 1.0
        t[0, 3] = 1.0
        omega = torch.ones(1, 2, 2, dtype=torch.bool)
        assert float(unsup_cls_loss(s, t, omega)) == pytest.approx(2.0 * 4)

    def test_matches_oracle(self, rng):
        s = rand_probs(rng, b=3)
        t = rand_probs(rng, b=3)
        omega = torch.tensor(rng.random((3, 8, 8)) < 0.4)
        ours = float(unsup_cls_loss(s, t, omega))
        ref = oracles.unsup_cls_loss(s.numpy(), t.numpy(), omega.numpy())
        assert abs(ours - ref) <= 1e-9


class TestRampup:
    def test_endpoint_values(self):
        assert rampup_weight(0) == pytest.approx(math.exp(-5.0))
        assert rampup_weight(20) == 1.0
        assert rampup_weight(35) == 1.0

    def test_monotone_scan(self):
        values = [rampup_weight(e) for e in range(41)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_scales_with_lambda(self):
        assert rampup_weight(20, lambda_u=0.5) == 0.5

    def test_zero_rampup_window(self):
        assert rampup_weight(0, rampup_epochs=0, lambda_u=2.0) == 2.0


class TestTotalLoss:
    def test_lambda_zero_pure_supervised(self):
        weights = LossWeights(lambda_u=0.0)
        parts = LossParts(1.5, 2.0, 100.0, 200.0)
        assert total_loss(parts, weights, epoch=30) == pytest.approx(1.5 + 2.0)

    def test_all_zero(self):
        assert total_loss(LossParts(0.0, 0.0, 0.0, 0.0), WEIGHTS, epoch=0) == 0.0

    def test_reference_arithmetic(self):
        parts = LossParts(1.0, 2.0, 3.0, 4.0)
        assert total_loss(parts, WEIGHTS, epoch=25) == pytest.approx(10.0)

    def test_non_finite_detected(self):
        with pytest.raises(NonFiniteLoss, match="lu_reg"):
            total_loss(LossParts(1.0, 1.0, math.nan, 1.0), WEIGHTS, epoch=0)
        with pytest.raises(NonFiniteLoss):
            total_loss(LossParts(torch.tensor(math.inf), 0.0, 0.0, 0.0), WEIGHTS, epoch=0)


class TestLossOracles50Instances:
    """Each loss against its independent reimplementation on random instances."""

    def test_fifty_random_instances(self):
        rng = np.random.default_rng(2024)
        for case in range(50):
            h = w = 8 if case % 2 == 0 else 16
            pred, gt = rand_maps(rng, b=2, h=h, w=w)
            ours = float(supervised_reg_loss(pred, gt, WEIGHTS))
            ref = oracles.supervised_reg_loss(pred[:, 0].numpy(), gt[:, 0].numpy())
            assert abs(ours - ref) <= 1e-6 * max(abs(ref), 1.0)

            logits = torch.tensor(rng.normal(size=(2, 6, h, w)))
            targets = torch.tensor(rng.integers(0, 6, size=(2, h, w)))
            ours = float(supervised_cls_loss(logits, targets))
            ref = oracles.cross_entropy(logits.numpy(), targets.numpy())
            assert abs(ours - ref) <= 1e-6 * max(abs(ref), 1.0)

            omega = torch.tensor(rng.random((2, h, w)) < 0.35)
            s, t = rand_maps(rng, b=2, h=h, w=w)
            ours = float(unsup_reg_loss(s, t, omega))
            ref = oracles.unsup_reg_loss(s[:, 0].numpy(), t[:, 0].numpy(), omega.numpy())
            assert abs(ours - ref) <= 1e-6 * max(abs(ref), 1.0)

            sp = rand_probs(rng, b=2, k=6, h=h, w=w)
            tp = rand_probs(rng, b=2, k=6, h=h, w=w)
            ours = float(unsup_cls_loss(sp, tp, omega))
            ref = oracles.unsup_cls_loss(sp.numpy(), tp.numpy(), omega.numpy())
            assert abs(ours - ref) <= 1e-6 * max(abs(ref), 1.0)


class TestGradients:
    """Autograd against central finite differences at double precision."""

    def test_supervised_reg_grad(self, rng):
        pred, gt = rand_maps(rng, b=1, h=8, w=8)
        pred.requires_grad_(True)
        loss = supervised_reg_loss(pred, gt, WEIGHTS)
        (analytic,) = torch.autograd.grad(loss, pred)
        numeric = central_difference(
            lambda x: supervised_reg_loss(x, gt, WEIGHTS), pred.detach().clone()
        )
        assert relative_error(analytic.numpy(), numeric.numpy()) <= 1e-5

    def test_supervised_cls_grad(self, rng):
        logits = torch.tensor(rng.normal(size=(1, 5, 8, 8)), requires_grad=True)
        targets = torch.tensor(rng.integers(0, 5, size=(1, 8, 8)))
        loss = supervised_cls_loss(logits, targets)
        (analytic,) = torch.autograd.grad(loss, logits)
        numeric = central_difference(
            lambda x: supervised_cls_loss(x, targets), logits.detach().clone()
        )
        assert relative_error(analytic.numpy(), numeric.numpy()) <= 1e-5

    def test_unsup_reg_grad(self, rng):
        s, t = rand_maps(rng, b=1, h=8, w=8)
        omega = torch.tensor(rng.random((1, 8, 8)) < 0.5)
        s.requires_grad_(True)
        loss = unsup_reg_loss(s, t, omega)
        (analytic,) = torch.autograd.grad(loss, s)
        numeric = central_difference(lambda x: unsup_reg_loss(x, t, omega), s.detach().clone())
        assert relative_error(analytic.numpy(), numeric.numpy()) <= 1e-5

    def test_unsup_cls_grad(self, rng):
        sp = rand_probs(rng, b=1, k=5, h=8, w=8)
        tp = rand_probs(rng, b=1, k=5, h=8, w=8)
        omega = torch.tensor(rng.random((1, 8, 8)) < 0.5)
        sp.requires_grad_(True)
        loss = unsup_cls_loss(sp, tp, omega)
        (analytic,) = torch.autograd.grad(loss, sp)
        numeric = central_difference(lambda x: unsup_cls_loss(x, tp, omega), sp.detach().clone())
        assert relative_error(analytic.numpy(), numeric.numpy()) <= 1e-5


class TestStructuralInvariants:
    def test_losses_nonnegative_and_zero_at_target(self, rng):
        for _ in range(10):
            pred, gt = rand_maps(rng, h=16, w=16)
            assert float(supervised_reg_loss(pred, gt, WEIGHTS)) >= 0.0
            assert float(supervised_reg_loss(gt, gt, WEIGHTS)) <= 1e-6
            omega = torch.tensor(rng.random((2, 16, 16)) < 0.3)
            assert float(unsup_reg_loss(pred, gt, omega)) >= 0.0
            assert float(unsup_reg_loss(gt, gt, omega)) == 0.0
            probs = rand_probs(rng, h=16, w=16)
            assert float(unsup_cls_loss(probs, probs.clone(), omega)) == 0.0

    def test_omega_locality_gradient_exactly_zero_outside(self, rng):
        s, t = rand_maps(rng, b=2, h=8, w=8)
        omega = torch.tensor(rng.random((2, 8, 8)) < 0.4)
        s.requires_grad_(True)
        (grad,) = torch.autograd.grad(unsup_reg_loss(s, t, omega), s)
        outside = ~omega[:, None]
        assert (grad[outside] == 0.0).all()

        sp = rand_probs(rng, b=2, k=5, h=8, w=8)
        tp = rand_probs(rng, b=2, k=5, h=8, w=8)
        sp.requires_grad_(True)
        (grad,) = torch.autograd.grad(unsup_cls_loss(sp, tp, omega), sp)
        assert (grad[outside.expand_as(grad)] == 0.0).all()

    def test_teacher_fully_detached(self, rng):
        s, t = rand_maps(rng, b=2, h=8, w=8)
        omega = torch.tensor(rng.random((2, 8, 8)) < 0.4)
        t.requires_grad_(True)
        s.requires_grad_(True)
        loss = unsup_reg_loss(s, t, omega)
        grad_t = torch.autograd.grad(loss, t, allow_unused=True)[0]
        assert grad_t is None

        sp = rand_probs(rng, b=2, k=5, h=8, w=8)
        tp = rand_probs(rng, b=2, k=5, h=8, w=8)
        tp.requires_grad_(True)
        sp.requires_grad_(True)
        grad_tp = torch.autograd.grad(
            unsup_cls_loss(sp, tp, omega), tp, allow_unused=True
        )[0]
        assert grad_tp is None
