import math

import pytest
import torch

from fd import central_diff_grad, rel_err
from forgeloc.errors import ConfigurationError, DimensionError
from forgeloc.losses import LossWeights, bce_loss, dice_loss, total_loss


def rand_pred(seed, shape=(1, 8, 8)):
    # kept away from {0,1}: BCE curvature there exceeds what an h=1e-3
    # central difference can resolve
    g = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=g) * 0.9 + 0.05


def rand_gt(seed, shape=(1, 8, 8)):
    g = torch.Generator().manual_seed(seed)
    return (torch.rand(shape, generator=g) > 0.5).float()


class TestBCE:
    def test_half_constant_is_ln2(self):
        for seed in range(5):
            gt = rand_gt(seed)
            loss = float(bce_loss(torch.full_like(gt, 0.5), gt))
            assert loss == pytest.approx(math.log(2), abs=1e-6)

    def test_perfect_prediction_near_zero(self):
        gt = rand_gt(3)
        assert float(bce_loss(gt.clone(), gt)) <= 1.2e-6

    def test_hand_case(self):
        # -(ln 0.9 + ln 0.9) / 2 = -ln 0.9
        pred = torch.tensor([0.9, 0.1])
        gt = torch.tensor([1.0, 0.0])
        assert float(bce_loss(pred, gt)) == pytest.approx(-math.log(0.9), abs=1e-6)

    def test_nonnegative(self):
        for seed in range(20):
            assert float(bce_loss(rand_pred(seed), rand_gt(seed + 100))) >= 0.0

    def test_permutation_invariant(self):
        pred, gt = rand_pred(5).reshape(-1), rand_gt(6).reshape(-1)
        perm = torch.randperm(pred.numel(), generator=torch.Generator().manual_seed(0))
        assert float(bce_loss(pred, gt)) == pytest.approx(
            float(bce_loss(pred[perm], gt[perm])), rel=1e-6)

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError):
            bce_loss(torch.rand(2, 3), torch.zeros(3, 2))

    def test_extreme_inputs_no_nan(self):
        pred = torch.tensor([0.0, 1.0, 0.5])
        gt = torch.tensor([1.0, 0.0, 1.0])
        assert math.isfinite(float(bce_loss(pred, gt)))


class TestDice:
    def test_perfect_overlap_zero(self):
        ones = torch.ones(1, 8, 8)
        assert float(dice_loss(ones, ones)) == pytest.approx(0.0, abs=1e-6)

    def test_disjoint_near_one(self):
        pred = torch.tensor([1.0, 1.0, 0.0, 0.0])
        gt = torch.tensor([0.0, 0.0, 1.0, 1.0])
        assert float(dice_loss(pred, gt)) == pytest.approx(1.0, abs=1e-5)

    def test_hand_case_one_third(self):
        pred = torch.tensor([1.0, 1.0, 0.0, 0.0])
        gt = torch.tensor([1.0, 0.0, 0.0, 0.0])
        assert float(dice_loss(pred, gt)) == pytest.approx(1.0 / 3.0, abs=1e-6)

    def test_both_empty_zero_no_nan(self):
        z = torch.zeros(1, 8, 8)
        val = float(dice_loss(z, z))
        assert val == pytest.approx(0.0, abs=1e-9)

    def test_range(self):
        for seed in range(30):
            val = float(dice_loss(rand_pred(seed), rand_gt(seed + 7)))
            assert 0.0 <= val <= 1.0

    def test_permutation_invariant(self):
        pred, gt = rand_pred(8).reshape(-1), rand_gt(9).reshape(-1)
        perm = torch.randperm(pred.numel(), generator=torch.Generator().manual_seed(1))
        assert float(dice_loss(pred, gt)) == pytest.approx(
            float(dice_loss(pred[perm], gt[perm])), rel=1e-6)

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError):
            dice_loss(torch.rand(4), torch.zeros(5))


class TestTotal:
    def test_weighted_sum(self):
        pred, gt = rand_pred(10), rand_gt(11)
        w = LossWeights(lambda_bce=0.5, lambda_dice=0.5)
        expect = 0.5 * float(bce_loss(pred, gt)) + 0.5 * float(
            dice_loss(pred, gt, w.epsilon_smooth))
        assert float(total_loss(pred, gt, w)) == pytest.approx(expect, rel=1e-6)

    def test_bce_only(self):
        pred, gt = rand_pred(12), rand_gt(13)
        w = LossWeights(lambda_bce=1.0, lambda_dice=0.0)
        assert float(total_loss(pred, gt, w)) == pytest.approx(
            float(bce_loss(pred, gt)), rel=1e-6)

    def test_dice_only(self):
        pred, gt = rand_pred(14), rand_gt(15)
        w = LossWeights(lambda_bce=0.0, lambda_dice=1.0)
        assert float(total_loss(pred, gt, w)) == pytest.approx(
            float(dice_loss(pred, gt, w.epsilon_smooth)), rel=1e-6)

    def test_zero_weights_rejected(self):
        with pytest.raises(ConfigurationError):
            LossWeights(lambda_bce=0.0, lambda_dice=0.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigurationError):
            LossWeights(lambda_bce=-0.1, lambda_dice=0.5)


class TestGradients:
    """Analytic gradients vs central finite differences (h=1e-3, rel < 1e-3)."""

    def _check(self, loss_fn, seed):
        pred32 = rand_pred(seed)
        gt = rand_gt(seed + 50)

        p32 = pred32.clone().requires_grad_(True)
        loss_fn(p32, gt).backward()

        p64 = pred32.double().requires_grad_(True)
        loss_fn(p64, gt.double()).backward()

        fd = central_diff_grad(lambda p: loss_fn(p, gt.double()), pred32)

        assert rel_err(p64.grad, fd) < 1e-3
        # the float32 autograd path agrees with the float64 one
        assert rel_err(p32.grad, p64.grad, floor=1e-4) < 1e-3

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_bce_grad(self, seed):
        self._check(bce_loss, seed)

    @pytest.mark.parametrize("seed", [3, 4])
    def test_dice_grad(self, seed):
        self._check(lambda p, g: dice_loss(p, g), seed)

    @pytest.mark.parametrize("seed", [5, 6])
    def test_total_grad(self, seed):
        w = LossWeights()
        self._check(lambda p, g: total_loss(p, g, w), seed)
