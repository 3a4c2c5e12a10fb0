import math

import numpy as np
import pytest

from trackadv.advloss import (
    LossConfig,
    candidate_adv_loss,
    candidate_adv_loss_arrays,
    chamfer_with_grad,
    crafted_label,
    motion_adv_loss,
    response_adv_loss,
    tapg_objective,
    tracker_adv_loss,
)
from trackadv.geometry import Box3D
from trackadv.trackers import Candidate, CandidateTracker, MotionDelta, TrackerContext

from .fdcheck import assert_grad_close
from .gradcheck_suite import (
    SMALL_OFFSETS,
    candidate_loss_case,
    motion_loss_case,
    response_loss_case,
    tapg_objective_case,
)


def _cand(center, conf):
    return Candidate(Box3D(center, [1.0, 1.0, 1.0], 0.0), conf)


GT = Box3D([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0)


class TestCandidateLoss:
    def test_satisfied_far_candidate_near_zero(self):
        loss, _ = candidate_adv_loss([_cand([5, 0, 0], 1 - 1e-7)], GT, LossConfig())
        assert 0.0 <= loss < 1e-6

    def test_far_candidate_half_confidence(self):
        loss, _ = candidate_adv_loss([_cand([5, 0, 0], 0.5)], GT, LossConfig())
        assert loss == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_near_candidate_half_confidence(self):
        loss, _ = candidate_adv_loss([_cand([0.1, 0, 0], 0.5)], GT, LossConfig())
        assert loss == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_minimized_by_flipped_confidences(self):
        adversarial = [_cand([5, 0, 0], 1 - 1e-7), _cand([0, 0, 0], 1e-7)]
        benignlike = [_cand([5, 0, 0], 1e-7), _cand([0, 0, 0], 1 - 1e-7)]
        low, _ = candidate_adv_loss(adversarial, GT, LossConfig())
        high, _ = candidate_adv_loss(benignlike, GT, LossConfig())
        assert low < 1e-5 < high

    def test_exact_zero_one_confidences_clamped(self):
        loss, grad = candidate_adv_loss_arrays(
            np.array([0.0, 1.0]), np.array([[5.0, 0, 0], [5.0, 0, 0]]), GT.center, LossConfig())
        assert np.isfinite(loss)
        np.testing.assert_array_equal(grad, [0.0, 0.0])

    def test_gradient_matches_finite_differences(self):
        for seed in range(8):
            f, x0, analytic, sig, label = candidate_loss_case(seed)
            assert_grad_close(f, x0, analytic, signature=sig, label=label)


class TestCraftedLabel:
    def test_mirrored_peak_and_origin_value(self):
        label = crafted_label((2, 3), 9, 9)
        grid = label.grid
        assert grid[4 - 2, 4 - 3] == 1.0
        assert grid[4, 4] == pytest.approx(1.0 / math.sqrt(13.0), abs=1e-15)

    def test_zero_offset_case(self):
        label = crafted_label((0, 0), 9, 9)
        assert label.grid[4, 4] == 1.0
        for i in range(9):
            for j in range(9):
                if (i, j) != (4, 4):
                    d = math.hypot(i - 4, j - 4)
                    assert label.grid[i, j] == pytest.approx(1.0 / d, abs=1e-15)

    def test_values_in_unit_interval_and_decreasing(self):
        label = crafted_label((1, -2), 11, 11)
        assert np.all(label.grid > 0.0) and np.all(label.grid <= 1.0)
        ri = np.arange(11) - 5
        dist = np.hypot(ri[:, None] + 1, ri[None, :] - 2).ravel()
        vals = label.grid.ravel()
        order = np.argsort(dist)
        assert np.all(np.diff(vals[order]) <= 1e-15)

    def test_mirror_out_of_bounds(self):
        with pytest.raises(ValueError, match="mirror target out of bounds"):
            crafted_label((5, 0), 9, 9)


class TestResponseLoss:
    def test_perfect_adversarial_response(self):
        label = crafted_label((1, 1), 5, 5)
        r = np.where(label.grid == 1.0, 1.0, 0.0)
        loss, _ = response_adv_loss(r, label, LossConfig())
        assert abs(loss) < 1e-12

    def test_single_cell_example(self):
        label = crafted_label((0, 0), 1, 1)
        r = np.array([[0.5]])
        loss, _ = response_adv_loss(r, label, LossConfig(beta=2.0))
        assert loss == pytest.approx(-(0.5**2) * math.log(0.5), abs=1e-12)
        assert loss == pytest.approx(0.173286795, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            response_adv_loss(np.full((3, 3), 0.5), crafted_label((0, 0), 5, 5), LossConfig())

    def test_loss_finite_on_clamped_domain(self, rng):
        label = crafted_label((2, 0), 7, 7)
        for _ in range(20):
            r = rng.uniform(0.0, 1.0, size=(7, 7))
            loss, grad = response_adv_loss(r, label, LossConfig())
            assert np.isfinite(loss) and np.all(np.isfinite(grad))

    def test_gradient_matches_finite_differences(self):
        for seed in range(8):
            f, x0, analytic, sig, label = response_loss_case(seed)
            assert_grad_close(f, x0, analytic, signature=sig, label=label)


class TestMotionLoss:
    def test_exact_target_zero(self):
        gt = MotionDelta(0.2, -0.1, 0.05)
        size = np.array([1.0, 2.0, 0.5])
        pred = MotionDelta(*(gt.translation + size))
        loss, _ = motion_adv_loss(pred, gt, size)
        assert loss == 0.0

    def test_worked_example(self):
        loss, _ = motion_adv_loss(
            MotionDelta(1, 1, 1), MotionDelta(0, 0, 0), np.array([2.0, 2.0, 2.0]))
        assert loss == 3.0

    def test_subgradient_signs(self):
        gt = MotionDelta(0, 0, 0)
        size = np.array([1.0, 1.0, 1.0])
        _, grad = motion_adv_loss(MotionDelta(2.0, 0.5, 1.0), gt, size)
        np.testing.assert_array_equal(grad, [1.0, -1.0, 0.0])

    def test_gradient_matches_finite_differences(self):
        for seed in range(8):
            f, x0, analytic, sig, label = motion_loss_case(seed)
            assert_grad_close(f, x0, analytic, signature=sig, label=label)


class TestChamferWithGrad:
    def test_zero_at_identical(self, rng):
        p = rng.uniform(-1, 1, size=(20, 3))
        loss, grad = chamfer_with_grad(p, p.copy())
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(p))

    def test_matches_metrics_chamfer(self, rng):
        from trackadv.metrics import chamfer

        p = rng.uniform(-1, 1, size=(30, 3))
        q = rng.uniform(-1, 1, size=(25, 3))
        assert chamfer_with_grad(p, q)[0] == chamfer(p, q)


def _tapg_scene(rng):
    template = rng.uniform(-0.5, 0.5, size=(12, 3))
    box = Box3D([0, 0, 0], [1.2, 1.8, 1.0], 0.2)
    tracker = CandidateTracker(offsets=SMALL_OFFSETS, template_size=12)
    ctx = TrackerContext(box.center + template, box, box)
    benign = box.center + rng.uniform(-1.2, 1.2, size=(25, 3))
    mask = rng.random(25) < 0.6
    mask[0] = True
    factor = rng.random(25) < 0.5
    return tracker, ctx, benign, mask, factor, box


class TestTapgObjective:
    def test_zero_delta(self, rng):
        tracker, ctx, benign, mask, factor, box = _tapg_scene(rng)
        cfg = LossConfig()
        delta = np.zeros_like(benign)
        loss, grad, parts = tapg_objective(
            benign, benign, delta, mask, factor, tracker, ctx, box, cfg)
        h, _, _ = tracker_adv_loss(tracker, benign, ctx, box, cfg)
        assert parts["cd"] == 0.0
        assert loss == pytest.approx(3 * cfg.lam * h, rel=1e-12)

    def test_all_ones_factor_mask(self, rng):
        tracker, ctx, benign, mask, _, box = _tapg_scene(rng)
        cfg = LossConfig()
        delta = rng.normal(0, 0.05, size=benign.shape)
        perturbed = benign + mask[:, None] * delta
        ones = np.ones(benign.shape[0], dtype=bool)
        _, _, parts = tapg_objective(
            perturbed, benign, delta, mask, ones, tracker, ctx, box, cfg)
        h_full, _, _ = tracker_adv_loss(tracker, perturbed, ctx, box, cfg)
        h_zero, _, _ = tracker_adv_loss(tracker, benign, ctx, box, cfg)
        assert parts["h_sub"] == pytest.approx(h_full, rel=1e-12)
        assert parts["h_sub_complement"] == pytest.approx(h_zero, rel=1e-12)

    def test_gradient_zero_outside_mask(self, rng):
        tracker, ctx, benign, mask, factor, box = _tapg_scene(rng)
        delta = rng.normal(0, 0.05, size=benign.shape)
        perturbed = benign + mask[:, None] * delta
        _, grad, _ = tapg_objective(
            perturbed, benign, delta, mask, factor, tracker, ctx, box, LossConfig())
        np.testing.assert_array_equal(grad[~mask], 0.0)

    def test_gradient_matches_finite_differences(self):
        for paradigm in ("candidate", "response", "motion"):
            for seed in range(4):
                f, x0, analytic, sig, label = tapg_objective_case(seed, paradigm)
                assert_grad_close(f, x0, analytic, signature=sig, label=label)


class TestConfidenceFlip:
    def test_near_far_ordering_flips_when_loss_below_log2(self):
        # Two pose hypotheses: one near the reference, one far. Driving the
        # candidate loss below log 2 forces the far candidate's confidence
        # above the near one's.
        rng = np.random.default_rng(5)
        template = rng.uniform(-0.4, 0.4, size=(15, 3))
        box = Box3D([0, 0, 0], [1.0, 1.0, 1.0], 0.0)
        offsets = np.array([[0.0, 0.0, 0.0], [0.8, 0.0, 0.0]])
        tracker = CandidateTracker(offsets=offsets, template_size=15)
        ctx = TrackerContext(box.center + template, box, box)

        far_box = box.offset_pose(0.8, 0.0, 0.0)
        search = far_box.to_world(box.to_local(box.center + template))
        loss, _, state = tracker_adv_loss(tracker, search, ctx, box, LossConfig())
        assert loss < math.log(2.0)
        assert np.argmax(state.confidences) == 1
