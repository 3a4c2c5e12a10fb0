import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackadv.geometry import (
    Box3D,
    center_distance,
    corners,
    iou_3d,
    iou_mc_oracle,
    mask_in_box,
    rotation_z,
    wrap_angle,
)

from .conftest import random_box, random_cloud


class TestBox3D:
    def test_rejects_nonpositive_size(self):
        with pytest.raises(ValueError):
            Box3D([0, 0, 0], [1, 0, 1], 0.0)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Box3D([np.nan, 0, 0], [1, 1, 1], 0.0)

    def test_yaw_normalized(self):
        assert Box3D([0, 0, 0], [1, 1, 1], math.pi).yaw == pytest.approx(-math.pi)
        assert Box3D([0, 0, 0], [1, 1, 1], 3 * math.pi / 2).yaw == pytest.approx(-math.pi / 2)

    @given(st.floats(-50.0, 50.0))
    @settings(max_examples=50, deadline=None)
    def test_wrap_angle_range(self, angle):
        wrapped = wrap_angle(angle)
        assert -math.pi <= wrapped < math.pi


class TestCorners:
    def test_unit_cube_identity(self):
        got = corners(Box3D([0, 0, 0], [1, 1, 1], 0.0))
        expected = {(sx * 0.5, sy * 0.5, sz * 0.5) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)}
        assert {tuple(np.round(c, 12)) for c in got} == expected

    def test_yaw_pi_permutes_vertices(self):
        base = corners(Box3D([0, 0, 0], [1, 1, 1], 0.0))
        rot = corners(Box3D([0, 0, 0], [1, 1, 1], math.pi))
        base_set = {tuple(np.round(c, 9)) for c in base}
        rot_set = {tuple(np.round(c, 9)) for c in rot}
        assert base_set == rot_set
        assert not np.allclose(base, rot)

    def test_rotated_box_matches_direct_rotation(self):
        box = Box3D([1, 2, 3], [2, 2, 2], math.pi / 2)
        got = corners(box)
        signs = np.array(
            [[1, 1, -1], [-1, 1, -1], [-1, -1, -1], [1, -1, -1],
             [1, 1, 1], [-1, 1, 1], [-1, -1, 1], [1, -1, 1]], dtype=float)
        expected = signs @ rotation_z(math.pi / 2).T + np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(got, expected, atol=1e-12)


def _halfspace_inside(points, box_corners, tol=1e-9):
    """Independent containment oracle from the 6 face planes of the corners."""
    faces = [(0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
    box_centroid = box_corners.mean(axis=0)
    inside = np.ones(len(points), dtype=bool)
    for f in faces:
        quad = box_corners[list(f)]
        normal = np.cross(quad[1] - quad[0], quad[3] - quad[0])
        normal /= np.linalg.norm(normal)
        face_centroid = quad.mean(axis=0)
        if np.dot(normal, face_centroid - box_centroid) < 0:
            normal = -normal
        inside &= (points - face_centroid) @ normal <= tol
    return inside


class TestMaskInBox:
    def test_center_inside(self):
        box = Box3D([1, 2, 3], [2, 1, 1], 0.3)
        assert mask_in_box(box.center.reshape(1, 3), box)[0]

    def test_far_exterior(self):
        box = Box3D([0, 0, 0], [1, 2, 1], 0.0)
        pt = box.center + np.array([10 * box.size[0], 0, 0])
        assert not mask_in_box(pt.reshape(1, 3), box)[0]

    def test_face_point_inclusive(self):
        box = Box3D([0, 0, 0], [2, 2, 2], 0.0)
        assert mask_in_box(np.array([[1.0, 0.0, 0.0]]), box)[0]

    def test_empty_cloud(self):
        box = Box3D([0, 0, 0], [1, 1, 1], 0.0)
        assert mask_in_box(np.zeros((0, 3)), box).shape == (0,)

    def test_agrees_with_halfspace_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            box = random_box(rng)
            pts = random_cloud(rng, 200, scale=4.0)
            got = mask_in_box(pts, box)
            want = _halfspace_inside(pts, corners(box))
            np.testing.assert_array_equal(got, want)


class TestIoU3D:
    def test_identical(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            box = random_box(rng)
            assert iou_3d(box, box) == pytest.approx(1.0, abs=1e-9)

    def test_disjoint(self):
        a = Box3D([0, 0, 0], [1, 1, 1], 0.4)
        b = Box3D([10, 0, 0], [1, 1, 1], -0.7)
        assert iou_3d(a, b) == 0.0

    def test_axis_aligned_third(self):
        a = Box3D([0, 0, 0], [1, 1, 1], 0.0)
        b = Box3D([0.5, 0, 0], [1, 1, 1], 0.0)
        assert iou_3d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            a, b = random_box(rng), random_box(rng)
            assert iou_3d(a, b) == pytest.approx(iou_3d(b, a), abs=1e-12)

    def test_yaw_equivariance(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            a, b = random_box(rng), random_box(rng)
            theta = rng.uniform(-np.pi, np.pi)
            pivot = rng.uniform(-2, 2, size=3)
            pivot[2] = 0.0
            rot = rotation_z(theta)

            def spin(box):
                center = rot @ (box.center - pivot) + pivot
                return Box3D(center, box.size, box.yaw + theta)

            assert iou_3d(spin(a), spin(b)) == pytest.approx(iou_3d(a, b), abs=1e-9)


class TestMonteCarloOracle:
    def test_identical_exact(self):
        box = Box3D([0.3, -0.2, 0.5], [1.5, 1.0, 2.0], 0.8)
        est, se = iou_mc_oracle(box, box, 10_000, seed=5)
        assert est == 1.0
        assert se == 0.0

    def test_disjoint_zero(self):
        a = Box3D([0, 0, 0], [1, 1, 1], 0.0)
        b = Box3D([5, 5, 0], [1, 1, 1], 1.0)
        est, _ = iou_mc_oracle(a, b, 10_000, seed=5)
        assert est == 0.0

    def test_third_within_bound(self):
        a = Box3D([0, 0, 0], [1, 1, 1], 0.0)
        b = Box3D([0.5, 0, 0], [1, 1, 1], 0.0)
        est, se = iou_mc_oracle(a, b, 1_000_000, seed=17)
        assert abs(est - 1.0 / 3.0) <= 3e-3
        assert se < 2e-3

    def test_agrees_with_analytic_on_random_pairs(self):
        rng = np.random.default_rng(29)
        for _ in range(20):
            a, b = random_box(rng), random_box(rng)
            est, _ = iou_mc_oracle(a, b, 200_000, seed=int(rng.integers(1 << 31)))
            assert abs(est - iou_3d(a, b)) <= 7e-3

    def test_rejects_zero_samples(self):
        box = Box3D([0, 0, 0], [1, 1, 1], 0.0)
        with pytest.raises(ValueError):
            iou_mc_oracle(box, box, 0)


class TestCenterDistance:
    def test_identical(self):
        box = Box3D([1, 1, 1], [1, 1, 1], 0.0)
        assert center_distance(box, box) == 0.0

    def test_three_four_five(self):
        a = Box3D([0, 0, 0], [1, 1, 1], 0.0)
        b = Box3D([3, 4, 0], [1, 1, 1], 0.0)
        assert center_distance(a, b) == 5.0

    def test_random_pairs_match_formula(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            a, b = random_box(rng), random_box(rng)
            expected = math.sqrt(float(((a.center - b.center) ** 2).sum()))
            assert center_distance(a, b) == pytest.approx(expected, rel=1e-15)
