import math
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
import yaml

from grasp_capture.geom.so3 import random_rotation, rotation_exp
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.hand.kinematics import CHAIN, fk_jacobian, forward_kinematics
from grasp_capture.hand.skeleton import (
    DEFAULT_TEMPLATE,
    NUM_ANGLES,
    NUM_LANDMARKS,
    NUM_PARAMS,
    HandParams,
    HandSkeleton,
)
from grasp_capture.utils.common import DTYPE

torch.manual_seed(42)
np.random.seed(42)


def random_params(skeleton: HandSkeleton, seed: int, fraction: float = 1.0) -> HandParams:
    generator = torch.Generator().manual_seed(seed)
    pose = RigidTransform(random_rotation(generator), 0.3 * torch.randn(3, generator=generator, dtype=DTYPE))
    scale = 0.8 + 0.4 * torch.rand((), generator=generator, dtype=DTYPE).item()
    return HandParams(pose, scale, skeleton.random_angles(generator, fraction))


def homogeneous(rotation: torch.Tensor, translation: torch.Tensor) -> torch.Tensor:
    out = torch.eye(4, dtype=DTYPE)
    out[:3, :3] = rotation
    out[:3, 3] = translation
    return out


def brute_force_fk(skeleton: HandSkeleton, params: HandParams) -> torch.Tensor:
    """Landmarks by chaining 4x4 rotations about the rest pivots."""
    local = skeleton.rest.clone()
    for f, landmarks in enumerate(skeleton.finger_landmarks):
        chain = torch.eye(4, dtype=DTYPE)
        for k, (slot, pivot_slot) in enumerate(CHAIN):
            idx = 4 * f + slot
            pivot = skeleton.rest[landmarks[pivot_slot]]
            rotation = rotation_exp(skeleton.axes[idx] * params.angles[idx])
            chain = chain @ homogeneous(torch.eye(3, dtype=DTYPE), pivot)
            chain = chain @ homogeneous(rotation, torch.zeros(3, dtype=DTYPE))
            chain = chain @ homogeneous(torch.eye(3, dtype=DTYPE), -pivot)
            if k > 0:
                rest = torch.cat([skeleton.rest[landmarks[k]], torch.ones(1, dtype=DTYPE)])
                local[landmarks[k]] = (chain @ rest)[:3]
    palm = homogeneous(params.palm_pose.rotation, params.palm_pose.translation)
    scaled = torch.cat([params.palm_scale * local, torch.ones(NUM_LANDMARKS, 1, dtype=DTYPE)], dim=-1)
    return (scaled @ palm.T)[:, :3]


class TestSkeleton(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.skeleton = HandSkeleton.default()

    def test_template(self):
        skeleton = self.skeleton
        self.assertEqual(len(skeleton.names), NUM_LANDMARKS)
        torch.testing.assert_close(
            torch.linalg.vector_norm(skeleton.axes, dim=-1), torch.ones(NUM_ANGLES, dtype=DTYPE)
        )
        self.assertTrue((skeleton.lower <= 0).all() and (skeleton.upper >= 0).all())
        self.assertTrue((skeleton.bone_lengths() > 0).all())

    def test_invalid_template(self):
        with DEFAULT_TEMPLATE.open() as f:
            doc = yaml.safe_load(f)
        doc["fingers"][1]["limits"][0] = [10, 100]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "template.yaml"
            with path.open("w") as f:
                yaml.safe_dump(doc, f)
            with self.assertRaises(ValueError):
                HandSkeleton.from_file(path)

    def test_clamp(self):
        angles = torch.full((NUM_ANGLES,), 10.0, dtype=DTYPE)
        clamped = self.skeleton.clamp(angles)
        torch.testing.assert_close(clamped, self.skeleton.upper)
        self.assertTrue(self.skeleton.within_limits(clamped))
        self.assertFalse(self.skeleton.within_limits(angles))

    def test_capsules(self):
        pairs, radii = self.skeleton.capsules()
        self.assertEqual(tuple(pairs.shape), (21, 2))
        self.assertEqual(tuple(radii.shape), (21,))
        self.assertEqual(tuple(pairs[-1].tolist()), self.skeleton.palm_capsule)

    def test_random_angles(self):
        angles = self.skeleton.random_angles(torch.Generator().manual_seed(0), fraction=0.5)
        self.assertTrue(self.skeleton.within_limits(angles))

    def test_params(self):
        with self.assertRaises(ValueError):
            HandParams(RigidTransform.identity(), palm_scale=0.0)
        with self.assertRaises(ValueError):
            HandParams(RigidTransform.identity(), angles=torch.zeros(3, dtype=DTYPE))


class TestKinematics(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.skeleton = HandSkeleton.default()

    def test_rest_pose(self):
        joints = forward_kinematics(self.skeleton, HandParams.rest())
        torch.testing.assert_close(joints, self.skeleton.rest, rtol=0, atol=1e-15)

    def test_bone_lengths_preserved(self):
        for seed in range(10):
            with self.subTest(seed=seed):
                params = random_params(self.skeleton, seed)
                joints = forward_kinematics(self.skeleton, params)
                torch.testing.assert_close(
                    self.skeleton.bone_lengths(joints), params.palm_scale * self.skeleton.bone_lengths()
                )

    def test_brute_force(self):
        for seed in range(20):
            with self.subTest(seed=seed):
                params = random_params(self.skeleton, seed)
                torch.testing.assert_close(
                    forward_kinematics(self.skeleton, params),
                    brute_force_fk(self.skeleton, params),
                    rtol=0,
                    atol=1e-12,
                )

    def test_single_joint(self):
        # Flexing the index base by 90 degrees swings its tip into the palm normal direction
        angles = torch.zeros(NUM_ANGLES, dtype=DTYPE)
        angles[4] = math.pi / 2
        joints = forward_kinematics(self.skeleton, HandParams(RigidTransform.identity(), 1.0, angles))
        base, tip = self.skeleton.rest[5], self.skeleton.rest[8]
        expected = base + torch.tensor([0.0, 0.0, (tip - base)[1].item()], dtype=DTYPE)
        torch.testing.assert_close(joints[8], expected, rtol=0, atol=1e-12)
        torch.testing.assert_close(joints[:5], self.skeleton.rest[:5])

    def test_jacobian(self, num=50, eps=1e-6):
        for seed in range(num):
            params = random_params(self.skeleton, seed, fraction=0.9)
            jac = fk_jacobian(self.skeleton, params)
            fd = torch.zeros_like(jac)
            for i in range(NUM_PARAMS):
                step = torch.zeros(NUM_PARAMS, dtype=DTYPE)
                step[i] = eps
                plus = forward_kinematics(self.skeleton, params.retract(step))
                minus = forward_kinematics(self.skeleton, params.retract(-step))
                fd[:, i] = ((plus - minus) / (2 * eps)).reshape(-1)
            error = torch.linalg.matrix_norm(jac - fd) / torch.linalg.matrix_norm(fd)
            with self.subTest(seed=seed):
                self.assertLess(error.item(), 1e-4)

    def test_retract_clamps(self):
        params = HandParams.rest()
        step = torch.zeros(NUM_PARAMS, dtype=DTYPE)
        step[6:] = 100.0
        self.assertTrue(self.skeleton.within_limits(params.retract(step, self.skeleton).angles))
        self.assertFalse(self.skeleton.within_limits(params.retract(step).angles))

    def test_replace_rest(self):
        skeleton = replace(self.skeleton, rest=2.0 * self.skeleton.rest)
        joints = forward_kinematics(skeleton, HandParams.rest())
        torch.testing.assert_close(joints, 2.0 * self.skeleton.rest)


if __name__ == "__main__":
    unittest.main()
