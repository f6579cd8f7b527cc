import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch

from grasp_capture.contact.mesh import ContactMap, PointCloud, TriMesh
from grasp_capture.geom.camera import CameraIntrinsics, project
from grasp_capture.geom.so3 import random_rotation
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.hand.skeleton import HandParams
from grasp_capture.pipeline.io import EXCLUDED_TRANSIENT, CaptureResult, read_pose
from grasp_capture.sfm.observations import load_observations
from grasp_capture.synth.evaluate import evaluate, gauge_alignment
from grasp_capture.synth.scene import SceneConfig, generate_scene, write_dataset
from grasp_capture.utils.common import DTYPE

torch.manual_seed(42)
np.random.seed(42)


class TestScene(unittest.TestCase):
    def test_deterministic(self):
        cfg = SceneConfig(num_frames=12, transient=2, noise=1.0, dropout=0.1, cloud_noise=1e-4)
        a, b = generate_scene(4, cfg), generate_scene(4, cfg)
        torch.testing.assert_close(a.obs.uv, b.obs.uv, rtol=0, atol=0)
        torch.testing.assert_close(a.obs.confidence, b.obs.confidence, rtol=0, atol=0)
        torch.testing.assert_close(a.grasp_cloud.points, b.grasp_cloud.points, rtol=0, atol=0)
        torch.testing.assert_close(a.contact_map.values, b.contact_map.values, rtol=0, atol=0)
        self.assertEqual(a.as_result().dumps(), b.as_result().dumps())
        c = generate_scene(5, cfg)
        self.assertFalse(torch.equal(a.obs.uv, c.obs.uv))

    def test_noiseless_projections(self):
        scene = generate_scene(0, SceneConfig(num_frames=10))
        self.assertTrue(torch.equal(scene.obs.uv, scene.exact_uv))
        self.assertTrue((scene.obs.confidence == 1.0).all())
        for frame, camera in enumerate(scene.camera_poses):
            with self.subTest(frame=frame):
                uv = project(scene.joints, camera, scene.intrinsics)
                torch.testing.assert_close(uv, scene.obs.uv[frame], rtol=0, atol=1e-12)
        torch.testing.assert_close(scene.camera_poses[0].matrix(), torch.eye(4, dtype=DTYPE))

    def test_noise_level(self):
        scene = generate_scene(1, SceneConfig(num_frames=240, noise=1.0))
        errors = scene.obs.uv - scene.exact_uv
        self.assertLess(abs(errors.std().item() - 1.0), 0.1)
        self.assertTrue((scene.obs.confidence >= 0.1).all())

    def test_dropout(self):
        scene = generate_scene(2, SceneConfig(num_frames=40, dropout=0.2))
        dropped = scene.obs.confidence == 0
        self.assertLess(abs(dropped.double().mean().item() - 0.2), 0.05)
        self.assertTrue((scene.obs.uv[dropped] == 0).all())

    def test_transient(self):
        scene = generate_scene(3, SceneConfig(num_frames=12, transient=4))
        self.assertEqual(scene.camera_poses[:4], [None] * 4)
        self.assertEqual(scene.as_result().frame_status[:4], [EXCLUDED_TRANSIENT] * 4)
        torch.testing.assert_close(scene.camera_poses[4].matrix(), torch.eye(4, dtype=DTYPE))

    def test_grasp(self):
        scene = generate_scene(6, SceneConfig(num_frames=10))
        torch.testing.assert_close(
            scene.grasped_pose.matrix(), scene.adjustment.matrix() @ scene.object_pose_world.matrix()
        )
        self.assertTrue(scene.contact_map.contacted(0.5).any())
        self.assertGreater(len(scene.grasp_cloud), 100)
        self.assertLess(len(scene.grasp_cloud), len(scene.turntable_cloud))

    def test_config(self):
        with self.assertRaises(ValueError):
            SceneConfig(num_frames=5)
        with self.assertRaises(ValueError):
            SceneConfig(num_frames=10, transient=8)
        with self.assertRaises(ValueError):
            SceneConfig(object="mug")
        with self.assertRaises(ValueError):
            SceneConfig(dropout=1.0)


class TestDataset(unittest.TestCase):
    def test_files(self):
        scene = generate_scene(8, SceneConfig(num_frames=10, noise=0.5))
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            write_dataset(scene, root)
            intrinsics = CameraIntrinsics.from_file(root / "intrinsics.yaml")
            obs = load_observations(root / "keypoints", intrinsics)
            mesh = TriMesh.from_file(root / "mesh.obj")
            cmap = ContactMap.from_file(root / "contact_map.txt", mesh.num_vertices)
            turntable = PointCloud.from_file(root / "turntable.xyz")
            init = read_pose(root / "object_init.json")
            truth = CaptureResult.from_file(root / "ground_truth.json")

        torch.testing.assert_close(obs.uv, scene.obs.uv)
        torch.testing.assert_close(mesh.vertices, scene.mesh.vertices)
        torch.testing.assert_close(cmap.values, scene.contact_map.values)
        torch.testing.assert_close(turntable.points, scene.turntable_cloud.points)
        torch.testing.assert_close(init.matrix(), scene.object_init.matrix())
        self.assertEqual(truth.dumps(), scene.as_result().dumps())


class TestEvaluate(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.scene = generate_scene(9, SceneConfig(num_frames=12, transient=2))

    def test_truth(self):
        metrics = evaluate(self.scene.as_result(), self.scene)
        for key, value in metrics.items():
            with self.subTest(key=key):
                if key == "eval/contact_iou":
                    self.assertEqual(value, 1.0)
                elif key == "eval/registered_frames":
                    self.assertEqual(value, 10)
                else:
                    self.assertAlmostEqual(value, 0.0, places=12)

    def test_gauge_invariance(self):
        truth = self.scene.as_result()
        gauge = RigidTransform(
            random_rotation(torch.Generator().manual_seed(0)), torch.tensor([0.1, -0.2, 0.3], dtype=DTYPE)
        )
        moved = CaptureResult(
            hand=HandParams(gauge @ truth.hand.palm_pose, truth.hand.palm_scale, truth.hand.angles),
            object_pose_world=truth.object_pose_world,
            adjustment=truth.adjustment,
            camera_poses=[None if c is None else gauge @ c for c in truth.camera_poses],
            object_poses=truth.object_poses,
            palm_poses=truth.palm_poses,
            frame_status=truth.frame_status,
            joints=gauge.apply(truth.joints),
        )
        torch.testing.assert_close(
            gauge_alignment(moved.joints, truth.joints).matrix(), gauge.inverse().matrix(), rtol=0, atol=1e-9
        )
        metrics = evaluate(moved, self.scene)
        for key in ["joint_rmse", "palm_rot", "palm_trans", "camera_rot_max", "camera_trans_max"]:
            with self.subTest(key=key):
                self.assertLess(metrics[f"eval/{key}"], 1e-9)

    def test_frame_mismatch(self):
        other = generate_scene(9, SceneConfig(num_frames=10))
        with self.assertRaises(ValueError):
            evaluate(other.as_result(), self.scene)


if __name__ == "__main__":
    unittest.main()
